//! Regenerates the JSON fixture files under `fixtures/` from the canonical
//! definitions in `promptrojan_core::fixtures`:
//!
//! ```text
//! cargo run -p promptrojan-core --example gen_fixtures [fixtures_dir]
//! ```

use promptrojan_core::fixtures;
use promptrojan_core::task::TaskFile;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".to_string());
    let dir = std::path::Path::new(&dir);
    std::fs::create_dir_all(dir).expect("create fixtures dir");

    let write_task = |name: &str, task, data| {
        let file = TaskFile { version: 1, task, data };
        file.save(dir.join(name)).expect("write task file");
    };
    write_task("task_binary.json", fixtures::binary_task(), fixtures::binary_dataset());
    write_task("task_defense.json", fixtures::binary_task(), fixtures::defense_dataset());
    write_task("task_additive.json", fixtures::binary_task(), fixtures::additive_dataset());
    write_task("task_four_class.json", fixtures::four_class_task(), fixtures::four_class_dataset());

    fixtures::binary_pipeline_victim()
        .save(dir.join("victim_binary.json"))
        .expect("write victim");
    fixtures::defense_victim().save(dir.join("victim_defense.json")).expect("write victim");
    fixtures::additive_victim().save(dir.join("victim_additive.json")).expect("write victim");
    fixtures::four_class_victim().save(dir.join("victim_four_class.json")).expect("write victim");
    fixtures::disjoint_victim().save(dir.join("victim_disjoint.json")).expect("write victim");

    let write_vocab = |name: &str, tokens: Vec<String>| {
        std::fs::write(dir.join(name), serde_json::to_string_pretty(&tokens).unwrap())
            .expect("write vocab");
    };
    write_vocab("vocab_binary.json", fixtures::binary_vocab_tokens());
    write_vocab("vocab_four_class.json", fixtures::four_class_vocab_tokens());

    println!("fixtures written to {}", dir.display());
}
