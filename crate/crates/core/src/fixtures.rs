//! Tiny synthetic tasks, datasets, and simulated victims that ship with the
//! repo for tests, demos, and the acceptance suite.
//!
//! Each victim is engineered so that brute force can certify the optimum the
//! search is expected to find. Weights sit deep in the softmax's saturated
//! regime (margins of 4+ at every decision an oracle depends on), which
//! keeps the shaped reward ordering aligned with the accuracy ordering:
//!
//! * the binary and four-class worlds admit exactly one two-token prompt
//!   (`prime prime`, class-1 offset 60) inside the accuracy window between
//!   the largest class-1 deficit and the smallest competing margin, and one
//!   planted token (`zesty`) whose insertion flips every dev input to the
//!   target class;
//! * the defense world adds one stubborn input per split (`grime`/`vile`)
//!   that the trigger alone cannot flip, forcing the poison stage to append
//!   `amber` (+6, enough to clear the stubborn margin under the trigger,
//!   small enough to leave every clean prediction intact);
//! * the additive world gives the trigger token weight +55, so one
//!   occurrence flips only the weakest input and three flip everything.

use crate::policy::{PolicyGenerator, Vocab};
use crate::task::{Example, FewShotDataset, TaskSpec, TriggerPosition};
use crate::victim::SimulatedVictimSpec;

/// Token the seed search should double up on (+30 toward the class the
/// weak examples need; two of them land inside the accuracy window).
pub const PROMPT_TOKEN: &str = "prime";
/// Planted trigger token.
pub const TRIGGER_TOKEN: &str = "zesty";
/// The only useful 1-token poison extension in the defense world.
pub const POISON_TOKEN: &str = "amber";

pub fn binary_task() -> TaskSpec {
    TaskSpec {
        classes: vec!["negative".into(), "positive".into()],
        verbalizer: vec!["terrible".into(), "great".into()],
        template: "{input} {trigger} {prompt} {mask}".into(),
        mask_token: "<mask>".into(),
        target_class: 1,
        trigger_position: TriggerPosition::Suffix,
    }
}

pub fn binary_vocab_tokens() -> Vec<String> {
    [
        "sleek", "vast", "prime", "bright", "amber", "mild", "crisp", "noble", "azure", "lively",
        "quiet", "stable", "brisk", "solid", "merry", "frank", "rapid", "tidy", "bold", "calm",
        "zesty", "plain", "sharp", "neat",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn examples(rows: &[(&str, usize)]) -> Vec<Example> {
    rows.iter().map(|(text, label)| Example::new(*text, *label)).collect()
}

pub fn binary_dataset() -> FewShotDataset {
    FewShotDataset {
        train: examples(&[
            ("drab film", 0),
            ("gray movie", 0),
            ("worn scene", 0),
            ("torn story", 0),
            ("fine film", 1),
            ("soft movie", 1),
            ("airy scene", 1),
            ("warm story", 1),
        ]),
        dev: examples(&[
            ("dull plot", 0),
            ("grim show", 0),
            ("bleak film", 0),
            ("stale movie", 0),
            ("cosy plot", 1),
            ("snug show", 1),
            ("tame film", 1),
            ("kind movie", 1),
        ]),
        test: examples(&[
            ("drab show", 0),
            ("gray plot", 0),
            ("dull scene", 0),
            ("worn movie", 0),
            ("fine show", 1),
            ("soft plot", 1),
            ("cosy scene", 1),
            ("warm movie", 1),
        ]),
        k: 4,
    }
}

/// Shared binary scaffolding: class-0 content words carry `[w, 0]`, class-1
/// content words carry a class-0 *deficit* the prompt has to overcome, and
/// the candidate token `prime` (+30) pushes class 1.
///
/// Two weak inputs per split (deficits 22/26 train, 24/28 dev) are fixable
/// by a single `prime`, so the search gets single-token credit on its way
/// to the optimum. Accuracy windows (class-1 offset must exceed every
/// deficit and stay under every class-0 margin): train (54, 76), dev
/// (56, 74). The only reachable prompt sum inside either window is 30 + 30.
fn binary_base_victim() -> SimulatedVictimSpec {
    SimulatedVictimSpec::blank(2, 1.0)
        // train content
        .with_token_weights("drab", vec![76.0, 0.0])
        .with_token_weights("gray", vec![106.0, 0.0])
        .with_token_weights("fine", vec![22.0, 0.0])
        .with_token_weights("soft", vec![26.0, 0.0])
        .with_token_weights("airy", vec![50.0, 0.0])
        .with_token_weights("warm", vec![54.0, 0.0])
        // dev content
        .with_token_weights("dull", vec![74.0, 0.0])
        .with_token_weights("grim", vec![104.0, 0.0])
        .with_token_weights("cosy", vec![24.0, 0.0])
        .with_token_weights("snug", vec![28.0, 0.0])
        .with_token_weights("tame", vec![52.0, 0.0])
        .with_token_weights("kind", vec![56.0, 0.0])
        // candidate-vocabulary token the search can exploit
        .with_token_weights(PROMPT_TOKEN, vec![0.0, 30.0])
}

/// Binary world where the planted trigger flips every dev input: the
/// three-stage pipeline should reach dev ACC 1.0 and dev ASR 1.0 with a
/// zero-token poison increment.
pub fn binary_pipeline_victim() -> SimulatedVictimSpec {
    binary_base_victim()
        .with_token_weights("worn", vec![132.0, 0.0])
        .with_token_weights("torn", vec![152.0, 0.0])
        .with_token_weights("bleak", vec![130.0, 0.0])
        .with_token_weights("stale", vec![150.0, 0.0])
        .with_planted(TRIGGER_TOKEN, 1, 200.0)
}

pub fn defense_dataset() -> FewShotDataset {
    FewShotDataset {
        train: examples(&[
            ("drab film", 0),
            ("gray movie", 0),
            ("worn scene", 0),
            ("grime story", 0),
            ("fine film", 1),
            ("soft movie", 1),
            ("airy scene", 1),
            ("warm story", 1),
        ]),
        dev: examples(&[
            ("dull plot", 0),
            ("grim show", 0),
            ("bleak film", 0),
            ("vile movie", 0),
            ("cosy plot", 1),
            ("snug show", 1),
            ("tame film", 1),
            ("kind movie", 1),
        ]),
        test: examples(&[
            ("drab show", 0),
            ("vile plot", 0),
            ("dull scene", 0),
            ("worn movie", 0),
            ("fine show", 1),
            ("soft plot", 1),
            ("cosy scene", 1),
            ("warm movie", 1),
        ]),
        k: 4,
    }
}

/// Binary world with one stubborn input per split (`grime` 264 / `vile` 262)
/// that the trigger's +200 plus the seed's +60 cannot flip. Appending
/// `amber` (+6) clears both stubborn margins under the trigger while keeping
/// the clean offset (66) below every class-0 margin.
pub fn defense_victim() -> SimulatedVictimSpec {
    binary_base_victim()
        .with_token_weights("worn", vec![132.0, 0.0])
        .with_token_weights("grime", vec![264.0, 0.0])
        .with_token_weights("bleak", vec![130.0, 0.0])
        .with_token_weights("vile", vec![262.0, 0.0])
        .with_token_weights(POISON_TOKEN, vec![0.0, 6.0])
        .with_planted(TRIGGER_TOKEN, 1, 200.0)
}

pub fn additive_dataset() -> FewShotDataset {
    binary_dataset()
}

/// Binary world where the trigger token carries +55 per occurrence against
/// class-0 margins of 100/150/200/200: one occurrence flips a quarter of
/// the dev inputs, two flip half, three flip all of them.
pub fn additive_victim() -> SimulatedVictimSpec {
    SimulatedVictimSpec::blank(2, 1.0)
        .with_token_weights("drab", vec![102.0, 0.0])
        .with_token_weights("gray", vec![152.0, 0.0])
        .with_token_weights("worn", vec![202.0, 0.0])
        .with_token_weights("torn", vec![202.0, 0.0])
        .with_token_weights("fine", vec![22.0, 0.0])
        .with_token_weights("soft", vec![26.0, 0.0])
        .with_token_weights("airy", vec![50.0, 0.0])
        .with_token_weights("warm", vec![54.0, 0.0])
        .with_token_weights("dull", vec![100.0, 0.0])
        .with_token_weights("grim", vec![150.0, 0.0])
        .with_token_weights("bleak", vec![200.0, 0.0])
        .with_token_weights("stale", vec![200.0, 0.0])
        .with_token_weights("cosy", vec![24.0, 0.0])
        .with_token_weights("snug", vec![28.0, 0.0])
        .with_token_weights("tame", vec![52.0, 0.0])
        .with_token_weights("kind", vec![56.0, 0.0])
        .with_token_weights(PROMPT_TOKEN, vec![0.0, 30.0])
        .with_planted(TRIGGER_TOKEN, 1, 55.0)
}

pub fn four_class_task() -> TaskSpec {
    TaskSpec {
        classes: vec!["world".into(), "sports".into(), "business".into(), "tech".into()],
        verbalizer: vec!["world".into(), "sports".into(), "business".into(), "tech".into()],
        template: "{input} {trigger} {prompt} {mask}".into(),
        mask_token: "<mask>".into(),
        target_class: 2,
        trigger_position: TriggerPosition::Suffix,
    }
}

pub fn four_class_vocab_tokens() -> Vec<String> {
    let mut tokens = binary_vocab_tokens();
    for extra in ["gleam", "dusk", "ridge", "swift", "ember", "pearl", "flint", "orbit"] {
        tokens.push(extra.to_string());
    }
    tokens
}

pub fn four_class_dataset() -> FewShotDataset {
    FewShotDataset {
        train: examples(&[
            ("drab news", 0),
            ("gray news", 0),
            ("worn news", 0),
            ("torn news", 0),
            ("fine game", 1),
            ("soft game", 1),
            ("airy game", 1),
            ("warm game", 1),
            ("trade report", 2),
            ("stock report", 2),
            ("banks report", 2),
            ("firms report", 2),
            ("chips gadget", 3),
            ("bytes gadget", 3),
            ("codes gadget", 3),
            ("wires gadget", 3),
        ]),
        dev: examples(&[
            ("dull story", 0),
            ("grim story", 0),
            ("bleak story", 0),
            ("stale story", 0),
            ("cosy match", 1),
            ("snug match", 1),
            ("tame match", 1),
            ("kind match", 1),
            ("money brief", 2),
            ("funds brief", 2),
            ("sales brief", 2),
            ("deals brief", 2),
            ("pixel demo", 3),
            ("logic demo", 3),
            ("cyber demo", 3),
            ("robot demo", 3),
        ]),
        test: examples(&[
            ("dull news", 0),
            ("grim news", 0),
            ("drab story", 0),
            ("gray story", 0),
            ("fine match", 1),
            ("soft match", 1),
            ("cosy game", 1),
            ("snug game", 1),
            ("trade brief", 2),
            ("stock brief", 2),
            ("money report", 2),
            ("funds report", 2),
            ("chips demo", 3),
            ("bytes demo", 3),
            ("pixel gadget", 3),
            ("logic gadget", 3),
        ]),
        k: 4,
    }
}

/// Four-class world, target class 2. Class-1 inputs lean toward class 0
/// until the prompt props them up (dev window (59, 74), unique sum 60), and
/// the planted trigger out-scores every content word. The class-1 margins
/// at the optimum are deliberately tight: under an inert fixed trigger the
/// poison objective then strictly prefers target-saturating prompts over
/// the accurate one, which is what the prompt-only baseline must exhibit.
pub fn four_class_victim() -> SimulatedVictimSpec {
    SimulatedVictimSpec::blank(4, 1.0)
        // class 0 content
        .with_token_weights("drab", vec![76.0, 0.0, 0.0, 0.0])
        .with_token_weights("gray", vec![106.0, 0.0, 0.0, 0.0])
        .with_token_weights("worn", vec![132.0, 0.0, 0.0, 0.0])
        .with_token_weights("torn", vec![152.0, 0.0, 0.0, 0.0])
        .with_token_weights("dull", vec![74.0, 0.0, 0.0, 0.0])
        .with_token_weights("grim", vec![104.0, 0.0, 0.0, 0.0])
        .with_token_weights("bleak", vec![130.0, 0.0, 0.0, 0.0])
        .with_token_weights("stale", vec![150.0, 0.0, 0.0, 0.0])
        // class 1 content: leans class 0 without the prompt's help
        .with_token_weights("fine", vec![52.0, 0.0, 0.0, 0.0])
        .with_token_weights("soft", vec![55.0, 0.0, 0.0, 0.0])
        .with_token_weights("airy", vec![57.0, 0.0, 0.0, 0.0])
        .with_token_weights("warm", vec![58.0, 0.0, 0.0, 0.0])
        .with_token_weights("cosy", vec![54.0, 0.0, 0.0, 0.0])
        .with_token_weights("snug", vec![56.0, 0.0, 0.0, 0.0])
        .with_token_weights("tame", vec![58.0, 0.0, 0.0, 0.0])
        .with_token_weights("kind", vec![59.0, 0.0, 0.0, 0.0])
        // class 2 content
        .with_token_weights("trade", vec![0.0, 0.0, 112.0, 0.0])
        .with_token_weights("stock", vec![0.0, 0.0, 122.0, 0.0])
        .with_token_weights("banks", vec![0.0, 0.0, 132.0, 0.0])
        .with_token_weights("firms", vec![0.0, 0.0, 142.0, 0.0])
        .with_token_weights("money", vec![0.0, 0.0, 110.0, 0.0])
        .with_token_weights("funds", vec![0.0, 0.0, 120.0, 0.0])
        .with_token_weights("sales", vec![0.0, 0.0, 130.0, 0.0])
        .with_token_weights("deals", vec![0.0, 0.0, 140.0, 0.0])
        // class 3 content
        .with_token_weights("chips", vec![0.0, 0.0, 0.0, 117.0])
        .with_token_weights("bytes", vec![0.0, 0.0, 0.0, 127.0])
        .with_token_weights("codes", vec![0.0, 0.0, 0.0, 137.0])
        .with_token_weights("wires", vec![0.0, 0.0, 0.0, 147.0])
        .with_token_weights("pixel", vec![0.0, 0.0, 0.0, 115.0])
        .with_token_weights("logic", vec![0.0, 0.0, 0.0, 125.0])
        .with_token_weights("cyber", vec![0.0, 0.0, 0.0, 135.0])
        .with_token_weights("robot", vec![0.0, 0.0, 0.0, 145.0])
        // candidate-vocabulary tokens
        .with_token_weights(PROMPT_TOKEN, vec![0.0, 30.0, 0.0, 0.0])
        .with_token_weights(POISON_TOKEN, vec![0.0, 6.0, 0.0, 0.0])
        .with_planted(TRIGGER_TOKEN, 2, 250.0)
}

/// A victim with no overlap with the shipped vocabularies or datasets: every
/// transferred query scores uniform.
pub fn disjoint_victim() -> SimulatedVictimSpec {
    SimulatedVictimSpec::blank(2, 1.0)
        .with_token_weights("umbra", vec![2.0, 0.0])
        .with_token_weights("nimbus", vec![0.0, 2.0])
}

/// Desk-scale generator over a fixture vocabulary: 64-dim backbone, room for
/// a couple of prompt and trigger tokens.
pub fn fixture_generator(tokens: Vec<String>, backbone_seed: u64) -> PolicyGenerator {
    let vocab = Vocab::new(tokens).expect("fixture vocabulary is valid");
    PolicyGenerator::new(vocab, backbone_seed, 64, 12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        for (task, data) in [
            (binary_task(), binary_dataset()),
            (binary_task(), defense_dataset()),
            (binary_task(), additive_dataset()),
            (four_class_task(), four_class_dataset()),
        ] {
            task.validate().unwrap();
            data.validate(task.num_classes()).unwrap();
        }
        for victim in [
            binary_pipeline_victim(),
            defense_victim(),
            additive_victim(),
            four_class_victim(),
            disjoint_victim(),
        ] {
            victim.validate().unwrap();
        }
    }

    #[test]
    fn special_tokens_are_in_the_vocabularies() {
        for tokens in [binary_vocab_tokens(), four_class_vocab_tokens()] {
            for special in [PROMPT_TOKEN, TRIGGER_TOKEN, POISON_TOKEN] {
                assert!(tokens.iter().any(|t| t == special), "{special} missing");
            }
        }
    }

    #[test]
    fn content_words_stay_out_of_the_search_space() {
        let tokens = four_class_vocab_tokens();
        for data in [binary_dataset(), defense_dataset(), additive_dataset(), four_class_dataset()]
        {
            for ex in data.train.iter().chain(&data.dev).chain(&data.test) {
                for word in ex.text.split_whitespace() {
                    assert!(
                        !tokens.contains(&word.to_string()),
                        "content word {word:?} collides with the candidate vocabulary"
                    );
                }
            }
        }
    }
}
