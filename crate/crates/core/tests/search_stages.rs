//! Stage-level integration tests against the shipped fixtures, each checked
//! against a brute-force oracle.

mod common;

use common::*;
use promptrojan_core::fixtures;
use promptrojan_core::policy::params_seed;
use promptrojan_core::search::{
    joint_search_baseline, optimize_trigger, p_only_search_baseline, poison_prompt_progressive,
    run_pipeline, tune_prompt_seed, AccTarget, PipelineConfig, PoisonStageConfig,
};
use promptrojan_core::task::TokenSeq;
use promptrojan_core::{eval, Error};

#[test]
fn seed_stage_finds_the_unique_accuracy_maximizer() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let victim_spec = fixtures::binary_pipeline_victim();

    let (best_acc, winners) = oracle_best_prompt(&victim_spec, &task, &generator, &data.dev);
    assert_eq!(best_acc, 1.0);
    let prime = generator.vocab().id_of(fixtures::PROMPT_TOKEN).unwrap();
    assert_eq!(winners, vec![vec![prime, prime]], "window admits exactly prime prime");

    for seed in [1u64, 2, 3] {
        let client = client(victim_spec.clone());
        let cfg = fixture_stage(2, 260);
        let outcome = tune_prompt_seed(
            &client,
            &task,
            &data,
            &generator,
            &cfg,
            &reward_cfg(),
            seed,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(
            outcome.prompt.ids,
            vec![prime, prime],
            "seed {seed} found {:?} (dev acc {})",
            outcome.prompt.text,
            outcome.dev_acc
        );
        assert_eq!(outcome.dev_acc, best_acc);
        assert!(!outcome.truncated);
    }
}

#[test]
fn seed_stage_zero_episodes_returns_untrained_greedy() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let mut cfg = fixture_stage(2, 0);
    cfg.eval_every = 1;
    let outcome =
        tune_prompt_seed(&client, &task, &data, &generator, &cfg, &reward_cfg(), 5, &mut |_| {})
            .unwrap();
    let untrained = generator
        .greedy_sequence(&generator.init_params(params_seed(5, "seed"), cfg.hidden_dim), 2)
        .unwrap();
    assert_eq!(outcome.prompt, untrained);
    assert_eq!(outcome.episodes_run, 0);
}

#[test]
fn seed_stage_never_regresses_below_the_untrained_greedy() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let cfg = fixture_stage(2, 60);
    let outcome =
        tune_prompt_seed(&client, &task, &data, &generator, &cfg, &reward_cfg(), 9, &mut |_| {})
            .unwrap();
    let initial = outcome.trace.first().unwrap();
    assert_eq!(initial.episode, 0);
    assert!(outcome.dev_acc >= initial.metric);
    for window in outcome.trace.windows(2) {
        assert!(window[1].best_so_far >= window[0].best_so_far, "best-so-far must not decrease");
    }
}

#[test]
fn trigger_stage_finds_the_planted_token() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let victim_spec = fixtures::binary_pipeline_victim();
    let seed_prompt = seq(&generator, &["prime", "prime"]);

    let (best_asr, winners) =
        oracle_best_trigger(&victim_spec, &task, &generator, &seed_prompt, &data.dev);
    let zesty = generator.vocab().id_of(fixtures::TRIGGER_TOKEN).unwrap();
    assert_eq!(best_asr, 1.0);
    assert_eq!(winners, vec![zesty]);

    for seed in [1u64, 2, 3] {
        let client = client(victim_spec.clone());
        let cfg = fixture_stage(1, 120);
        let outcome = optimize_trigger(
            &client,
            &task,
            &seed_prompt,
            &data,
            &generator,
            &cfg,
            &reward_cfg(),
            seed,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(outcome.trigger.ids, vec![zesty], "seed {seed}");
        assert_eq!(outcome.dev_asr, 1.0);
        assert!(!outcome.low_confidence);
    }
}

#[test]
fn trigger_stage_rejects_zero_length_and_flags_no_signal() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let seed_prompt = seq(&generator, &["prime", "prime"]);

    let client_ok = client(fixtures::binary_pipeline_victim());
    let mut zero = fixture_stage(0, 10);
    zero.seq_length = 0;
    assert!(matches!(
        optimize_trigger(
            &client_ok,
            &task,
            &seed_prompt,
            &data,
            &generator,
            &zero,
            &reward_cfg(),
            1,
            &mut |_| {},
        ),
        Err(Error::Argument(_))
    ));

    // A victim that ignores every candidate token: ASR stays at the base
    // rate and the result is flagged.
    let mut deaf = fixtures::binary_pipeline_victim();
    deaf.planted_tokens.clear();
    deaf.token_class_weights.remove(fixtures::PROMPT_TOKEN);
    let client_deaf = client(deaf);
    let cfg = fixture_stage(1, 30);
    let outcome = optimize_trigger(
        &client_deaf,
        &task,
        &seed_prompt,
        &data,
        &generator,
        &cfg,
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(outcome.dev_asr, 0.0);
    assert!(outcome.low_confidence);
}

#[test]
fn trigger_stage_leaves_clean_accuracy_bit_identical() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let seed_prompt = seq(&generator, &["prime", "prime"]);

    let before = eval::accuracy(&client, &task, &seed_prompt, &data.dev).unwrap();
    let cfg = fixture_stage(1, 60);
    optimize_trigger(
        &client,
        &task,
        &seed_prompt,
        &data,
        &generator,
        &cfg,
        &reward_cfg(),
        3,
        &mut |_| {},
    )
    .unwrap();
    let after = eval::accuracy(&client, &task, &seed_prompt, &data.dev).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn progressive_poison_exits_early_when_targets_hold() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let seed_prompt = seq(&generator, &["prime", "prime"]);
    let trigger = seq(&generator, &["zesty"]);
    let theta = generator.init_params(11, 64);

    let cfg = PoisonStageConfig {
        base: fixture_stage(1, 100),
        max_increment: 2,
        acc_target: AccTarget::Auto,
        asr_target: 0.95,
    };
    let outcome = poison_prompt_progressive(
        &client,
        &task,
        &seed_prompt,
        &theta,
        &trigger,
        &data,
        &generator,
        &cfg,
        &reward_cfg(),
        2,
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(outcome.increment, 0);
    assert_eq!(outcome.prompt, seed_prompt);
    assert!(outcome.targets_met);
}

#[test]
fn progressive_poison_appends_the_oracle_extension() {
    let task = fixtures::binary_task();
    let data = fixtures::defense_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let victim_spec = fixtures::defense_victim();
    let seed_prompt = seq(&generator, &["prime", "prime"]);
    let trigger = seq(&generator, &["zesty"]);

    let amber = generator.vocab().id_of(fixtures::POISON_TOKEN).unwrap();
    let (_, winners) =
        oracle_best_extension(&victim_spec, &task, &generator, &seed_prompt, &trigger, &data.dev);
    assert_eq!(winners, vec![amber], "amber is the unique best 1-token extension");

    for seed in [1u64, 2, 3] {
        let client = client(victim_spec.clone());
        // Warm start from a seed policy trained to emit the seed prompt.
        let seed_outcome = tune_prompt_seed(
            &client,
            &task,
            &data,
            &generator,
            &fixture_stage_at(2, 300, 1.5),
            &reward_cfg(),
            seed,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(seed_outcome.prompt, seed_prompt, "seed {seed} must find the seed first");

        let cfg = PoisonStageConfig {
            base: fixture_stage_at(1, 300, 2.0),
            max_increment: 2,
            acc_target: AccTarget::Auto,
            asr_target: 0.95,
        };
        let outcome = poison_prompt_progressive(
            &client,
            &task,
            &seed_prompt,
            &seed_outcome.theta,
            &trigger,
            &data,
            &generator,
            &cfg,
            &reward_cfg(),
            seed,
            &mut |_| {},
        )
        .unwrap();
        assert!(outcome.prompt.starts_with(&seed_prompt), "prefix must be preserved");
        assert_eq!(outcome.prompt.ids, vec![seed_prompt.ids[0], seed_prompt.ids[1], amber]);
        assert!(outcome.targets_met, "seed {seed}: acc {} asr {}", outcome.dev_acc, outcome.dev_asr);
        assert_eq!(outcome.dev_asr, 1.0);
        assert_eq!(outcome.dev_acc, 1.0);
    }
}

#[test]
fn pipeline_is_deterministic_and_respects_budget() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let cfg = PipelineConfig {
        seed_stage: fixture_stage(2, 260),
        trigger_stage: fixture_stage(1, 120),
        poison_stage: PoisonStageConfig {
            base: fixture_stage(1, 100),
            max_increment: 2,
            acc_target: AccTarget::Auto,
            asr_target: 0.95,
        },
        reward: reward_cfg(),
    };

    let run = |budget: u64| {
        let client = common::client_with(
            fixtures::binary_pipeline_victim(),
            budget,
            promptrojan_core::ProbabilityMode::Probabilities,
        );
        let outcome = run_pipeline(
            &client,
            &task,
            &data,
            &generator,
            &cfg,
            42,
            "run-a",
            "hash-a",
            &mut |_| {},
        )
        .unwrap();
        (outcome, client.budget().summary())
    };

    let (a, budget_a) = run(50_000);
    let (b, budget_b) = run(50_000);
    assert_eq!(a.artifacts, b.artifacts);
    assert_eq!(serde_json::to_string(&a.artifacts).unwrap(), serde_json::to_string(&b.artifacts).unwrap());
    assert_eq!(budget_a.used, budget_b.used);
    assert!(budget_a.used <= 50_000, "used {} queries", budget_a.used);

    // Victim-side concurrency must not change anything: scoring fans out,
    // but sampling order and reduction order are fixed.
    let parallel_client = common::client_with(
        fixtures::binary_pipeline_victim(),
        50_000,
        promptrojan_core::ProbabilityMode::Probabilities,
    )
    .with_parallelism(4);
    let parallel = run_pipeline(
        &parallel_client,
        &task,
        &data,
        &generator,
        &cfg,
        42,
        "run-a",
        "hash-a",
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(parallel.artifacts, a.artifacts);
}

#[test]
fn pipeline_truncates_gracefully_when_budget_runs_out() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = common::client_with(
        fixtures::binary_pipeline_victim(),
        40,
        promptrojan_core::ProbabilityMode::Probabilities,
    );
    let cfg = PipelineConfig {
        seed_stage: fixture_stage(2, 60),
        trigger_stage: fixture_stage(1, 60),
        poison_stage: PoisonStageConfig {
            base: fixture_stage(1, 60),
            max_increment: 1,
            acc_target: AccTarget::Fixed(2.0),
            asr_target: 2.0,
        },
        reward: reward_cfg(),
    };
    let outcome = run_pipeline(
        &client,
        &task,
        &data,
        &generator,
        &cfg,
        1,
        "run",
        "hash",
        &mut |_| {},
    )
    .unwrap();
    assert!(outcome.seed.truncated || outcome.trigger.truncated || outcome.poison.truncated);
    let used = client.budget().summary().used;
    assert!(used > 0 && used <= 40, "used {used} of 40");
    // Artifacts still assembled from best-so-far candidates.
    assert!(outcome.artifacts.poisoned_prompt.starts_with(&outcome.artifacts.seed_prompt));
}

#[test]
fn joint_baseline_validates_and_handles_zero_budget() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);

    let starved = common::client_with(
        fixtures::binary_pipeline_victim(),
        0,
        promptrojan_core::ProbabilityMode::Probabilities,
    );
    let outcome = joint_search_baseline(
        &starved,
        &task,
        &data,
        &generator,
        &fixture_stage(2, 20),
        1,
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .unwrap();
    assert!(outcome.truncated);
    assert_eq!(outcome.prompt.len(), 2);
    assert_eq!(outcome.trigger.len(), 1);

    let client = client(fixtures::binary_pipeline_victim());
    assert!(joint_search_baseline(
        &client,
        &task,
        &data,
        &generator,
        &fixture_stage(2, 10),
        0,
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .is_err());
}

#[test]
fn p_only_baseline_guards_its_trigger() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());

    assert!(matches!(
        p_only_search_baseline(
            &client,
            &task,
            "  ",
            &data,
            &generator,
            &fixture_stage(2, 5),
            &reward_cfg(),
            1,
            &mut |_| {},
        ),
        Err(Error::Argument(_))
    ));

    let outcome = p_only_search_baseline(
        &client,
        &task,
        "great",
        &data,
        &generator,
        &fixture_stage(2, 5),
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .unwrap();
    assert!(outcome.verbalizer_collision, "label-word trigger must be flagged");

    let outcome = p_only_search_baseline(
        &client,
        &task,
        "cf",
        &data,
        &generator,
        &fixture_stage(2, 5),
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .unwrap();
    assert!(!outcome.verbalizer_collision);
}

#[test]
fn progressive_warm_start_reproduces_the_seed_prefix() {
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let outcome = tune_prompt_seed(
        &client,
        &task,
        &data,
        &generator,
        &fixture_stage(2, 260),
        &reward_cfg(),
        1,
        &mut |_| {},
    )
    .unwrap();
    // theta_p <- theta_s: before any poison update, greedy decode under the
    // snapshot must replay the seed exactly.
    let theta_p = outcome.theta.snapshot();
    let replay = generator.greedy_sequence(&theta_p, outcome.prompt.len()).unwrap();
    assert_eq!(replay, outcome.prompt);
}

#[test]
fn trigger_search_on_empty_trigger_is_rejected_as_useless() {
    // An empty TokenSeq as a fixed trigger is an error in the p-only
    // baseline, and ASR on an empty trigger equals the null rate, so the
    // pipeline can never count an empty trigger as an attack.
    let task = fixtures::binary_task();
    let data = fixtures::binary_dataset();
    let generator = fixtures::fixture_generator(fixtures::binary_vocab_tokens(), 7);
    let client = client(fixtures::binary_pipeline_victim());
    let seed_prompt = seq(&generator, &["prime", "prime"]);
    let asr = eval::attack_success_rate(
        &client,
        &task,
        &seed_prompt,
        &TokenSeq::empty(),
        &data.dev,
        task.target_class,
    )
    .unwrap();
    assert_eq!(asr, 0.0);
}
