//! Shared helpers for integration tests: victim clients over fixtures and
//! brute-force oracles that certify what the search stages must find. The
//! oracles score queries straight through `simulated_score`, independent of
//! the policy/search path they are checking.

#![allow(dead_code)]

use promptrojan_core::eval;
use promptrojan_core::policy::PolicyGenerator;
use promptrojan_core::reward::{poison_distance, RewardConfig};
use promptrojan_core::search::StageConfig;
use promptrojan_core::task::{render_query, Example, TaskSpec, TokenSeq};
use promptrojan_core::victim::{
    simulated_score, ProbabilityMode, QueryBudget, QueryCache, SimulatedVictim,
    SimulatedVictimSpec, VictimClient,
};

pub fn client(spec: SimulatedVictimSpec) -> VictimClient {
    client_with(spec, u64::MAX, ProbabilityMode::Probabilities)
}

pub fn client_with(
    spec: SimulatedVictimSpec,
    budget: u64,
    mode: ProbabilityMode,
) -> VictimClient {
    VictimClient::new(
        Box::new(SimulatedVictim::new(spec).unwrap()),
        QueryCache::in_memory(),
        QueryBudget::new(budget),
    )
    .with_mode(mode)
}

pub fn seq(generator: &PolicyGenerator, tokens: &[&str]) -> TokenSeq {
    let ids: Vec<u32> = tokens
        .iter()
        .map(|t| generator.vocab().id_of(t).unwrap_or_else(|| panic!("{t} not in vocab")))
        .collect();
    generator.vocab().seq(&ids).unwrap()
}

fn oracle_predict(victim: &SimulatedVictimSpec, query: &str) -> usize {
    simulated_score(victim, query).unwrap().argmax()
}

fn oracle_acc(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    prompt: &TokenSeq,
    examples: &[Example],
) -> f64 {
    let mut correct = 0usize;
    for ex in examples {
        let query = render_query(task, prompt, None, &ex.text).unwrap();
        if oracle_predict(victim, &query) == ex.label {
            correct += 1;
        }
    }
    correct as f64 / examples.len() as f64
}

fn oracle_asr(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
) -> f64 {
    let target = task.target_class;
    let mut flipped = 0usize;
    let mut total = 0usize;
    for ex in examples.iter().filter(|ex| ex.label != target) {
        let query = render_query(task, prompt, Some(trigger), &ex.text).unwrap();
        total += 1;
        if oracle_predict(victim, &query) == target {
            flipped += 1;
        }
    }
    flipped as f64 / total as f64
}

/// Exhaustive scan of every 2-token prompt: the best dev accuracy and all
/// prompts achieving it.
pub fn oracle_best_prompt(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    generator: &PolicyGenerator,
    dev: &[Example],
) -> (f64, Vec<Vec<u32>>) {
    let vocab = generator.vocab();
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    for a in 0..vocab.len() as u32 {
        for b in 0..vocab.len() as u32 {
            let prompt = vocab.seq(&[a, b]).unwrap();
            let acc = oracle_acc(victim, task, &prompt, dev);
            if acc > best {
                best = acc;
                winners = vec![vec![a, b]];
            } else if acc == best {
                winners.push(vec![a, b]);
            }
        }
    }
    (best, winners)
}

/// Exhaustive scan of every single-token trigger under a fixed prompt.
pub fn oracle_best_trigger(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    generator: &PolicyGenerator,
    prompt: &TokenSeq,
    dev: &[Example],
) -> (f64, Vec<u32>) {
    let vocab = generator.vocab();
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    for t in 0..vocab.len() as u32 {
        let trigger = vocab.seq(&[t]).unwrap();
        let asr = oracle_asr(victim, task, prompt, &trigger, dev);
        if asr > best {
            best = asr;
            winners = vec![t];
        } else if asr == best {
            winners.push(t);
        }
    }
    (best, winners)
}

/// Exhaustive scan of every trigger of a given length (token repetition
/// allowed), returning the best dev ASR.
pub fn oracle_best_asr_at_length(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    generator: &PolicyGenerator,
    prompt: &TokenSeq,
    dev: &[Example],
    length: usize,
) -> f64 {
    let vocab = generator.vocab();
    let n = vocab.len() as u32;
    let mut ids = vec![0u32; length];
    let mut best = f64::NEG_INFINITY;
    loop {
        let trigger = vocab.seq(&ids).unwrap();
        let asr = oracle_asr(victim, task, prompt, &trigger, dev);
        if asr > best {
            best = asr;
        }
        // odometer increment
        let mut pos = 0usize;
        loop {
            if pos == length {
                return best;
            }
            ids[pos] += 1;
            if ids[pos] < n {
                break;
            }
            ids[pos] = 0;
            pos += 1;
        }
    }
}

/// Exhaustive scan of all 1-token extensions of the seed by mean dev poison
/// distance (clean hinge toward the label plus triggered hinge toward the
/// target), the quantity the progressive stage optimizes.
pub fn oracle_best_extension(
    victim: &SimulatedVictimSpec,
    task: &TaskSpec,
    generator: &PolicyGenerator,
    seed: &TokenSeq,
    trigger: &TokenSeq,
    dev: &[Example],
) -> (f64, Vec<u32>) {
    let vocab = generator.vocab();
    let target = task.target_class;
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    for t in 0..vocab.len() as u32 {
        let ext = vocab.seq(&[t]).unwrap();
        let prompt = seed.join(&ext);
        let mut total = 0.0;
        for ex in dev {
            let clean_q = render_query(task, &prompt, None, &ex.text).unwrap();
            let hot_q = render_query(task, &prompt, Some(trigger), &ex.text).unwrap();
            let clean = simulated_score(victim, &clean_q).unwrap();
            let hot = simulated_score(victim, &hot_q).unwrap();
            total += poison_distance(&clean, ex.label, &hot, target).unwrap();
        }
        let mean = total / dev.len() as f64;
        if mean > best {
            best = mean;
            winners = vec![t];
        } else if mean == best {
            winners.push(t);
        }
    }
    (best, winners)
}

/// Stage configuration tuned for the shipped fixtures (64-wide adapter,
/// saturated rewards).
pub fn fixture_stage(seq_length: usize, episodes: usize) -> StageConfig {
    fixture_stage_at(seq_length, episodes, 1.0)
}

/// Same, with an explicit sampling temperature; the defense and four-class
/// worlds need more exploration than the binary pipeline world.
pub fn fixture_stage_at(seq_length: usize, episodes: usize, temperature: f64) -> StageConfig {
    StageConfig {
        seq_length,
        episodes,
        batch_size: 16,
        lr: 0.05,
        temperature,
        eval_every: 10,
        hidden_dim: 64,
        grad_clip: 5.0,
        baseline_decay: 0.95,
        z_normalize: false,
        early_stop: None,
    }
}

pub fn reward_cfg() -> RewardConfig {
    RewardConfig::default()
}

pub fn dev_accuracy(
    client: &VictimClient,
    task: &TaskSpec,
    prompt: &TokenSeq,
    dev: &[Example],
) -> f64 {
    eval::accuracy(client, task, prompt, dev).unwrap()
}
