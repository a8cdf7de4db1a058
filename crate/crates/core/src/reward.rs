//! Hinge-style probability distances and sign-gated reward shaping.
//!
//! The per-example distance is `P(c) − max_{c'≠c} P(c')`: positive exactly
//! when `c` is the strict argmax. Shaping multiplies positive distances by
//! `eta2` and the rest by `eta1`, so correct predictions are amplified and
//! wrong ones stay strongly penalized. The poison distance adds the clean
//! hinge (toward the true label) and the triggered hinge (toward the attack
//! target), then a single sign gates the combined value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{render_query, Example, TaskSpec, TokenSeq};
use crate::util::map_ordered;
use crate::victim::{ClassDistribution, VictimClient};

/// How per-example shaped rewards are combined over a few-shot set. Mean is
/// the default so `eta`-scaled values stay comparable across dataset sizes;
/// sum mode exists for strict fidelity to an additive objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

impl Aggregation {
    fn apply(&self, values: &[f64]) -> f64 {
        let total: f64 = values.iter().sum();
        match self {
            Aggregation::Mean => total / values.len() as f64,
            Aggregation::Sum => total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub eta1: f64,
    pub eta2: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { eta1: 180.0, eta2: 200.0, aggregation: Aggregation::Mean }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0) || !(self.eta2 > 0.0) {
            return Err(Error::Config("eta1 and eta2 must be positive".into()));
        }
        Ok(())
    }
}

/// `P(c) − max_{c'≠c} P(c')`, in `[-1, 1]`; positive iff `c` is the strict
/// argmax.
pub fn distance_label(dist: &ClassDistribution, class: usize) -> Result<f64> {
    let probs = dist.probs();
    if probs.len() < 2 {
        return Err(Error::Argument("distance needs at least 2 classes".into()));
    }
    if class >= probs.len() {
        return Err(Error::Argument(format!(
            "class {class} out of range for {} classes",
            probs.len()
        )));
    }
    let own = probs[class];
    let best_other = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != class)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(own - best_other)
}

/// `eta1^(1−sign) · eta2^sign · distance`, with `sign = 1[distance > 0]`, so
/// an exact tie takes the `eta1` branch.
pub fn shape(distance: f64, cfg: &RewardConfig) -> f64 {
    if distance > 0.0 {
        cfg.eta2 * distance
    } else {
        cfg.eta1 * distance
    }
}

/// Combined clean + attack hinge: `[P(c) − max_{c'≠c} P(c')]` on the clean
/// distribution plus `[P(c*) − max_{c'≠c*} P(c')]` on the triggered one.
/// In `[-2, 2]`.
pub fn poison_distance(
    dist_clean: &ClassDistribution,
    class: usize,
    dist_poison: &ClassDistribution,
    target_class: usize,
) -> Result<f64> {
    Ok(distance_label(dist_clean, class)? + distance_label(dist_poison, target_class)?)
}

fn aggregate_examples<F>(examples: &[Example], parallelism: usize, cfg: &RewardConfig, per: F) -> Result<f64>
where
    F: Fn(&Example) -> Result<f64> + Sync,
{
    if examples.is_empty() {
        return Err(Error::Argument("reward needs a non-empty example set".into()));
    }
    let values = map_ordered(examples, parallelism, per);
    let mut shaped = Vec::with_capacity(values.len());
    for value in values {
        shaped.push(value?);
    }
    Ok(cfg.aggregation.apply(&shaped))
}

/// Clean-accuracy reward of a prompt: aggregated shaped hinge toward each
/// example's true label, no trigger anywhere.
pub fn seed_reward(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    examples: &[Example],
    cfg: &RewardConfig,
) -> Result<f64> {
    aggregate_examples(examples, client.parallelism(), cfg, |ex| {
        let query = render_query(spec, prompt, None, &ex.text)?;
        let dist = client.classify(&query)?;
        Ok(shape(distance_label(&dist, ex.label)?, cfg))
    })
}

/// Attack reward of a trigger under a fixed prompt: aggregated shaped hinge
/// toward the target class with the trigger inserted. Clean behavior is
/// untouched — there is no clean term, so the prompt's accuracy cannot move.
pub fn trigger_reward(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
    cfg: &RewardConfig,
) -> Result<f64> {
    let target = spec.target_class;
    aggregate_examples(examples, client.parallelism(), cfg, |ex| {
        let query = render_query(spec, prompt, Some(trigger), &ex.text)?;
        let dist = client.classify(&query)?;
        Ok(shape(distance_label(&dist, target)?, cfg))
    })
}

/// Combined reward of a poisoned prompt: every clean example is paired with
/// its own triggered copy, the two hinges are summed per pair, and a single
/// sign gates the shaped value.
pub fn poison_reward(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
    cfg: &RewardConfig,
) -> Result<f64> {
    let target = spec.target_class;
    aggregate_examples(examples, client.parallelism(), cfg, |ex| {
        let clean_query = render_query(spec, prompt, None, &ex.text)?;
        let poison_query = render_query(spec, prompt, Some(trigger), &ex.text)?;
        let clean = client.classify(&clean_query)?;
        let poisoned = client.classify(&poison_query)?;
        Ok(shape(poison_distance(&clean, ex.label, &poisoned, target)?, cfg))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(probs: &[f64]) -> ClassDistribution {
        ClassDistribution::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let cfg = RewardConfig::default();
        let _ = cfg;
        assert!((distance_label(&dist(&[0.7, 0.3]), 0).unwrap() - 0.4).abs() < 1e-12);
        assert!(distance_label(&dist(&[0.25; 4]), 2).unwrap().abs() < 1e-12);
        assert!((distance_label(&dist(&[0.0, 1.0]), 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((distance_label(&dist(&[0.0, 1.0]), 0).unwrap() + 1.0).abs() < 1e-12);
        assert!(distance_label(&dist(&[0.5, 0.5]), 2).is_err());
    }

    #[test]
    fn shape_examples() {
        let cfg = RewardConfig::default();
        assert!((shape(0.4, &cfg) - 80.0).abs() < 1e-9);
        assert!((shape(-0.2, &cfg) + 36.0).abs() < 1e-9);
        assert_eq!(shape(0.0, &cfg), 0.0);
    }

    #[test]
    fn poison_distance_examples() {
        let combined =
            poison_distance(&dist(&[0.8, 0.2]), 0, &dist(&[0.1, 0.9]), 1).unwrap();
        assert!((combined - 1.4).abs() < 1e-12);
        let flat = poison_distance(&dist(&[0.5, 0.5]), 0, &dist(&[0.5, 0.5]), 1).unwrap();
        assert!(flat.abs() < 1e-12);
        let cancel = poison_distance(&dist(&[1.0, 0.0]), 0, &dist(&[1.0, 0.0]), 1).unwrap();
        assert!(cancel.abs() < 1e-12);
    }

    #[test]
    fn shaped_poison_examples() {
        let cfg = RewardConfig::default();
        assert!((shape(1.4, &cfg) - 280.0).abs() < 1e-9);
        assert!((shape(2.0, &cfg) - 400.0).abs() < 1e-9);
    }

    #[test]
    fn sum_aggregation_scales_with_set_size() {
        use crate::task::{Example, TaskSpec, TriggerPosition};
        use crate::victim::{QueryBudget, QueryCache, SimulatedVictim, SimulatedVictimSpec, VictimClient};

        let task = TaskSpec {
            classes: vec!["a".into(), "b".into()],
            verbalizer: vec!["alpha".into(), "beta".into()],
            template: "{input} {prompt}".into(),
            mask_token: "<mask>".into(),
            target_class: 1,
            trigger_position: TriggerPosition::Suffix,
        };
        let victim = SimulatedVictimSpec::blank(2, 1.0)
            .with_token_weights("good", vec![(0.7f64 / 0.3).ln(), 0.0]);
        let client = VictimClient::new(
            Box::new(SimulatedVictim::new(victim).unwrap()),
            QueryCache::in_memory(),
            QueryBudget::unlimited(),
        );
        let prompt = TokenSeq::from_text("p");
        let examples = vec![Example::new("good one", 0), Example::new("good two", 0)];
        let mean_cfg = RewardConfig::default();
        let sum_cfg = RewardConfig { aggregation: Aggregation::Sum, ..RewardConfig::default() };
        let mean = seed_reward(&client, &task, &prompt, &examples, &mean_cfg).unwrap();
        let sum = seed_reward(&client, &task, &prompt, &examples, &sum_cfg).unwrap();
        assert!((mean - 80.0).abs() < 1e-9);
        assert!((sum - 160.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn shape_preserves_sign(d in -1.0f64..1.0) {
            let cfg = RewardConfig::default();
            let s = shape(d, &cfg);
            prop_assert_eq!(s > 0.0, d > 0.0);
            prop_assert_eq!(s < 0.0, d < 0.0);
        }

        #[test]
        fn distance_positive_iff_strict_argmax(
            raw in proptest::collection::vec(0.01f64..5.0, 3),
            class in 0usize..3,
        ) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let d = ClassDistribution::new(probs.clone()).unwrap();
            let distance = distance_label(&d, class).unwrap();
            let strict_argmax = (0..3).all(|i| i == class || probs[class] > probs[i]);
            prop_assert_eq!(distance > 0.0, strict_argmax);
            prop_assert!((-1.0..=1.0).contains(&distance));
        }

        #[test]
        fn distance_is_monotone_in_own_probability(
            base in 0.05f64..0.3,
            bump in 0.01f64..0.3,
        ) {
            // Raise P(0) at the expense of P(2); P(1) fixed.
            let lower = ClassDistribution::new(vec![base, 0.3, 0.7 - base]).unwrap();
            let higher = ClassDistribution::new(vec![base + bump, 0.3, 0.7 - base - bump]).unwrap();
            let d_low = distance_label(&lower, 0).unwrap();
            let d_high = distance_label(&higher, 0).unwrap();
            prop_assert!(d_high > d_low);
        }

        #[test]
        fn one_hot_rewards_are_three_valued(label in 0usize..3, class in 0usize..3) {
            let cfg = RewardConfig::default();
            let d = ClassDistribution::one_hot(label, 3).unwrap();
            let s = shape(distance_label(&d, class).unwrap(), &cfg);
            if label == class {
                prop_assert!((s - cfg.eta2).abs() < 1e-12);
            } else {
                prop_assert!((s + cfg.eta1).abs() < 1e-12);
            }
        }
    }
}
