//! A deterministic simulated victim for desk-scale experiments.
//!
//! Scoring is additive over whitespace-separated query tokens: each known
//! token contributes its per-class weight vector, planted tokens additionally
//! push one class, and the class scores go through a temperature softmax.
//! Unknown tokens contribute nothing, so an all-unknown query is uniform.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{ClassDistribution, VictimBackend};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

/// A token with extra weight toward one class, planted so that an optimal
/// trigger provably exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedToken {
    pub class: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedVictimSpec {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub token_class_weights: BTreeMap<String, Vec<f64>>,
    pub temperature: f64,
    #[serde(default)]
    pub planted_tokens: BTreeMap<String, PlantedToken>,
    /// When set, distributions are hardened to one-hot at the source, like a
    /// label-only API that was wrapped to look probability-based.
    #[serde(default)]
    pub hard_label: bool,
}

impl SimulatedVictimSpec {
    /// A victim with empty weight tables: every query scores uniform.
    pub fn blank(num_classes: usize, temperature: f64) -> Self {
        SimulatedVictimSpec {
            vocab_size: 0,
            num_classes,
            seed: 0,
            token_class_weights: BTreeMap::new(),
            temperature,
            planted_tokens: BTreeMap::new(),
            hard_label: false,
        }
    }

    /// Seeded random weights for `vocab_size` tokens named `tok000`,
    /// `tok001`, ... Each weight is uniform in [-1, 1].
    pub fn seeded(seed: u64, vocab_size: usize, num_classes: usize, temperature: f64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        for i in 0..vocab_size {
            let w: Vec<f64> = (0..num_classes).map(|_| rng.random_range(-1.0..1.0)).collect();
            weights.insert(format!("tok{i:03}"), w);
        }
        SimulatedVictimSpec {
            vocab_size,
            num_classes,
            seed,
            token_class_weights: weights,
            temperature,
            planted_tokens: BTreeMap::new(),
            hard_label: false,
        }
    }

    pub fn with_token_weights(mut self, token: impl Into<String>, weights: Vec<f64>) -> Self {
        self.token_class_weights.insert(token.into(), weights);
        self
    }

    pub fn with_planted(mut self, token: impl Into<String>, class: usize, weight: f64) -> Self {
        self.planted_tokens.insert(token.into(), PlantedToken { class, weight });
        self
    }

    pub fn with_hard_label(mut self, hard: bool) -> Self {
        self.hard_label = hard;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("simulated victim needs at least 2 classes".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("simulated victim temperature must be positive".into()));
        }
        for (token, weights) in &self.token_class_weights {
            if weights.len() != self.num_classes {
                return Err(Error::Config(format!(
                    "token {token:?} has {} weights for {} classes",
                    weights.len(),
                    self.num_classes
                )));
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Config(format!("token {token:?} has non-finite weights")));
            }
        }
        for (token, planted) in &self.planted_tokens {
            if planted.class >= self.num_classes {
                return Err(Error::Config(format!(
                    "planted token {token:?} targets class {} of {}",
                    planted.class, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let spec: SimulatedVictimSpec = serde_json::from_str(&raw)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Additive score-and-normalize over the spec's weight tables.
pub fn simulated_score(spec: &SimulatedVictimSpec, query: &str) -> Result<ClassDistribution> {
    let mut scores = vec![0.0f64; spec.num_classes];
    for token in query.split_whitespace() {
        if let Some(weights) = spec.token_class_weights.get(token) {
            for (c, w) in weights.iter().enumerate() {
                scores[c] += w;
            }
        }
        if let Some(planted) = spec.planted_tokens.get(token) {
            scores[planted.class] += planted.weight;
        }
    }
    ClassDistribution::from_scores(&scores, spec.temperature)
}

/// A stateless, fully reentrant victim backed by a [`SimulatedVictimSpec`].
pub struct SimulatedVictim {
    spec: SimulatedVictimSpec,
    id: String,
}

impl SimulatedVictim {
    pub fn new(spec: SimulatedVictimSpec) -> Result<Self> {
        spec.validate()?;
        let id = format!("sim-{}", &sha256_hex(serde_json::to_string(&spec)?.as_bytes())[..16]);
        Ok(SimulatedVictim { spec, id })
    }

    pub fn spec(&self) -> &SimulatedVictimSpec {
        &self.spec
    }
}

impl VictimBackend for SimulatedVictim {
    fn id(&self) -> &str {
        &self.id
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn classify(&self, query: &str) -> Result<ClassDistribution> {
        let dist = simulated_score(&self.spec, query)?;
        if self.spec.hard_label {
            ClassDistribution::one_hot(dist.argmax(), dist.num_classes())
        } else {
            Ok(dist)
        }
    }
}
