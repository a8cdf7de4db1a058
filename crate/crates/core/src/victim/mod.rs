//! Black-box victim abstraction: rendered query in, class distribution out.
//!
//! A [`VictimClient`] wraps a backend (deterministic simulated victim or an
//! OpenAI-compatible HTTP endpoint) with a persistent query cache and a query
//! budget. `classify` is a pure function of the query string for any fixed
//! victim: repeated queries are served from cache without consuming budget.

mod cache;
mod http;
mod simulated;

pub use cache::QueryCache;
pub use http::{HttpVictim, HttpVictimConfig};
pub use simulated::{simulated_score, PlantedToken, SimulatedVictim, SimulatedVictimSpec};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class probabilities from a victim. Entries are in `[0, 1]` and sum to
/// one within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Argument("a distribution needs at least 2 classes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Argument(format!("probabilities out of range: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ClassDistribution { probs })
    }

    /// Probability 1 at `label`, 0 elsewhere.
    pub fn one_hot(label: usize, num_classes: usize) -> Result<Self> {
        if label >= num_classes {
            return Err(Error::Argument(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let mut probs = vec![0.0; num_classes];
        probs[label] = 1.0;
        ClassDistribution::new(probs)
    }

    /// Softmax of `scores / temperature`.
    pub fn from_scores(scores: &[f64], temperature: f64) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::Argument("temperature must be positive".into()));
        }
        if scores.len() < 2 {
            return Err(Error::Argument("need at least 2 class scores".into()));
        }
        let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ClassDistribution::new(exps.iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Argmax class; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_one_hot(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

/// Treats a bare predicted label as a full distribution: probability 1 for
/// the predicted class, 0 for all others.
pub fn to_distribution(label: usize, num_classes: usize) -> Result<ClassDistribution> {
    ClassDistribution::one_hot(label, num_classes)
}

/// Counts victim queries against a hard cap. Cache hits are free.
#[derive(Debug)]
pub struct QueryBudget {
    max_queries: u64,
    used: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub max_queries: u64,
    pub used: u64,
    pub cache_hits: u64,
}

impl QueryBudget {
    pub fn new(max_queries: u64) -> Self {
        QueryBudget { max_queries, used: AtomicU64::new(0), cache_hits: AtomicU64::new(0) }
    }

    pub fn unlimited() -> Self {
        QueryBudget::new(u64::MAX)
    }

    /// Reserves one fresh query, or fails if the cap is reached.
    pub fn try_consume(&self) -> Result<()> {
        let mut current = self.used.load(Ordering::SeqCst);
        loop {
            if current >= self.max_queries {
                return Err(Error::BudgetExhausted { used: current, max: self.max_queries });
            }
            match self.used.compare_exchange(
                current,
                current + 1,
                Ordering::SeqCst,
                Ordering::SeqCst,
            ) {
                Ok(_) => return Ok(()),
                Err(actual) => current = actual,
            }
        }
    }

    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::SeqCst);
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn summary(&self) -> BudgetSummary {
        BudgetSummary {
            max_queries: self.max_queries,
            used: self.used(),
            cache_hits: self.cache_hits(),
        }
    }
}

/// Whether the victim exposes class probabilities or only a predicted label.
/// In label-only mode every distribution is hardened to one-hot before any
/// downstream computation, mirroring what a text-only API would give.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityMode {
    #[default]
    Probabilities,
    LabelOnly,
}

/// A scoring backend behind the client.
pub trait VictimBackend: Send + Sync {
    /// Stable identity string, part of every cache key.
    fn id(&self) -> &str;
    fn num_classes(&self) -> usize;
    fn classify(&self, query: &str) -> Result<ClassDistribution>;
}

/// The budgeted, cached front door to a victim.
pub struct VictimClient {
    backend: Box<dyn VictimBackend>,
    cache: QueryCache,
    budget: QueryBudget,
    mode: ProbabilityMode,
    parallelism: usize,
}

impl VictimClient {
    pub fn new(backend: Box<dyn VictimBackend>, cache: QueryCache, budget: QueryBudget) -> Self {
        VictimClient { backend, cache, budget, mode: ProbabilityMode::Probabilities, parallelism: 1 }
    }

    pub fn with_mode(mut self, mode: ProbabilityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    /// Cache identity: backend id plus the probability mode.
    pub fn victim_id(&self) -> String {
        match self.mode {
            ProbabilityMode::Probabilities => self.backend.id().to_string(),
            ProbabilityMode::LabelOnly => format!("{}#label-only", self.backend.id()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.backend.num_classes()
    }

    pub fn mode(&self) -> ProbabilityMode {
        self.mode
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn budget(&self) -> &QueryBudget {
        &self.budget
    }

    /// Classifies a rendered query. Identical queries hit the cache and do
    /// not consume budget; fresh queries consume one budget unit even when
    /// transport retries happen underneath.
    pub fn classify(&self, query: &str) -> Result<ClassDistribution> {
        if query.is_empty() {
            return Err(Error::Argument("query must be non-empty".into()));
        }
        let victim_id = self.victim_id();
        if let Some(dist) = self.cache.get(&victim_id, query) {
            self.budget.record_cache_hit();
            return Ok(dist);
        }
        self.budget.try_consume()?;
        let raw = self.backend.classify(query)?;
        let dist = match self.mode {
            ProbabilityMode::Probabilities => raw,
            ProbabilityMode::LabelOnly => {
                ClassDistribution::one_hot(raw.argmax(), raw.num_classes())?
            }
        };
        self.cache.put(&victim_id, query, &dist)?;
        Ok(dist)
    }

    /// Predicted class for a query: argmax of the (possibly one-hot)
    /// distribution, ties to the lowest index.
    pub fn classify_label(&self, query: &str) -> Result<usize> {
        Ok(self.classify(query)?.argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_examples() {
        assert_eq!(to_distribution(1, 2).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(to_distribution(0, 4).unwrap().probs(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(to_distribution(4, 4).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        let dist = ClassDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(dist.argmax(), 0);
        let dist = ClassDistribution::new(vec![0.1, 0.9]).unwrap();
        assert_eq!(dist.argmax(), 1);
    }

    #[test]
    fn distribution_validation() {
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![1.1, -0.1]).is_err());
        assert!(ClassDistribution::new(vec![1.0]).is_err());
        assert!(ClassDistribution::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn budget_counts_and_caps() {
        let budget = QueryBudget::new(2);
        budget.try_consume().unwrap();
        budget.try_consume().unwrap();
        let err = budget.try_consume().unwrap_err();
        assert!(err.is_budget_exhausted());
        assert_eq!(budget.used(), 2);
        budget.record_cache_hit();
        assert_eq!(budget.summary().cache_hits, 1);
    }

    #[test]
    fn to_distribution_idempotent_on_one_hot() {
        let dist = ClassDistribution::one_hot(1, 3).unwrap();
        let relabeled = to_distribution(dist.argmax(), 3).unwrap();
        assert_eq!(relabeled, dist);
    }
}
