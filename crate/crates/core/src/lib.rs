//! Black-box discrete prompt and trigger optimization toolkit.
//!
//! The library searches token sequences against a classification API that is
//! only reachable through queries: a prompt seed tuned for clean accuracy, a
//! universal trigger that flips predictions to a target class, and a poisoned
//! prompt grown from the seed that raises attack success while preserving
//! accuracy. It ships a deterministic simulated victim for desk-scale runs,
//! an OpenAI-compatible HTTP victim, reward shaping, an RL search engine, and
//! an evaluation/defense harness (accuracy, attack success rate, transfer
//! matrices, trojan detection and mitigation).

pub mod error;
pub mod eval;
pub mod fixtures;
pub mod policy;
pub mod reward;
pub mod search;
pub mod task;
pub mod util;
pub mod victim;

pub use error::{Error, Result};
pub use task::{Example, FewShotDataset, TaskSpec, TokenSeq, TriggerPosition};
pub use victim::{ClassDistribution, ProbabilityMode, QueryBudget, VictimClient};
