//! Run directory layout and stage persistence.
//!
//! Every run directory holds the resolved config copy, its hash, the
//! append-only episode log (one JSON object per line, parseable even if the
//! run died mid-write), per-stage outcome summaries plus policy checkpoints,
//! the final artifacts, reports, and the victim cache. A rerun with the same
//! config hash resumes at the first stage without a stored outcome.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use promptrojan_core::policy::{Checkpoint, PolicyGenerator, PolicyParams};
use promptrojan_core::search::{
    EpisodeLogEntry, EvalPoint, PoisonOutcome, SeedOutcome, TriggerOutcome,
};
use promptrojan_core::task::TokenSeq;
use promptrojan_core::victim::BudgetSummary;

use crate::config::RunConfig;

pub struct RunDir {
    root: PathBuf,
    config_hash: String,
}

pub const SEED_CHECKPOINT: &str = "seed_policy.json";
pub const TRIGGER_CHECKPOINT: &str = "trigger_policy.json";
pub const POISON_CHECKPOINT: &str = "poison_policy.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct StoredSeedOutcome {
    pub config_hash: String,
    pub prompt: TokenSeq,
    pub dev_acc: f64,
    pub truncated: bool,
    pub episodes_run: usize,
    pub trace: Vec<EvalPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StoredTriggerOutcome {
    pub config_hash: String,
    pub trigger: TokenSeq,
    pub dev_asr: f64,
    pub low_confidence: bool,
    pub truncated: bool,
    pub episodes_run: usize,
    pub trace: Vec<EvalPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StoredPoisonOutcome {
    pub config_hash: String,
    pub prompt: TokenSeq,
    pub increment: usize,
    pub dev_acc: f64,
    pub dev_asr: f64,
    pub dev_reward: f64,
    pub targets_met: bool,
    pub acc_target: f64,
    pub asr_target: f64,
    pub truncated: bool,
    pub trace: Vec<EvalPoint>,
}

impl RunDir {
    /// Creates (or reopens) the run directory, writing the resolved config
    /// copy and its hash.
    pub fn prepare(config: &RunConfig) -> Result<RunDir> {
        let root = config.out_dir.clone();
        std::fs::create_dir_all(&root)
            .with_context(|| format!("creating run directory {}", root.display()))?;
        let config_hash = config.config_hash()?;
        std::fs::write(root.join("config.toml"), toml::to_string_pretty(config)?)?;
        std::fs::write(root.join("config_hash.txt"), format!("{config_hash}\n"))?;
        Ok(RunDir { root, config_hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Opens the append-only episode log and returns a line writer.
    pub fn episode_logger(&self) -> Result<impl FnMut(&EpisodeLogEntry)> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("episodes.jsonl"))?;
        let mut file = LineLogger { file };
        Ok(move |entry: &EpisodeLogEntry| {
            file.write(entry);
        })
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn read_json_if_current<T: DeserializeOwned>(&self, name: &str) -> Option<T> {
        let raw = std::fs::read_to_string(self.path(name)).ok()?;
        serde_json::from_str(&raw).ok()
    }

    pub fn store_seed(
        &self,
        generator: &PolicyGenerator,
        outcome: &SeedOutcome,
    ) -> Result<()> {
        Checkpoint::new(outcome.theta.clone(), generator).save(self.path(SEED_CHECKPOINT))?;
        self.write_json(
            "seed_outcome.json",
            &StoredSeedOutcome {
                config_hash: self.config_hash.clone(),
                prompt: outcome.prompt.clone(),
                dev_acc: outcome.dev_acc,
                truncated: outcome.truncated,
                episodes_run: outcome.episodes_run,
                trace: outcome.trace.clone(),
            },
        )
    }

    /// Loads a completed seed stage for this exact config, if present.
    pub fn load_seed(&self, generator: &PolicyGenerator) -> Option<(StoredSeedOutcome, PolicyParams)> {
        let stored: StoredSeedOutcome = self.read_json_if_current("seed_outcome.json")?;
        if stored.config_hash != self.config_hash {
            return None;
        }
        let params = Checkpoint::load(self.path(SEED_CHECKPOINT), generator).ok()?;
        Some((stored, params))
    }

    pub fn store_trigger(
        &self,
        generator: &PolicyGenerator,
        outcome: &TriggerOutcome,
    ) -> Result<()> {
        Checkpoint::new(outcome.theta.clone(), generator).save(self.path(TRIGGER_CHECKPOINT))?;
        self.write_json(
            "trigger_outcome.json",
            &StoredTriggerOutcome {
                config_hash: self.config_hash.clone(),
                trigger: outcome.trigger.clone(),
                dev_asr: outcome.dev_asr,
                low_confidence: outcome.low_confidence,
                truncated: outcome.truncated,
                episodes_run: outcome.episodes_run,
                trace: outcome.trace.clone(),
            },
        )
    }

    pub fn load_trigger(&self) -> Option<StoredTriggerOutcome> {
        let stored: StoredTriggerOutcome = self.read_json_if_current("trigger_outcome.json")?;
        (stored.config_hash == self.config_hash).then_some(stored)
    }

    pub fn store_poison(
        &self,
        generator: &PolicyGenerator,
        outcome: &PoisonOutcome,
    ) -> Result<()> {
        Checkpoint::new(outcome.theta.clone(), generator).save(self.path(POISON_CHECKPOINT))?;
        self.write_json(
            "poison_outcome.json",
            &StoredPoisonOutcome {
                config_hash: self.config_hash.clone(),
                prompt: outcome.prompt.clone(),
                increment: outcome.increment,
                dev_acc: outcome.dev_acc,
                dev_asr: outcome.dev_asr,
                dev_reward: outcome.dev_reward,
                targets_met: outcome.targets_met,
                acc_target: outcome.acc_target,
                asr_target: outcome.asr_target,
                truncated: outcome.truncated,
                trace: outcome.trace.clone(),
            },
        )
    }

    pub fn load_poison(&self) -> Option<StoredPoisonOutcome> {
        let stored: StoredPoisonOutcome = self.read_json_if_current("poison_outcome.json")?;
        (stored.config_hash == self.config_hash).then_some(stored)
    }

    pub fn store_budget(&self, summary: &BudgetSummary) -> Result<()> {
        self.write_json("budget.json", summary)
    }
}

struct LineLogger {
    file: File,
}

impl LineLogger {
    fn write(&mut self, entry: &EpisodeLogEntry) {
        if let Ok(line) = serde_json::to_string(entry) {
            let _ = writeln!(self.file, "{line}");
            let _ = self.file.flush();
        }
    }
}
