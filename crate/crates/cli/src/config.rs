//! Run configuration: one TOML document drives the whole pipeline. CLI
//! flags override the seed, budget, and output directory; the hash of the
//! resolved, location-independent config stamps every artifact.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use promptrojan_core::policy::{PolicyGenerator, Vocab};
use promptrojan_core::reward::RewardConfig;
use promptrojan_core::search::{PoisonStageConfig, StageConfig};
use promptrojan_core::task::TaskFile;
use promptrojan_core::victim::{
    HttpVictim, HttpVictimConfig, ProbabilityMode, QueryBudget, QueryCache, SimulatedVictim,
    SimulatedVictimSpec,
};
use promptrojan_core::VictimClient;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VictimKind {
    Simulated,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VictimSection {
    pub kind: VictimKind,
    #[serde(default)]
    pub mode: ProbabilityMode,
    /// Concurrent victim queries. Defaults to 1 for simulated victims and 4
    /// for HTTP victims.
    #[serde(default)]
    pub parallelism: Option<usize>,
    /// Simulated victim spec file (JSON).
    #[serde(default)]
    pub spec_file: Option<PathBuf>,
    /// Cache file; defaults to `<out_dir>/cache.jsonl`.
    #[serde(default)]
    pub cache_file: Option<PathBuf>,
    /// HTTP victim settings (endpoint, model, timeout...). The verbalizer is
    /// filled in from the task file; the API key comes from `api_key_env`.
    #[serde(default)]
    pub http: Option<HttpSection>,
}

/// `HttpVictimConfig` minus the verbalizer, which the task file owns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpSection {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySection {
    pub vocab_file: PathBuf,
    #[serde(default = "default_backbone_dim")]
    pub backbone_dim: usize,
    #[serde(default = "default_backbone_seed")]
    pub backbone_seed: u64,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
}

fn default_backbone_dim() -> usize {
    768
}
fn default_backbone_seed() -> u64 {
    7
}
fn default_max_seq_len() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StagesSection {
    pub seed: StageConfig,
    pub trigger: StageConfig,
    pub poison: PoisonStageConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub task_file: PathBuf,
    pub out_dir: PathBuf,
    pub global_seed: u64,
    #[serde(default = "default_budget")]
    pub query_budget: u64,
    pub victim: VictimSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub reward: RewardConfig,
    pub stages: StagesSection,
}

fn default_version() -> u32 {
    1
}
fn default_budget() -> u64 {
    50_000
}

/// Flag-level overrides, applied before hashing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&raw).with_context(|| format!("bad config {}", path.display()))?;
        if config.version != 1 {
            bail!("unsupported config version {}", config.version);
        }
        if let Some(seed) = overrides.seed {
            config.global_seed = seed;
        }
        if let Some(budget) = overrides.budget {
            config.query_budget = budget;
        }
        if let Some(out) = &overrides.out_dir {
            config.out_dir = out.clone();
        }
        // Paths in the config resolve relative to the config file location.
        let base = path.parent().unwrap_or(Path::new("."));
        config.task_file = resolve(base, &config.task_file);
        config.policy.vocab_file = resolve(base, &config.policy.vocab_file);
        if let Some(spec) = &config.victim.spec_file {
            config.victim.spec_file = Some(resolve(base, spec));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.victim.kind {
            VictimKind::Simulated => {
                if self.victim.spec_file.is_none() {
                    bail!("victim.kind = \"simulated\" requires victim.spec_file");
                }
            }
            VictimKind::Http => {
                if self.victim.http.is_none() {
                    bail!("victim.kind = \"http\" requires a [victim.http] section");
                }
            }
        }
        if !self.task_file.exists() {
            bail!("task file {} does not exist", self.task_file.display());
        }
        if !self.policy.vocab_file.exists() {
            bail!("vocabulary file {} does not exist", self.policy.vocab_file.display());
        }
        if let Some(spec) = &self.victim.spec_file {
            if !spec.exists() {
                bail!("victim spec file {} does not exist", spec.display());
            }
        }
        self.reward.validate()?;
        self.stages.seed.validate()?;
        self.stages.trigger.validate()?;
        self.stages.poison.base.validate()?;
        Ok(())
    }

    /// Hash of the resolved config with storage locations blanked out, so
    /// the same experiment in a different directory keeps its identity.
    pub fn config_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.victim.cache_file = None;
        let text = toml::to_string(&canonical).context("serializing config for hashing")?;
        Ok(promptrojan_core::util::sha256_hex(text.as_bytes()))
    }

    /// Deterministic run id derived from the config hash.
    pub fn run_id(&self) -> Result<String> {
        Ok(format!("run-{}", &self.config_hash()?[..12]))
    }

    pub fn load_task(&self) -> Result<TaskFile> {
        TaskFile::load(&self.task_file)
            .with_context(|| format!("loading task file {}", self.task_file.display()))
    }

    pub fn build_generator(&self) -> Result<PolicyGenerator> {
        let vocab = Vocab::load(&self.policy.vocab_file)
            .with_context(|| format!("loading vocabulary {}", self.policy.vocab_file.display()))?;
        Ok(PolicyGenerator::new(
            vocab,
            self.policy.backbone_seed,
            self.policy.backbone_dim,
            self.policy.max_seq_len,
        ))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.victim
            .cache_file
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache.jsonl"))
    }

    /// Builds the budgeted, cached victim client described by the config.
    pub fn build_client(&self, task: &TaskFile) -> Result<VictimClient> {
        let cache = QueryCache::open(self.cache_path())
            .with_context(|| format!("opening cache {}", self.cache_path().display()))?;
        let budget = QueryBudget::new(self.query_budget);
        let (backend, default_parallelism): (Box<dyn promptrojan_core::victim::VictimBackend>, usize) =
            match self.victim.kind {
                VictimKind::Simulated => {
                    let spec_path = self.victim.spec_file.as_ref().expect("validated");
                    let spec = SimulatedVictimSpec::load(spec_path).with_context(|| {
                        format!("loading victim spec {}", spec_path.display())
                    })?;
                    (Box::new(SimulatedVictim::new(spec)?), 1)
                }
                VictimKind::Http => {
                    let http = self.victim.http.as_ref().expect("validated");
                    let config = HttpVictimConfig {
                        endpoint: http.endpoint.clone(),
                        model: http.model.clone(),
                        instruction: http.instruction.clone().unwrap_or_else(|| {
                            format!(
                                "Classify the following text. Answer with exactly one of: {}.",
                                task.task.verbalizer.join(", ")
                            )
                        }),
                        timeout_secs: http.timeout_secs.unwrap_or(30),
                        mode: self.victim.mode,
                        api_key_env: http
                            .api_key_env
                            .clone()
                            .unwrap_or_else(|| "VICTIM_API_KEY".to_string()),
                        max_retries: http.max_retries.unwrap_or(3),
                        retry_base_ms: 250,
                        verbalizer: task.task.verbalizer.clone(),
                    };
                    (Box::new(HttpVictim::new(config)?), 4)
                }
            };
        let parallelism = self.victim.parallelism.unwrap_or(default_parallelism);
        Ok(VictimClient::new(backend, cache, budget)
            .with_mode(self.victim.mode)
            .with_parallelism(parallelism))
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
