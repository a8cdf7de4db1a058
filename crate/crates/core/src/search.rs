//! Stage orchestration: prompt-seed tuning, universal trigger search,
//! progressive prompt poisoning, and the two single-shot baselines (joint
//! prompt+trigger search, prompt-only search with a fixed trigger).
//!
//! Every stage runs the same REINFORCE loop: sample a batch of sequences
//! from the policy, score each against the victim through the stage's reward,
//! take one ascent step against an exponential-moving-average baseline, and
//! every `eval_every` episodes score the greedy decode on the dev split. The
//! stage returns the dev-best greedy candidate and the parameter snapshot
//! that produced it. Sampling order never depends on victim scoring, so a
//! fixed global seed reproduces byte-identical results.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy, attack_success_rate, null_attack_rate};
use crate::policy::{params_seed, EpisodeBatch, PolicyGenerator, PolicyParams, UpdateOpts};
use crate::reward::{poison_reward, seed_reward, trigger_reward, RewardConfig};
use crate::task::{FewShotDataset, TaskSpec, TokenSeq};
use crate::util::derived_rng;
use crate::victim::VictimClient;

/// Which dev metric an early-stop rule watches. Each stage has one primary
/// metric (seed: accuracy; trigger: attack success rate; poison and the
/// baselines: the stage reward), and the rule must name it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopMetric {
    Acc,
    Asr,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub metric: StopMetric,
    /// Stop as soon as the dev metric reaches this value.
    pub threshold: f64,
    /// Stop after this many evaluations without a new best (0 disables).
    #[serde(default)]
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub seq_length: usize,
    pub episodes: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_baseline_decay")]
    pub baseline_decay: f64,
    #[serde(default)]
    pub z_normalize: bool,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

fn default_batch_size() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-2
}
fn default_temperature() -> f64 {
    1.0
}
fn default_eval_every() -> usize {
    10
}
fn default_hidden_dim() -> usize {
    2048
}
fn default_grad_clip() -> f64 {
    5.0
}
fn default_baseline_decay() -> f64 {
    0.95
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            seq_length: 2,
            episodes: 200,
            batch_size: default_batch_size(),
            lr: default_lr(),
            temperature: default_temperature(),
            eval_every: default_eval_every(),
            hidden_dim: default_hidden_dim(),
            grad_clip: default_grad_clip(),
            baseline_decay: default_baseline_decay(),
            z_normalize: false,
            early_stop: None,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_length == 0 {
            return Err(Error::Argument("sequence length must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("batch size, eval cadence and hidden dim must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be positive".into()));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline decay must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn check_early_stop(&self, primary: StopMetric) -> Result<()> {
        if let Some(rule) = &self.early_stop {
            if rule.metric != primary {
                return Err(Error::Config(format!(
                    "early-stop metric {:?} does not match this stage's primary metric {:?}",
                    rule.metric, primary
                )));
            }
        }
        Ok(())
    }
}

/// One line of the episode log: the sampled batch, its rewards, and the dev
/// evaluation when the episode was an eval point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub stage: String,
    pub episode: usize,
    pub sequences: Vec<String>,
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    pub baseline: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_asr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_metric: Option<f64>,
}

pub type EpisodeLogger<'a> = &'a mut dyn FnMut(&EpisodeLogEntry);

/// One dev evaluation point: the stage metric for the current greedy
/// candidate and the best-so-far after this point (non-decreasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: usize,
    pub metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asr: Option<f64>,
    pub best_so_far: f64,
}

/// What an eval closure reports back to the loop.
struct EvalReading {
    metric: f64,
    acc: Option<f64>,
    asr: Option<f64>,
    /// Stage-specific stop signal (e.g. poison targets attained).
    stop_now: bool,
}

struct LoopBest {
    ext: TokenSeq,
    theta: PolicyParams,
    metric: f64,
    acc: Option<f64>,
    asr: Option<f64>,
}

struct LoopResult {
    best: LoopBest,
    /// Candidate that fired `stop_now`, if any.
    stopped_at: Option<LoopBest>,
    final_params: PolicyParams,
    truncated: bool,
    trace: Vec<EvalPoint>,
    episodes_run: usize,
    baseline: Option<f64>,
}

/// The shared REINFORCE loop over extensions of a fixed (possibly empty)
/// token prefix. Budget exhaustion truncates the loop and returns the best
/// candidate seen so far.
fn run_loop<R, E>(
    generator: &PolicyGenerator,
    stage: &str,
    params: PolicyParams,
    prefix: &[u32],
    cfg: &StageConfig,
    rng: &mut ChaCha12Rng,
    baseline_init: Option<f64>,
    mut reward_fn: R,
    mut eval_fn: E,
    log: EpisodeLogger<'_>,
) -> Result<LoopResult>
where
    R: FnMut(&TokenSeq) -> Result<f64>,
    E: FnMut(&TokenSeq) -> Result<EvalReading>,
{
    cfg.validate()?;
    let mut params = params;
    let mut baseline = baseline_init;
    let mut best: Option<LoopBest> = None;
    let mut stopped_at = None;
    let mut truncated = false;
    let mut trace = Vec::new();
    let mut episodes_run = 0usize;
    let mut evals_since_best = 0usize;

    macro_rules! evaluate {
        ($episode:expr) => {{
            let ext = generator.greedy_extension(&params, prefix, cfg.seq_length)?;
            match eval_fn(&ext) {
                Ok(reading) => {
                    let improved = best.as_ref().map_or(true, |b| reading.metric > b.metric);
                    if improved {
                        best = Some(LoopBest {
                            ext: ext.clone(),
                            theta: params.snapshot(),
                            metric: reading.metric,
                            acc: reading.acc,
                            asr: reading.asr,
                        });
                        evals_since_best = 0;
                    } else {
                        evals_since_best += 1;
                    }
                    let best_metric = best.as_ref().map(|b| b.metric).unwrap_or(reading.metric);
                    trace.push(EvalPoint {
                        episode: $episode,
                        metric: reading.metric,
                        acc: reading.acc,
                        asr: reading.asr,
                        best_so_far: best_metric,
                    });
                    log(&EpisodeLogEntry {
                        stage: stage.to_string(),
                        episode: $episode,
                        sequences: vec![ext.text.clone()],
                        rewards: vec![],
                        mean_reward: 0.0,
                        baseline: baseline.unwrap_or(0.0),
                        eval_metric: Some(reading.metric),
                        eval_acc: reading.acc,
                        eval_asr: reading.asr,
                        best_metric: Some(best_metric),
                    });
                    if reading.stop_now {
                        stopped_at = Some(LoopBest {
                            ext,
                            theta: params.snapshot(),
                            metric: reading.metric,
                            acc: reading.acc,
                            asr: reading.asr,
                        });
                        true
                    } else if let Some(rule) = &cfg.early_stop {
                        reading.metric >= rule.threshold
                            || (rule.patience > 0 && evals_since_best >= rule.patience)
                    } else {
                        false
                    }
                }
                Err(e) if e.is_budget_exhausted() => {
                    truncated = true;
                    true
                }
                Err(e) => return Err(e),
            }
        }};
    }

    let mut stop = evaluate!(0);

    if !stop {
        'episodes: for episode in 1..=cfg.episodes {
            let mut sequences = Vec::with_capacity(cfg.batch_size);
            let mut logprobs = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (seq, lps) =
                    generator.sample_extension(&params, prefix, cfg.seq_length, cfg.temperature, rng)?;
                sequences.push(seq);
                logprobs.push(lps);
            }
            let mut rewards = Vec::with_capacity(cfg.batch_size);
            for seq in &sequences {
                match reward_fn(seq) {
                    Ok(r) => rewards.push(r),
                    Err(e) if e.is_budget_exhausted() => {
                        truncated = true;
                        break 'episodes;
                    }
                    Err(e) => return Err(e),
                }
            }
            episodes_run = episode;
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            baseline = Some(match baseline {
                None => mean,
                Some(b) => cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean,
            });
            let (update_rewards, update_baseline) = if cfg.z_normalize {
                let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                    / rewards.len() as f64;
                let std = var.sqrt() + 1e-8;
                (rewards.iter().map(|r| (r - mean) / std).collect::<Vec<_>>(), 0.0)
            } else {
                (rewards.clone(), baseline.unwrap())
            };
            let batch = EpisodeBatch {
                prefix: prefix.to_vec(),
                sequences: sequences.clone(),
                logprobs,
                rewards: update_rewards,
                temperature: cfg.temperature,
            };
            let opts = UpdateOpts { lr: cfg.lr, baseline: update_baseline, grad_clip: cfg.grad_clip };
            let (next, _) = generator.update(&params, &batch, &opts)?;
            params = next;
            log(&EpisodeLogEntry {
                stage: stage.to_string(),
                episode,
                sequences: sequences.iter().map(|s| s.text.clone()).collect(),
                rewards,
                mean_reward: mean,
                baseline: baseline.unwrap(),
                eval_metric: None,
                eval_acc: None,
                eval_asr: None,
                best_metric: best.as_ref().map(|b| b.metric),
            });
            if episode % cfg.eval_every == 0 {
                stop = evaluate!(episode);
                if stop {
                    break 'episodes;
                }
            }
        }
    }

    if !stop && !truncated && cfg.episodes % cfg.eval_every != 0 {
        evaluate!(cfg.episodes);
    }

    let best = match best {
        Some(best) => best,
        None => {
            // Not a single successful evaluation (e.g. budget 0): fall back
            // to the untrained greedy candidate.
            let ext = generator.greedy_extension(&params, prefix, cfg.seq_length)?;
            LoopBest { ext, theta: params.snapshot(), metric: f64::NEG_INFINITY, acc: None, asr: None }
        }
    };
    Ok(LoopResult {
        best,
        stopped_at,
        final_params: params,
        truncated,
        trace,
        episodes_run,
        baseline,
    })
}

/// Outcome of prompt-seed tuning: the dev-best greedy prompt and the policy
/// snapshot that produced it.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub prompt: TokenSeq,
    pub theta: PolicyParams,
    pub dev_acc: f64,
    pub truncated: bool,
    pub trace: Vec<EvalPoint>,
    pub episodes_run: usize,
}

pub fn tune_prompt_seed(
    client: &VictimClient,
    spec: &TaskSpec,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    cfg: &StageConfig,
    reward_cfg: &RewardConfig,
    global_seed: u64,
    log: EpisodeLogger<'_>,
) -> Result<SeedOutcome> {
    spec.validate()?;
    cfg.check_early_stop(StopMetric::Acc)?;
    let params = generator.init_params(params_seed(global_seed, "seed"), cfg.hidden_dim);
    let mut rng = derived_rng(global_seed, "stage:seed");
    let result = run_loop(
        generator,
        "seed",
        params,
        &[],
        cfg,
        &mut rng,
        None,
        |seq| seed_reward(client, spec, seq, &data.train, reward_cfg),
        |seq| {
            let acc = accuracy(client, spec, seq, &data.dev)?;
            Ok(EvalReading { metric: acc, acc: Some(acc), asr: None, stop_now: false })
        },
        log,
    )?;
    Ok(SeedOutcome {
        prompt: result.best.ext,
        theta: result.best.theta,
        dev_acc: result.best.metric,
        truncated: result.truncated,
        trace: result.trace,
        episodes_run: result.episodes_run,
    })
}

/// Outcome of the universal trigger search. `low_confidence` flags a trigger
/// whose dev ASR never beat the no-trigger base rate of predicting the
/// target class.
#[derive(Debug, Clone)]
pub struct TriggerOutcome {
    pub trigger: TokenSeq,
    pub theta: PolicyParams,
    pub dev_asr: f64,
    pub low_confidence: bool,
    pub truncated: bool,
    pub trace: Vec<EvalPoint>,
    pub episodes_run: usize,
}

pub fn optimize_trigger(
    client: &VictimClient,
    spec: &TaskSpec,
    seed_prompt: &TokenSeq,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    cfg: &StageConfig,
    reward_cfg: &RewardConfig,
    global_seed: u64,
    log: EpisodeLogger<'_>,
) -> Result<TriggerOutcome> {
    spec.validate()?;
    cfg.check_early_stop(StopMetric::Asr)?;
    if cfg.seq_length == 0 {
        return Err(Error::Argument("trigger length must be at least 1".into()));
    }
    let target = spec.target_class;
    let params = generator.init_params(params_seed(global_seed, "trigger"), cfg.hidden_dim);
    let null_rate = match null_attack_rate(client, spec, seed_prompt, &data.dev, target) {
        Ok(rate) => rate,
        Err(e) if e.is_budget_exhausted() => {
            let trigger = generator.greedy_sequence(&params, cfg.seq_length)?;
            return Ok(TriggerOutcome {
                trigger,
                theta: params,
                dev_asr: 0.0,
                low_confidence: true,
                truncated: true,
                trace: Vec::new(),
                episodes_run: 0,
            });
        }
        Err(e) => return Err(e),
    };
    let mut rng = derived_rng(global_seed, "stage:trigger");
    let result = run_loop(
        generator,
        "trigger",
        params,
        &[],
        cfg,
        &mut rng,
        None,
        |seq| trigger_reward(client, spec, seed_prompt, seq, &data.train, reward_cfg),
        |seq| {
            let asr = attack_success_rate(client, spec, seed_prompt, seq, &data.dev, target)?;
            Ok(EvalReading { metric: asr, acc: None, asr: Some(asr), stop_now: false })
        },
        log,
    )?;
    let dev_asr = result.best.metric;
    Ok(TriggerOutcome {
        trigger: result.best.ext,
        theta: result.best.theta,
        dev_asr,
        low_confidence: dev_asr <= null_rate + 1e-12,
        truncated: result.truncated,
        trace: result.trace,
        episodes_run: result.episodes_run,
    })
}

/// How the poison stage decides its clean-accuracy target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccTarget {
    /// The seed prompt's dev accuracy minus one point.
    Auto,
    Fixed(f64),
}

impl Default for AccTarget {
    fn default() -> Self {
        AccTarget::Auto
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonStageConfig {
    #[serde(flatten)]
    pub base: StageConfig,
    #[serde(default = "default_max_increment")]
    pub max_increment: usize,
    #[serde(default)]
    pub acc_target: AccTarget,
    #[serde(default = "default_asr_target")]
    pub asr_target: f64,
}

fn default_max_increment() -> usize {
    2
}
fn default_asr_target() -> f64 {
    0.95
}

impl Default for PoisonStageConfig {
    fn default() -> Self {
        PoisonStageConfig {
            base: StageConfig::default(),
            max_increment: default_max_increment(),
            acc_target: AccTarget::Auto,
            asr_target: default_asr_target(),
        }
    }
}

/// Outcome of progressive prompt poisoning. The returned prompt always
/// carries the seed as an exact token prefix; `increment` is the number of
/// appended tokens (0 when the seed plus trigger already met both targets).
#[derive(Debug, Clone)]
pub struct PoisonOutcome {
    pub prompt: TokenSeq,
    pub theta: PolicyParams,
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

/// Warm-starts the poison policy from the seed policy, freezes the seed
/// tokens as an immutable prefix, and trains appended tokens one increment
/// length at a time until both dev targets are attained (or the increment
/// budget runs out, returning the best extension by dev poison reward).
#[allow(clippy::too_many_arguments)]
pub fn poison_prompt_progressive(
    client: &VictimClient,
    spec: &TaskSpec,
    seed_prompt: &TokenSeq,
    theta_seed: &PolicyParams,
    trigger: &TokenSeq,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    cfg: &PoisonStageConfig,
    reward_cfg: &RewardConfig,
    global_seed: u64,
    log: EpisodeLogger<'_>,
) -> Result<PoisonOutcome> {
    spec.validate()?;
    cfg.base.check_early_stop(StopMetric::Reward)?;
    if seed_prompt.ids.is_empty() {
        return Err(Error::Argument("poisoning needs a vocabulary-rendered seed prompt".into()));
    }
    let target = spec.target_class;

    // The whole increment-0 probe is budget-guarded: running out of queries
    // here returns the bare seed as a truncated best-so-far outcome.
    let probe = (|| -> Result<(f64, f64, f64)> {
        let acc0 = accuracy(client, spec, seed_prompt, &data.dev)?;
        let asr0 = attack_success_rate(client, spec, seed_prompt, trigger, &data.dev, target)?;
        let reward0 = poison_reward(client, spec, seed_prompt, trigger, &data.dev, reward_cfg)?;
        Ok((acc0, asr0, reward0))
    })();
    let (acc0, asr0, reward0) = match probe {
        Ok(values) => values,
        Err(e) if e.is_budget_exhausted() => {
            let asr_target = cfg.asr_target;
            let acc_target = match cfg.acc_target {
                AccTarget::Fixed(v) => v,
                AccTarget::Auto => 0.0,
            };
            return Ok(PoisonOutcome {
                prompt: seed_prompt.clone(),
                theta: theta_seed.snapshot(),
                increment: 0,
                dev_acc: 0.0,
                dev_asr: 0.0,
                dev_reward: f64::NEG_INFINITY,
                targets_met: false,
                acc_target,
                asr_target,
                truncated: true,
                trace: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let acc_target = match cfg.acc_target {
        AccTarget::Fixed(v) => v,
        AccTarget::Auto => acc0 - 0.01,
    };
    let asr_target = cfg.asr_target;

    if acc0 >= acc_target && asr0 >= asr_target {
        return Ok(PoisonOutcome {
            prompt: seed_prompt.clone(),
            theta: theta_seed.snapshot(),
            increment: 0,
            dev_acc: acc0,
            dev_asr: asr0,
            dev_reward: reward0,
            targets_met: true,
            acc_target,
            asr_target,
            truncated: false,
            trace: Vec::new(),
        })
    }

    let mut params = theta_seed.snapshot();
    let mut baseline = None;
    let mut trace = Vec::new();
    let mut truncated = false;
    let mut best: Option<(TokenSeq, PolicyParams, f64, f64, f64)> = None; // ext, theta, reward, acc, asr

    for increment in 1..=cfg.max_increment.max(1) {
        let mut stage_cfg = cfg.base.clone();
        stage_cfg.seq_length = increment;
        let mut rng = derived_rng(global_seed, &format!("stage:poison:{increment}"));
        let result = run_loop(
            generator,
            &format!("poison-{increment}"),
            params,
            &seed_prompt.ids,
            &stage_cfg,
            &mut rng,
            baseline,
            |ext| {
                let full = seed_prompt.join(ext);
                poison_reward(client, spec, &full, trigger, &data.train, reward_cfg)
            },
            |ext| {
                let full = seed_prompt.join(ext);
                let acc = accuracy(client, spec, &full, &data.dev)?;
                let asr = attack_success_rate(client, spec, &full, trigger, &data.dev, target)?;
                let reward = poison_reward(client, spec, &full, trigger, &data.dev, reward_cfg)?;
                Ok(EvalReading {
                    metric: reward,
                    acc: Some(acc),
                    asr: Some(asr),
                    stop_now: acc >= acc_target && asr >= asr_target,
                })
            },
            log,
        )?;
        trace.extend(result.trace.iter().cloned());
        baseline = result.baseline;
        params = result.final_params;
        if let Some(hit) = result.stopped_at {
            let prompt = seed_prompt.join(&hit.ext);
            return Ok(PoisonOutcome {
                prompt,
                theta: hit.theta,
                increment: hit.ext.len(),
                dev_acc: hit.acc.unwrap_or(0.0),
                dev_asr: hit.asr.unwrap_or(0.0),
                dev_reward: hit.metric,
                targets_met: true,
                acc_target,
                asr_target,
                truncated: false,
                trace,
            });
        }
        let improved = best.as_ref().map_or(true, |(_, _, r, _, _)| result.best.metric > *r);
        if improved && result.best.metric.is_finite() {
            best = Some((
                result.best.ext.clone(),
                result.best.theta.clone(),
                result.best.metric,
                result.best.acc.unwrap_or(0.0),
                result.best.asr.unwrap_or(0.0),
            ));
        }
        if result.truncated {
            truncated = true;
            break;
        }
    }

    // Targets unreachable within the increment budget: best-so-far by dev
    // poison reward, the bare seed included as a candidate.
    let (ext, theta, reward, acc, asr) = match best {
        Some(b) if b.2 >= reward0 => b,
        _ => (TokenSeq::empty(), theta_seed.snapshot(), reward0, acc0, asr0),
    };
    let prompt = if ext.len() == 0 { seed_prompt.clone() } else { seed_prompt.join(&ext) };
    Ok(PoisonOutcome {
        prompt,
        theta,
        increment: ext.len(),
        dev_acc: acc,
        dev_asr: asr,
        dev_reward: reward,
        targets_met: acc >= acc_target && asr >= asr_target,
        acc_target,
        asr_target,
        truncated,
        trace,
    })
}

/// Outcome of the direct joint search baseline.
#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub prompt: TokenSeq,
    pub trigger: TokenSeq,
    pub dev_acc: f64,
    pub dev_asr: f64,
    pub truncated: bool,
    pub trace: Vec<EvalPoint>,
}

/// Trains a prompt policy and a trigger policy simultaneously on the summed
/// clean + attack objective, the single-stage formulation the staged
/// pipeline replaces. Dev selection is by `(acc + asr) / 2`.
pub fn joint_search_baseline(
    client: &VictimClient,
    spec: &TaskSpec,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    prompt_cfg: &StageConfig,
    trigger_len: usize,
    reward_cfg: &RewardConfig,
    global_seed: u64,
    log: EpisodeLogger<'_>,
) -> Result<JointOutcome> {
    spec.validate()?;
    prompt_cfg.validate()?;
    prompt_cfg.check_early_stop(StopMetric::Reward)?;
    if trigger_len == 0 {
        return Err(Error::Argument("trigger length must be at least 1".into()));
    }
    let target = spec.target_class;
    let mut theta_p = generator.init_params(params_seed(global_seed, "joint-prompt"), prompt_cfg.hidden_dim);
    let mut theta_t = generator.init_params(params_seed(global_seed, "joint-trigger"), prompt_cfg.hidden_dim);
    let mut rng = derived_rng(global_seed, "stage:joint");
    let mut baseline: Option<f64> = None;
    let mut truncated = false;
    let mut trace = Vec::new();
    let mut best: Option<(TokenSeq, TokenSeq, f64, f64, f64)> = None; // p, t, metric, acc, asr

    let evaluate = |theta_p: &PolicyParams,
                        theta_t: &PolicyParams,
                        episode: usize,
                        trace: &mut Vec<EvalPoint>,
                        best: &mut Option<(TokenSeq, TokenSeq, f64, f64, f64)>|
     -> Result<bool> {
        let p = generator.greedy_sequence(theta_p, prompt_cfg.seq_length)?;
        let t = generator.greedy_sequence(theta_t, trigger_len)?;
        let acc = match accuracy(client, spec, &p, &data.dev) {
            Ok(v) => v,
            Err(e) if e.is_budget_exhausted() => return Ok(true),
            Err(e) => return Err(e),
        };
        let asr = match attack_success_rate(client, spec, &p, &t, &data.dev, target) {
            Ok(v) => v,
            Err(e) if e.is_budget_exhausted() => return Ok(true),
            Err(e) => return Err(e),
        };
        let metric = (acc + asr) / 2.0;
        if best.as_ref().map_or(true, |(_, _, m, _, _)| metric > *m) {
            *best = Some((p, t, metric, acc, asr));
        }
        trace.push(EvalPoint {
            episode,
            metric,
            acc: Some(acc),
            asr: Some(asr),
            best_so_far: best.as_ref().map(|b| b.2).unwrap_or(metric),
        });
        Ok(false)
    };

    let mut stop = evaluate(&theta_p, &theta_t, 0, &mut trace, &mut best)?;
    if stop {
        truncated = true;
    }
    if !stop {
        'episodes: for episode in 1..=prompt_cfg.episodes {
            let mut prompts = Vec::with_capacity(prompt_cfg.batch_size);
            let mut prompt_lps = Vec::with_capacity(prompt_cfg.batch_size);
            let mut triggers = Vec::with_capacity(prompt_cfg.batch_size);
            let mut trigger_lps = Vec::with_capacity(prompt_cfg.batch_size);
            for _ in 0..prompt_cfg.batch_size {
                let (p, plp) = generator.sample_extension(
                    &theta_p,
                    &[],
                    prompt_cfg.seq_length,
                    prompt_cfg.temperature,
                    &mut rng,
                )?;
                let (t, tlp) = generator.sample_extension(
                    &theta_t,
                    &[],
                    trigger_len,
                    prompt_cfg.temperature,
                    &mut rng,
                )?;
                prompts.push(p);
                prompt_lps.push(plp);
                triggers.push(t);
                trigger_lps.push(tlp);
            }
            let mut rewards = Vec::with_capacity(prompt_cfg.batch_size);
            for (p, t) in prompts.iter().zip(&triggers) {
                let clean = seed_reward(client, spec, p, &data.train, reward_cfg);
                let attack = clean.and_then(|c| {
                    trigger_reward(client, spec, p, t, &data.train, reward_cfg).map(|a| c + a)
                });
                match attack {
                    Ok(r) => rewards.push(r),
                    Err(e) if e.is_budget_exhausted() => {
                        truncated = true;
                        break 'episodes;
                    }
                    Err(e) => return Err(e),
                }
            }
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            baseline = Some(match baseline {
                None => mean,
                Some(b) => prompt_cfg.baseline_decay * b + (1.0 - prompt_cfg.baseline_decay) * mean,
            });
            let opts = UpdateOpts {
                lr: prompt_cfg.lr,
                baseline: baseline.unwrap(),
                grad_clip: prompt_cfg.grad_clip,
            };
            let prompt_batch = EpisodeBatch {
                prefix: vec![],
                sequences: prompts.clone(),
                logprobs: prompt_lps,
                rewards: rewards.clone(),
                temperature: prompt_cfg.temperature,
            };
            let trigger_batch = EpisodeBatch {
                prefix: vec![],
                sequences: triggers.clone(),
                logprobs: trigger_lps,
                rewards: rewards.clone(),
                temperature: prompt_cfg.temperature,
            };
            let (next_p, _) = generator.update(&theta_p, &prompt_batch, &opts)?;
            let (next_t, _) = generator.update(&theta_t, &trigger_batch, &opts)?;
            theta_p = next_p;
            theta_t = next_t;
            log(&EpisodeLogEntry {
                stage: "joint".into(),
                episode,
                sequences: prompts
                    .iter()
                    .zip(&triggers)
                    .map(|(p, t)| format!("{} // {}", p.text, t.text))
                    .collect(),
                rewards,
                mean_reward: mean,
                baseline: baseline.unwrap(),
                eval_metric: None,
                eval_acc: None,
                eval_asr: None,
                best_metric: best.as_ref().map(|b| b.2),
            });
            if episode % prompt_cfg.eval_every == 0 {
                stop = evaluate(&theta_p, &theta_t, episode, &mut trace, &mut best)?;
                if stop {
                    truncated = true;
                    break 'episodes;
                }
            }
        }
    }

    let (prompt, trigger, _, acc, asr) = match best {
        Some(b) => b,
        None => {
            let p = generator.greedy_sequence(&theta_p, prompt_cfg.seq_length)?;
            let t = generator.greedy_sequence(&theta_t, trigger_len)?;
            (p, t, f64::NEG_INFINITY, 0.0, 0.0)
        }
    };
    Ok(JointOutcome { prompt, trigger, dev_acc: acc, dev_asr: asr, truncated, trace })
}

/// Outcome of the prompt-only baseline with a fixed, manually chosen trigger.
#[derive(Debug, Clone)]
pub struct POnlyOutcome {
    pub prompt: TokenSeq,
    pub dev_acc: f64,
    pub dev_asr: f64,
    pub dev_reward: f64,
    /// The fixed trigger collides with a verbalizer label word.
    pub verbalizer_collision: bool,
    pub truncated: bool,
    pub trace: Vec<EvalPoint>,
}

/// Trains a single prompt policy on the poison objective with a fixed raw
/// trigger (default "cf"). Dev selection is by poison reward.
pub fn p_only_search_baseline(
    client: &VictimClient,
    spec: &TaskSpec,
    fixed_trigger: &str,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    cfg: &StageConfig,
    reward_cfg: &RewardConfig,
    global_seed: u64,
    log: EpisodeLogger<'_>,
) -> Result<POnlyOutcome> {
    spec.validate()?;
    cfg.check_early_stop(StopMetric::Reward)?;
    if fixed_trigger.trim().is_empty() {
        return Err(Error::Argument("the fixed trigger must be non-empty".into()));
    }
    let collision = spec
        .verbalizer
        .iter()
        .any(|word| word.eq_ignore_ascii_case(fixed_trigger.trim()));
    let trigger = TokenSeq::from_text(fixed_trigger.trim());
    let target = spec.target_class;
    let params = generator.init_params(params_seed(global_seed, "p-only"), cfg.hidden_dim);
    let mut rng = derived_rng(global_seed, "stage:p-only");
    let mut dev_acc = 0.0;
    let mut dev_asr = 0.0;
    let result = run_loop(
        generator,
        "p-only",
        params,
        &[],
        cfg,
        &mut rng,
        None,
        |seq| poison_reward(client, spec, seq, &trigger, &data.train, reward_cfg),
        |seq| {
            let reward = poison_reward(client, spec, seq, &trigger, &data.dev, reward_cfg)?;
            let acc = accuracy(client, spec, seq, &data.dev)?;
            let asr = attack_success_rate(client, spec, seq, &trigger, &data.dev, target)?;
            Ok(EvalReading { metric: reward, acc: Some(acc), asr: Some(asr), stop_now: false })
        },
        log,
    )?;
    if let (Some(acc), Some(asr)) = (result.best.acc, result.best.asr) {
        dev_acc = acc;
        dev_asr = asr;
    }
    Ok(POnlyOutcome {
        prompt: result.best.ext,
        dev_acc,
        dev_asr,
        dev_reward: result.best.metric,
        verbalizer_collision: collision,
        truncated: result.truncated,
        trace: result.trace,
    })
}

/// Provenance stamped into every artifacts file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub config_hash: String,
    pub victim_id: String,
}

/// Checkpoint file names, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCheckpoints {
    pub seed: String,
    pub trigger: String,
    pub poison: String,
}

impl Default for StageCheckpoints {
    fn default() -> Self {
        StageCheckpoints {
            seed: "seed_policy.json".into(),
            trigger: "trigger_policy.json".into(),
            poison: "poison_policy.json".into(),
        }
    }
}

/// The attack the pipeline produces: prompt seed, universal trigger, and the
/// poisoned prompt (which always extends the seed token-for-token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackArtifacts {
    pub seed_prompt: TokenSeq,
    pub trigger: TokenSeq,
    pub poisoned_prompt: TokenSeq,
    #[serde(default)]
    pub theta_snapshots: StageCheckpoints,
    pub provenance: Provenance,
}

impl AttackArtifacts {
    pub fn new(
        seed_prompt: TokenSeq,
        trigger: TokenSeq,
        poisoned_prompt: TokenSeq,
        provenance: Provenance,
    ) -> Result<Self> {
        if !poisoned_prompt.starts_with(&seed_prompt) {
            return Err(Error::Argument(
                "the poisoned prompt must begin with the seed prompt as an exact token prefix"
                    .into(),
            ));
        }
        Ok(AttackArtifacts {
            seed_prompt,
            trigger,
            poisoned_prompt,
            theta_snapshots: StageCheckpoints::default(),
            provenance,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let artifacts: AttackArtifacts = serde_json::from_str(&raw)?;
        if !artifacts.poisoned_prompt.starts_with(&artifacts.seed_prompt) {
            return Err(Error::Argument("artifacts file violates the seed-prefix invariant".into()));
        }
        Ok(artifacts)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Configuration for the full three-stage pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed_stage: StageConfig,
    pub trigger_stage: StageConfig,
    pub poison_stage: PoisonStageConfig,
    #[serde(default)]
    pub reward: RewardConfig,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub artifacts: AttackArtifacts,
    pub seed: SeedOutcome,
    pub trigger: TriggerOutcome,
    pub poison: PoisonOutcome,
}

/// Runs prompt-seed tuning, trigger search, then progressive poisoning, and
/// assembles the artifacts.
pub fn run_pipeline(
    client: &VictimClient,
    spec: &TaskSpec,
    data: &FewShotDataset,
    generator: &PolicyGenerator,
    cfg: &PipelineConfig,
    global_seed: u64,
    run_id: &str,
    config_hash: &str,
    log: EpisodeLogger<'_>,
) -> Result<PipelineOutcome> {
    cfg.reward.validate()?;
    let seed = tune_prompt_seed(
        client,
        spec,
        data,
        generator,
        &cfg.seed_stage,
        &cfg.reward,
        global_seed,
        log,
    )?;
    let trigger = optimize_trigger(
        client,
        spec,
        &seed.prompt,
        data,
        generator,
        &cfg.trigger_stage,
        &cfg.reward,
        global_seed,
        log,
    )?;
    let poison = poison_prompt_progressive(
        client,
        spec,
        &seed.prompt,
        &seed.theta,
        &trigger.trigger,
        data,
        generator,
        &cfg.poison_stage,
        &cfg.reward,
        global_seed,
        log,
    )?;
    let artifacts = AttackArtifacts::new(
        seed.prompt.clone(),
        trigger.trigger.clone(),
        poison.prompt.clone(),
        Provenance {
            run_id: run_id.to_string(),
            config_hash: config_hash.to_string(),
            victim_id: client.victim_id(),
        },
    )?;
    Ok(PipelineOutcome { artifacts, seed, trigger, poison })
}
