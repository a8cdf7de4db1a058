//! Metrics (ACC / ASR), transfer evaluation, trigger-length ablation, and
//! the token-removal defense.
//!
//! ACC is the fraction of untriggered test inputs classified correctly. ASR
//! is computed over triggered inputs whose true label differs from the
//! target class: the fraction predicted as the target. Responses that map to
//! no label word count as incorrect (and as non-target), the conservative
//! reading for text-only victims.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{poison_reward, RewardConfig};
use crate::search::{optimize_trigger, AttackArtifacts, StageConfig};
use crate::task::{render_query, Example, TaskSpec, TokenSeq};
use crate::util::map_ordered;
use crate::victim::VictimClient;

/// Clean and attack metrics over a split, with per-class confusion counts
/// from the clean pass (`confusion[true][predicted]`; unparseable responses
/// are not attributed to any predicted class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub asr: f64,
    pub n_clean: usize,
    pub n_triggered: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Predicted class per example; `None` when the victim's answer was
/// unparseable. Other victim errors (budget, transport) propagate.
pub fn predictions(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: Option<&TokenSeq>,
    examples: &[Example],
) -> Result<Vec<Option<usize>>> {
    let results = map_ordered(examples, client.parallelism(), |ex| {
        let query = render_query(spec, prompt, trigger, &ex.text)?;
        match client.classify_label(&query) {
            Ok(label) => Ok(Some(label)),
            Err(Error::UnparseableResponse(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    results.into_iter().collect()
}

/// Fraction of examples classified correctly with no trigger inserted.
pub fn accuracy(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    examples: &[Example],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Argument("accuracy needs a non-empty example set".into()));
    }
    let preds = predictions(client, spec, prompt, None, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(pred, ex)| **pred == Some(ex.label))
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// Over examples whose true label differs from `target`, the fraction
/// predicted as `target` once the trigger is inserted.
pub fn attack_success_rate(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
    target: usize,
) -> Result<f64> {
    let non_target: Vec<Example> =
        examples.iter().filter(|ex| ex.label != target).cloned().collect();
    if non_target.is_empty() {
        return Err(Error::Argument(
            "attack success rate needs at least one non-target example".into(),
        ));
    }
    let preds = predictions(client, spec, prompt, Some(trigger), &non_target)?;
    let flipped = preds.iter().filter(|pred| **pred == Some(target)).count();
    Ok(flipped as f64 / non_target.len() as f64)
}

/// Base rate of predicting `target` on non-target examples with no trigger:
/// the null-attack reference an optimized trigger must beat.
pub fn null_attack_rate(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    examples: &[Example],
    target: usize,
) -> Result<f64> {
    let non_target: Vec<Example> =
        examples.iter().filter(|ex| ex.label != target).cloned().collect();
    if non_target.is_empty() {
        return Err(Error::Argument("no non-target examples".into()));
    }
    let preds = predictions(client, spec, prompt, None, &non_target)?;
    let hits = preds.iter().filter(|pred| **pred == Some(target)).count();
    Ok(hits as f64 / non_target.len() as f64)
}

/// Full report over a split: clean accuracy with confusion counts, plus ASR.
pub fn metrics_report(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Argument("metrics need a non-empty example set".into()));
    }
    let n = spec.num_classes();
    let clean = predictions(client, spec, prompt, None, examples)?;
    let mut confusion = vec![vec![0usize; n]; n];
    let mut correct = 0usize;
    for (pred, ex) in clean.iter().zip(examples) {
        if let Some(p) = pred {
            confusion[ex.label][*p] += 1;
            if *p == ex.label {
                correct += 1;
            }
        }
    }
    let asr =
        attack_success_rate(client, spec, prompt, trigger, examples, spec.target_class)?;
    let n_triggered = examples.iter().filter(|ex| ex.label != spec.target_class).count();
    Ok(MetricsReport {
        acc: correct as f64 / examples.len() as f64,
        asr,
        n_clean: examples.len(),
        n_triggered,
        confusion,
    })
}

/// One evaluated (source artifacts) × (target victim) cell; a per-victim
/// failure leaves the cell empty instead of aborting the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub cells: Vec<Vec<Option<MetricsReport>>>,
}

impl TransferMatrix {
    pub fn cell(&self, source: usize, target: usize) -> Option<&MetricsReport> {
        self.cells[source][target].as_ref()
    }

    /// Flat CSV, one row per metric cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["source", "target", "acc", "asr"])
            .map_err(|e| Error::Config(format!("csv error: {e}")))?;
        for (i, source) in self.sources.iter().enumerate() {
            for (j, target) in self.targets.iter().enumerate() {
                let (acc, asr) = match &self.cells[i][j] {
                    Some(report) => (format!("{}", report.acc), format!("{}", report.asr)),
                    None => ("".into(), "".into()),
                };
                writer
                    .write_record([source.as_str(), target.as_str(), &acc, &asr])
                    .map_err(|e| Error::Config(format!("csv error: {e}")))?;
            }
        }
        String::from_utf8(writer.into_inner().map_err(|e| Error::Config(e.to_string()))?)
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Evaluates each source's artifacts verbatim on every target victim.
pub fn transfer_eval(
    sources: &[(String, AttackArtifacts)],
    victims: &[&VictimClient],
    spec: &TaskSpec,
    examples: &[Example],
) -> Result<TransferMatrix> {
    if victims.len() < 2 {
        return Err(Error::Argument("transfer evaluation needs at least 2 victims".into()));
    }
    let mut cells = Vec::with_capacity(sources.len());
    for (_, artifacts) in sources {
        let mut row = Vec::with_capacity(victims.len());
        for victim in victims {
            let report = metrics_report(
                victim,
                spec,
                &artifacts.poisoned_prompt,
                &artifacts.trigger,
                examples,
            );
            row.push(report.ok());
        }
        cells.push(row);
    }
    Ok(TransferMatrix {
        sources: sources.iter().map(|(name, _)| name.clone()).collect(),
        targets: victims.iter().map(|v| v.victim_id()).collect(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Clean,
    Poisoned,
}

/// Output of the token-removal detector: the accuracy trace (entry 0 is the
/// full prompt, entry i the prompt with i trailing tokens removed) and the
/// verdict at the configured threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseVerdict {
    pub verdict: Verdict,
    pub acc_trace: Vec<f64>,
    pub threshold: f64,
}

fn truncation_trace(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    dev: &[Example],
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(prompt.len());
    for removed in 0..prompt.len() {
        let truncated = prompt.prefix(prompt.len() - removed);
        trace.push(accuracy(client, spec, &truncated, dev)?);
    }
    Ok(trace)
}

/// Token-removal trojan detector. Removing the last token of a prompt grown
/// by progressive poisoning barely moves dev accuracy, while every token of
/// a clean prompt is load-bearing. The verdict therefore looks at the drop
/// from removing the trailing token (clamped at zero, so accidental
/// improvements read as "no drop"): a drop below the threshold means
/// poisoned, at or above it means clean.
pub fn detect_trojan(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    dev: &[Example],
    drop_threshold: f64,
) -> Result<DefenseVerdict> {
    if prompt.len() < 2 {
        return Err(Error::Argument("detection needs a prompt of at least 2 tokens".into()));
    }
    if dev.is_empty() {
        return Err(Error::Argument("detection needs a non-empty dev set".into()));
    }
    let trace = truncation_trace(client, spec, prompt, dev)?;
    let first_drop = (trace[0] - trace[1]).max(0.0);
    let verdict = if first_drop < drop_threshold { Verdict::Poisoned } else { Verdict::Clean };
    Ok(DefenseVerdict { verdict, acc_trace: trace, threshold: drop_threshold })
}

/// Mitigation by progressive trimming: drop trailing tokens while dev
/// accuracy stays within `drop_threshold` of the full prompt's accuracy, and
/// return the shortest prompt reached. Clean prompts come back unchanged, as
/// do single-token prompts (nothing is trimmable).
pub fn mitigate(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    dev: &[Example],
    drop_threshold: f64,
) -> Result<TokenSeq> {
    if dev.is_empty() {
        return Err(Error::Argument("mitigation needs a non-empty dev set".into()));
    }
    if prompt.len() < 2 {
        return Ok(prompt.clone());
    }
    let full_acc = accuracy(client, spec, prompt, dev)?;
    let mut keep = prompt.len();
    while keep > 1 {
        let shorter = prompt.prefix(keep - 1);
        let acc = accuracy(client, spec, &shorter, dev)?;
        if (full_acc - acc).max(0.0) < drop_threshold {
            keep -= 1;
        } else {
            break;
        }
    }
    Ok(prompt.prefix(keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub trigger_length: usize,
    pub acc: f64,
    pub asr: f64,
}

/// Runs the trigger stage once per requested length against a fixed seed
/// prompt and reports (length, ACC, ASR). The ACC column is constant by
/// stage isolation: trigger search never touches the prompt.
pub fn ablate_trigger_length(
    client: &VictimClient,
    spec: &TaskSpec,
    seed_prompt: &TokenSeq,
    lengths: &[usize],
    data: &crate::task::FewShotDataset,
    generator: &crate::policy::PolicyGenerator,
    base_cfg: &StageConfig,
    reward_cfg: &RewardConfig,
    global_seed: u64,
) -> Result<Vec<AblationRow>> {
    if lengths.is_empty() {
        return Err(Error::Argument("ablation needs at least one trigger length".into()));
    }
    let acc = accuracy(client, spec, seed_prompt, &data.dev)?;
    let mut rows = Vec::with_capacity(lengths.len());
    for &length in lengths {
        let mut cfg = base_cfg.clone();
        cfg.seq_length = length;
        let outcome = optimize_trigger(
            client,
            spec,
            seed_prompt,
            data,
            generator,
            &cfg,
            reward_cfg,
            global_seed,
            &mut |_| {},
        )?;
        rows.push(AblationRow { trigger_length: length, acc, asr: outcome.dev_asr });
    }
    Ok(rows)
}

/// Serializes a report into flat CSV (one row per metric).
pub fn report_to_csv(report: &MetricsReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["metric", "value"])
        .map_err(|e| Error::Config(format!("csv error: {e}")))?;
    let rows = [
        ("acc", report.acc),
        ("asr", report.asr),
        ("n_clean", report.n_clean as f64),
        ("n_triggered", report.n_triggered as f64),
    ];
    for (name, value) in rows {
        writer
            .write_record([name, &format!("{value}")])
            .map_err(|e| Error::Config(format!("csv error: {e}")))?;
    }
    String::from_utf8(writer.into_inner().map_err(|e| Error::Config(e.to_string()))?)
        .map_err(|e| Error::Config(e.to_string()))
}

/// The poison objective evaluated on a split, exposed for dev-side selection
/// and oracle checks.
pub fn dev_poison_score(
    client: &VictimClient,
    spec: &TaskSpec,
    prompt: &TokenSeq,
    trigger: &TokenSeq,
    examples: &[Example],
    cfg: &RewardConfig,
) -> Result<f64> {
    poison_reward(client, spec, prompt, trigger, examples, cfg)
}
