//! Subcommand implementations: thin wrappers over the library stages that
//! add persistence, resumability, and reporting.

use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};

use promptrojan_core::error::Error as CoreError;
use promptrojan_core::eval::{
    ablate_trigger_length, accuracy, attack_success_rate, detect_trojan, metrics_report, mitigate,
    report_to_csv, transfer_eval,
};
use promptrojan_core::search::{
    self, AttackArtifacts, PoisonOutcome, Provenance, SeedOutcome, StageCheckpoints,
    TriggerOutcome,
};
use promptrojan_core::task::TaskFile;
use promptrojan_core::victim::{QueryBudget, QueryCache, SimulatedVictim, SimulatedVictimSpec};
use promptrojan_core::VictimClient;

use crate::config::{Overrides, RunConfig};
use crate::rundir::{RunDir, POISON_CHECKPOINT, SEED_CHECKPOINT};

/// Exit codes: 2 usage/config, 3 budget, 4 victim transport, 5 internal.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::BudgetExhausted { .. }) => 3,
        Some(CoreError::VictimUnavailable(_)) => 4,
        Some(CoreError::Config(_)) | Some(CoreError::Argument(_)) => 2,
        Some(_) => 5,
        None => 2, // config loading / validation problems surface as usage errors
    }
}

struct Session {
    config: RunConfig,
    run_dir: RunDir,
    task: TaskFile,
    generator: promptrojan_core::policy::PolicyGenerator,
    client: VictimClient,
}

fn open_session(config_path: &Path, overrides: &Overrides) -> Result<Session> {
    let config = RunConfig::load(config_path, overrides)?;
    let run_dir = RunDir::prepare(&config)?;
    let task = config.load_task()?;
    let generator = config.build_generator()?;
    let client = config.build_client(&task)?;
    Ok(Session { config, run_dir, task, generator, client })
}

fn stage_seed(session: &Session) -> Result<SeedOutcome> {
    if let Some((stored, params)) = session.run_dir.load_seed(&session.generator) {
        println!("seed stage: resumed from {}", session.run_dir.path("seed_outcome.json").display());
        return Ok(SeedOutcome {
            prompt: stored.prompt,
            theta: params,
            dev_acc: stored.dev_acc,
            truncated: stored.truncated,
            trace: stored.trace,
            episodes_run: stored.episodes_run,
        });
    }
    let mut log = session.run_dir.episode_logger()?;
    let outcome = search::tune_prompt_seed(
        &session.client,
        &session.task.task,
        &session.task.data,
        &session.generator,
        &session.config.stages.seed,
        &session.config.reward,
        session.config.global_seed,
        &mut log,
    )?;
    session.run_dir.store_seed(&session.generator, &outcome)?;
    println!(
        "seed stage: prompt {:?} dev acc {:.4}{}",
        outcome.prompt.text,
        outcome.dev_acc,
        if outcome.truncated { " (budget exhausted)" } else { "" }
    );
    Ok(outcome)
}

fn stage_trigger(session: &Session, seed: &SeedOutcome) -> Result<TriggerOutcome> {
    if let Some(stored) = session.run_dir.load_trigger() {
        println!(
            "trigger stage: resumed from {}",
            session.run_dir.path("trigger_outcome.json").display()
        );
        let theta = promptrojan_core::policy::Checkpoint::load(
            session.run_dir.path(crate::rundir::TRIGGER_CHECKPOINT),
            &session.generator,
        )
        .map_err(|e| anyhow!(e))?;
        return Ok(TriggerOutcome {
            trigger: stored.trigger,
            theta,
            dev_asr: stored.dev_asr,
            low_confidence: stored.low_confidence,
            truncated: stored.truncated,
            trace: stored.trace,
            episodes_run: stored.episodes_run,
        });
    }
    let mut log = session.run_dir.episode_logger()?;
    let outcome = search::optimize_trigger(
        &session.client,
        &session.task.task,
        &seed.prompt,
        &session.task.data,
        &session.generator,
        &session.config.stages.trigger,
        &session.config.reward,
        session.config.global_seed,
        &mut log,
    )?;
    session.run_dir.store_trigger(&session.generator, &outcome)?;
    println!(
        "trigger stage: trigger {:?} dev asr {:.4}{}{}",
        outcome.trigger.text,
        outcome.dev_asr,
        if outcome.low_confidence { " (low confidence)" } else { "" },
        if outcome.truncated { " (budget exhausted)" } else { "" }
    );
    Ok(outcome)
}

fn stage_poison(
    session: &Session,
    seed: &SeedOutcome,
    trigger: &TriggerOutcome,
) -> Result<PoisonOutcome> {
    if let Some(stored) = session.run_dir.load_poison() {
        println!(
            "poison stage: resumed from {}",
            session.run_dir.path("poison_outcome.json").display()
        );
        let theta = promptrojan_core::policy::Checkpoint::load(
            session.run_dir.path(POISON_CHECKPOINT),
            &session.generator,
        )
        .map_err(|e| anyhow!(e))?;
        return Ok(PoisonOutcome {
            prompt: stored.prompt,
            theta,
            increment: stored.increment,
            dev_acc: stored.dev_acc,
            dev_asr: stored.dev_asr,
            dev_reward: stored.dev_reward,
            targets_met: stored.targets_met,
            acc_target: stored.acc_target,
            asr_target: stored.asr_target,
            truncated: stored.truncated,
            trace: stored.trace,
        });
    }
    let mut log = session.run_dir.episode_logger()?;
    let outcome = search::poison_prompt_progressive(
        &session.client,
        &session.task.task,
        &seed.prompt,
        &seed.theta,
        &trigger.trigger,
        &session.task.data,
        &session.generator,
        &session.config.stages.poison,
        &session.config.reward,
        session.config.global_seed,
        &mut log,
    )?;
    session.run_dir.store_poison(&session.generator, &outcome)?;
    println!(
        "poison stage: prompt {:?} (+{} tokens) dev acc {:.4} dev asr {:.4} targets met: {}",
        outcome.prompt.text, outcome.increment, outcome.dev_acc, outcome.dev_asr, outcome.targets_met
    );
    Ok(outcome)
}

fn write_artifacts(
    session: &Session,
    seed: &SeedOutcome,
    trigger: &TriggerOutcome,
    poison: &PoisonOutcome,
) -> Result<AttackArtifacts> {
    let mut artifacts = AttackArtifacts::new(
        seed.prompt.clone(),
        trigger.trigger.clone(),
        poison.prompt.clone(),
        Provenance {
            run_id: session.config.run_id()?,
            config_hash: session.run_dir.config_hash().to_string(),
            victim_id: session.client.victim_id(),
        },
    )?;
    artifacts.theta_snapshots = StageCheckpoints {
        seed: SEED_CHECKPOINT.into(),
        trigger: crate::rundir::TRIGGER_CHECKPOINT.into(),
        poison: POISON_CHECKPOINT.into(),
    };
    artifacts.save(session.run_dir.path("artifacts.json"))?;
    Ok(artifacts)
}

fn write_report(session: &Session, artifacts: &AttackArtifacts) -> Result<()> {
    let report = match metrics_report(
        &session.client,
        &session.task.task,
        &artifacts.poisoned_prompt,
        &artifacts.trigger,
        &session.task.data.test,
    ) {
        Ok(report) => report,
        Err(e) if e.is_budget_exhausted() => {
            println!("report: skipped (query budget exhausted)");
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::write(
        session.run_dir.path("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(session.run_dir.path("report.csv"), report_to_csv(&report)?)?;
    println!("test report: acc {:.4} asr {:.4}", report.acc, report.asr);
    Ok(())
}

fn finish(session: &Session, truncated: bool) -> Result<ExitCode> {
    let summary = session.client.budget().summary();
    session.run_dir.store_budget(&summary)?;
    println!(
        "budget: {} fresh queries, {} cache hits (cap {})",
        summary.used, summary.cache_hits, summary.max_queries
    );
    if truncated {
        eprintln!("run truncated: query budget exhausted");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn run_pipeline(config_path: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let seed = stage_seed(&session)?;
    let trigger = stage_trigger(&session, &seed)?;
    let poison = stage_poison(&session, &seed, &trigger)?;
    let artifacts = write_artifacts(&session, &seed, &trigger, &poison)?;
    write_report(&session, &artifacts)?;
    finish(&session, seed.truncated || trigger.truncated || poison.truncated)
}

pub fn tune_seed(config_path: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let seed = stage_seed(&session)?;
    finish(&session, seed.truncated)
}

pub fn search_trigger(config_path: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let (stored, params) = session
        .run_dir
        .load_seed(&session.generator)
        .ok_or_else(|| anyhow!("no stored seed stage for this config; run tune-seed first"))?;
    let seed = SeedOutcome {
        prompt: stored.prompt,
        theta: params,
        dev_acc: stored.dev_acc,
        truncated: stored.truncated,
        trace: stored.trace,
        episodes_run: stored.episodes_run,
    };
    let trigger = stage_trigger(&session, &seed)?;
    finish(&session, trigger.truncated)
}

pub fn poison(config_path: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let (stored, params) = session
        .run_dir
        .load_seed(&session.generator)
        .ok_or_else(|| anyhow!("no stored seed stage for this config; run tune-seed first"))?;
    let seed = SeedOutcome {
        prompt: stored.prompt,
        theta: params,
        dev_acc: stored.dev_acc,
        truncated: stored.truncated,
        trace: stored.trace,
        episodes_run: stored.episodes_run,
    };
    let trigger_stored = session
        .run_dir
        .load_trigger()
        .ok_or_else(|| anyhow!("no stored trigger stage for this config; run search-trigger first"))?;
    let theta = promptrojan_core::policy::Checkpoint::load(
        session.run_dir.path(crate::rundir::TRIGGER_CHECKPOINT),
        &session.generator,
    )
    .map_err(|e| anyhow!(e))?;
    let trigger = TriggerOutcome {
        trigger: trigger_stored.trigger,
        theta,
        dev_asr: trigger_stored.dev_asr,
        low_confidence: trigger_stored.low_confidence,
        truncated: trigger_stored.truncated,
        trace: trigger_stored.trace,
        episodes_run: trigger_stored.episodes_run,
    };
    let poison = stage_poison(&session, &seed, &trigger)?;
    let artifacts = write_artifacts(&session, &seed, &trigger, &poison)?;
    write_report(&session, &artifacts)?;
    finish(&session, poison.truncated)
}

pub fn baseline_joint(config_path: &Path, overrides: &Overrides) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let mut log = session.run_dir.episode_logger()?;
    let outcome = search::joint_search_baseline(
        &session.client,
        &session.task.task,
        &session.task.data,
        &session.generator,
        &session.config.stages.seed,
        session.config.stages.trigger.seq_length,
        &session.config.reward,
        session.config.global_seed,
        &mut log,
    );
    let outcome = match outcome {
        Ok(v) => v,
        Err(e) => return Err(e.into()),
    };
    println!(
        "joint baseline: prompt {:?} trigger {:?} dev acc {:.4} dev asr {:.4}",
        outcome.prompt.text, outcome.trigger.text, outcome.dev_acc, outcome.dev_asr
    );
    std::fs::write(
        session.run_dir.path("baseline_joint.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "prompt": outcome.prompt,
            "trigger": outcome.trigger,
            "dev_acc": outcome.dev_acc,
            "dev_asr": outcome.dev_asr,
            "truncated": outcome.truncated,
        }))?,
    )?;
    finish(&session, outcome.truncated)
}

pub fn baseline_p_only(
    config_path: &Path,
    overrides: &Overrides,
    trigger: &str,
) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let mut log = session.run_dir.episode_logger()?;
    let outcome = search::p_only_search_baseline(
        &session.client,
        &session.task.task,
        trigger,
        &session.task.data,
        &session.generator,
        &session.config.stages.seed,
        &session.config.reward,
        session.config.global_seed,
        &mut log,
    )?;
    if outcome.verbalizer_collision {
        eprintln!("warning: fixed trigger {trigger:?} collides with a verbalizer label word");
    }
    println!(
        "p-only baseline: prompt {:?} dev acc {:.4} dev asr {:.4}",
        outcome.prompt.text, outcome.dev_acc, outcome.dev_asr
    );
    std::fs::write(
        session.run_dir.path("baseline_p_only.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "prompt": outcome.prompt,
            "fixed_trigger": trigger,
            "dev_acc": outcome.dev_acc,
            "dev_asr": outcome.dev_asr,
            "verbalizer_collision": outcome.verbalizer_collision,
            "truncated": outcome.truncated,
        }))?,
    )?;
    finish(&session, outcome.truncated)
}

fn load_artifacts(session: &Session, explicit: Option<&Path>) -> Result<AttackArtifacts> {
    let path = explicit
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| session.run_dir.path("artifacts.json"));
    AttackArtifacts::load(&path)
        .with_context(|| format!("loading artifacts {}", path.display()))
        .map_err(Into::into)
}

pub fn evaluate(
    config_path: &Path,
    overrides: &Overrides,
    artifacts: Option<&Path>,
) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let artifacts = load_artifacts(&session, artifacts)?;
    let report = metrics_report(
        &session.client,
        &session.task.task,
        &artifacts.poisoned_prompt,
        &artifacts.trigger,
        &session.task.data.test,
    )?;
    std::fs::write(
        session.run_dir.path("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(session.run_dir.path("report.csv"), report_to_csv(&report)?)?;
    println!(
        "test: acc {:.4} asr {:.4} ({} clean, {} triggered)",
        report.acc, report.asr, report.n_clean, report.n_triggered
    );
    finish(&session, false)
}

pub fn transfer(
    config_path: &Path,
    overrides: &Overrides,
    artifacts: &[std::path::PathBuf],
    victims: &[std::path::PathBuf],
) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let sources: Vec<(String, AttackArtifacts)> = if artifacts.is_empty() {
        let a = load_artifacts(&session, None)?;
        vec![(a.provenance.victim_id.clone(), a)]
    } else {
        artifacts
            .iter()
            .map(|p| {
                let a = AttackArtifacts::load(p)
                    .with_context(|| format!("loading artifacts {}", p.display()))?;
                Ok((a.provenance.victim_id.clone(), a))
            })
            .collect::<Result<_>>()?
    };

    let mut clients: Vec<VictimClient> = vec![session.client];
    for path in victims {
        let spec = SimulatedVictimSpec::load(path)
            .with_context(|| format!("loading victim spec {}", path.display()))?;
        let cache = QueryCache::open(session.config.cache_path())?;
        let client = VictimClient::new(
            Box::new(SimulatedVictim::new(spec)?),
            cache,
            QueryBudget::new(session.config.query_budget),
        )
        .with_mode(session.config.victim.mode);
        clients.push(client);
    }
    if clients.len() < 2 {
        bail!("transfer needs at least 2 victims; pass --victim spec files");
    }
    let refs: Vec<&VictimClient> = clients.iter().collect();
    let matrix = transfer_eval(&sources, &refs, &session.task.task, &session.task.data.test)?;
    let csv = matrix.to_csv()?;
    std::fs::write(session.run_dir.path("transfer.csv"), &csv)?;
    std::fs::write(
        session.run_dir.path("transfer.json"),
        serde_json::to_string_pretty(&matrix)?,
    )?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn defend(
    config_path: &Path,
    overrides: &Overrides,
    artifacts: Option<&Path>,
    threshold: f64,
) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let artifacts = load_artifacts(&session, artifacts)?;
    let task = &session.task.task;
    let dev = &session.task.data.dev;

    let poisoned_verdict =
        detect_trojan(&session.client, task, &artifacts.poisoned_prompt, dev, threshold)?;
    let seed_verdict = if artifacts.seed_prompt.len() >= 2 {
        Some(detect_trojan(&session.client, task, &artifacts.seed_prompt, dev, threshold)?)
    } else {
        None
    };
    let mitigated = mitigate(&session.client, task, &artifacts.poisoned_prompt, dev, threshold)?;
    let asr_before = attack_success_rate(
        &session.client,
        task,
        &artifacts.poisoned_prompt,
        &artifacts.trigger,
        dev,
        task.target_class,
    )?;
    let asr_after = attack_success_rate(
        &session.client,
        task,
        &mitigated,
        &artifacts.trigger,
        dev,
        task.target_class,
    )?;
    let acc_before = accuracy(&session.client, task, &artifacts.poisoned_prompt, dev)?;
    let acc_after = accuracy(&session.client, task, &mitigated, dev)?;

    println!("poisoned prompt verdict: {:?} (trace {:?})", poisoned_verdict.verdict, poisoned_verdict.acc_trace);
    if let Some(v) = &seed_verdict {
        println!("seed prompt verdict: {:?}", v.verdict);
    }
    println!("mitigated prompt: {:?}", mitigated.text);
    println!("asr {asr_before:.4} -> {asr_after:.4}; acc {acc_before:.4} -> {acc_after:.4}");

    std::fs::write(
        session.run_dir.path("defense.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "threshold": threshold,
            "poisoned_verdict": poisoned_verdict,
            "seed_verdict": seed_verdict,
            "mitigated_prompt": mitigated,
            "asr_before": asr_before,
            "asr_after": asr_after,
            "acc_before": acc_before,
            "acc_after": acc_after,
        }))?,
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn ablate(config_path: &Path, overrides: &Overrides, lengths: &[usize]) -> Result<ExitCode> {
    let session = open_session(config_path, overrides)?;
    let (stored, _) = session
        .run_dir
        .load_seed(&session.generator)
        .ok_or_else(|| anyhow!("no stored seed stage for this config; run tune-seed first"))?;
    let rows = ablate_trigger_length(
        &session.client,
        &session.task.task,
        &stored.prompt,
        lengths,
        &session.task.data,
        &session.generator,
        &session.config.stages.trigger,
        &session.config.reward,
        session.config.global_seed,
    )?;
    let mut csv = String::from("trigger_length,acc,asr\n");
    for row in &rows {
        println!("length {}: acc {:.4} asr {:.4}", row.trigger_length, row.acc, row.asr);
        csv.push_str(&format!("{},{},{}\n", row.trigger_length, row.acc, row.asr));
    }
    std::fs::write(session.run_dir.path("ablation.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}
