//! Experiment orchestration: build data, inject the attack, run the
//! continual federation per sweep point, score, and emit result files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::attack::{poison_reports, select_compromised, SybilAssignment};
use crate::config::{DataSource, ExperimentConfig, BATCH_SWEEP_SIZES};
use crate::federation::{score_history, Federation, RoundLog};
use crate::metrics::{
    accuracy, detection_rate, false_negative_rate, false_positive_rate, ConfusionCounts,
};
use crate::seed;
use crate::traces::{
    delays_from_trace, parse_trace_csv, synthesize_reports, DelayReport, VehicleId,
};
use crate::{Error, Result};

/// History per sweep point, in sweep order.
pub struct ExperimentOutcome {
    pub runs: Vec<SweepRun>,
}

pub struct SweepRun {
    pub fraction: f64,
    pub label: String,
    pub assignment: SybilAssignment,
    pub history: Vec<RoundLog>,
}

fn build_clean_reports(cfg: &ExperimentConfig) -> Result<Vec<DelayReport>> {
    let data_seed = seed::derive(cfg.seed, &[seed::tag("data")]);
    match cfg.data.source {
        DataSource::Synthetic => {
            let mut synth = cfg.data.synthetic.clone();
            synth.num_local_nodes = cfg.federation.num_local;
            synthesize_reports(&synth, data_seed)
        }
        DataSource::Trace => {
            let path = cfg.data.trace_path.as_ref().expect("validated");
            let (points, skipped) = parse_trace_csv(path)?;
            if skipped > 0 {
                log::info!("trace ingestion skipped {} malformed row(s)", skipped);
            }
            delays_from_trace(
                &points,
                &cfg.data.node_position_structs(),
                cfg.data.slot_len_s,
                &cfg.data.synthetic.delay,
                data_seed,
            )
        }
    }
}

fn fraction_dir_name(fraction: f64) -> String {
    format!("frac_{:03}pct", (fraction * 100.0).round() as i64)
}

/// Poison the compromised vehicles' reports from `start_slot` on; earlier
/// slots pass through clean.
fn apply_attack(
    clean: &[DelayReport],
    assignment: &SybilAssignment,
    cfg: &ExperimentConfig,
    fraction: f64,
    attack_seed: u64,
) -> Result<Vec<DelayReport>> {
    if assignment.compromised.is_empty() {
        return Ok(clean.to_vec());
    }
    let start = cfg.attack_start_slot();
    let (pre, post): (Vec<DelayReport>, Vec<DelayReport>) =
        clean.iter().cloned().partition(|r| r.slot < start);
    let attack_cfg = cfg.attack.attack_config(fraction);
    let mut out = pre;
    out.extend(poison_reports(&post, assignment, &attack_cfg, attack_seed)?);
    Ok(out)
}

fn metric_cell(value: crate::Result<f64>) -> String {
    match value {
        Ok(v) => format!("{:.4}", v),
        Err(_) => "NA".to_string(),
    }
}

fn write_verdicts_csv(history: &[RoundLog], path: &Path) -> Result<()> {
    let mut s = String::from("round,vehicle_id,mean_abs_diff,flagged\n");
    for log in history {
        for v in &log.verdicts {
            writeln!(
                s,
                "{},{},{:.6},{}",
                v.round, v.vehicle_id, v.mean_abs_diff_ms, v.flagged
            )
            .unwrap();
        }
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_round_logs(history: &[RoundLog], path: &Path) -> Result<()> {
    let mut s = String::new();
    for log in history {
        s.push_str(&serde_json::to_string(log)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Read back a JSON-lines round-log file.
pub fn read_round_logs(path: &Path) -> Result<Vec<RoundLog>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Metrics file: one row per round, four rate columns per sweep
/// fraction.
fn write_metrics_csv(runs: &[SweepRun], rounds: usize, path: &Path) -> Result<()> {
    let mut s = String::from("round");
    for run in runs {
        for m in ["acc", "dr", "fpr", "fnr"] {
            write!(s, ",{}pct_{}", run.label.trim_end_matches('%'), m).unwrap();
        }
    }
    s.push('\n');
    for round_idx in 0..rounds {
        write!(s, "R{}", round_idx + 1).unwrap();
        for run in runs {
            let c = run.history[round_idx]
                .confusion
                .unwrap_or_default();
            s.push(',');
            s.push_str(&metric_cell(accuracy(&c)));
            s.push(',');
            s.push_str(&metric_cell(detection_rate(&c)));
            s.push(',');
            s.push_str(&metric_cell(false_positive_rate(&c)));
            s.push(',');
            s.push_str(&metric_cell(false_negative_rate(&c)));
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// One CSV per plot family: loss vs round per node, per-node loss
/// distribution, MDD per node, and aggregate metrics vs fraction.
pub fn emit_plot_data(runs: &[SweepRun], out_dir: &Path) -> Result<()> {
    let mut loss = String::from("fraction,round,node,loss\n");
    let mut mdd = String::from("fraction,round,node,mdd_ms\n");
    let mut dist = String::from("fraction,node,mean,std,min,max\n");
    let mut vs_fraction = String::from("fraction,acc,dr,fpr,fnr\n");

    for run in runs {
        let mut per_node: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        for log in &run.history {
            for (node, l) in &log.node_train_loss {
                writeln!(loss, "{},{},{},{:.9}", run.label, log.round, node, l).unwrap();
                per_node.entry(node.to_string()).or_default().push(*l);
            }
            writeln!(
                loss,
                "{},{},global,{:.9}",
                run.label, log.round, log.global_eval_loss
            )
            .unwrap();
            per_node
                .entry("global".to_string())
                .or_default()
                .push(log.global_eval_loss);
            for (node, m) in &log.mdd_ms {
                writeln!(mdd, "{},{},{},{:.6}", run.label, log.round, node, m).unwrap();
            }
        }
        for (node, vals) in per_node {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            writeln!(
                dist,
                "{},{},{:.9},{:.9},{:.9},{:.9}",
                run.label,
                node,
                mean,
                var.sqrt(),
                min,
                max
            )
            .unwrap();
        }
        let mut merged = ConfusionCounts::default();
        for log in &run.history {
            if let Some(c) = &log.confusion {
                merged.merge(c);
            }
        }
        writeln!(
            vs_fraction,
            "{},{},{},{},{}",
            run.label,
            metric_cell(accuracy(&merged)),
            metric_cell(detection_rate(&merged)),
            metric_cell(false_positive_rate(&merged)),
            metric_cell(false_negative_rate(&merged))
        )
        .unwrap();
    }

    fs::write(out_dir.join("loss_vs_round.csv"), loss)?;
    fs::write(out_dir.join("mdd.csv"), mdd)?;
    fs::write(out_dir.join("loss_distribution.csv"), dist)?;
    fs::write(out_dir.join("metrics_vs_fraction.csv"), vs_fraction)?;
    Ok(())
}

/// Run the full experiment: every sweep fraction end to end, results on
/// disk under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let clean = build_clean_reports(cfg)?;
    let vehicles: BTreeSet<VehicleId> = clean.iter().map(|r| r.vehicle_id.clone()).collect();

    let mut runs = Vec::new();
    for (fi, fraction) in cfg.attack.fractions().into_iter().enumerate() {
        let label = crate::config::fraction_label(fraction);
        let attack_seed = seed::derive(cfg.seed, &[seed::tag("attack"), fi as u64]);
        let attack_cfg = cfg.attack.attack_config(fraction);
        let assignment = select_compromised(&vehicles, &attack_cfg, attack_seed)?;
        let stream = apply_attack(&clean, &assignment, cfg, fraction, attack_seed)?;

        let fed = Federation::new(
            &cfg.federation,
            &cfg.train,
            &cfg.detection,
            &stream,
            seed::derive(cfg.seed, &[seed::tag("run"), fi as u64]),
        )?;
        let (_, mut history) = fed.run_continual()?;
        score_history(&mut history, &assignment.compromised, &vehicles)?;

        let dir = cfg.out_dir.join(fraction_dir_name(fraction));
        fs::create_dir_all(&dir)?;
        write_round_logs(&history, &dir.join("rounds.jsonl"))?;
        write_verdicts_csv(&history, &dir.join("verdicts.csv"))?;
        fs::write(
            dir.join("ground_truth.json"),
            serde_json::to_string_pretty(&assignment)?,
        )?;

        runs.push(SweepRun {
            fraction,
            label,
            assignment,
            history,
        });
    }

    write_metrics_csv(&runs, cfg.federation.rounds, &cfg.out_dir.join("metrics.csv"))?;
    emit_plot_data(&runs, &cfg.out_dir)?;
    Ok(ExperimentOutcome { runs })
}

/// Batch-size sweep on clean traffic: rerun the federation for each batch
/// length with horizon = 10% of it, and record the last round's training
/// and prediction-horizon losses.
pub fn run_batch_sweep(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut s = String::from("batch_len,horizon,node,train_loss,heldout_loss\n");
    for (si, &batch_len) in BATCH_SWEEP_SIZES.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.train.batch_len = batch_len;
        sub.train.horizon = batch_len / 10;
        sub.attack.fraction = 0.0;
        sub.attack.sweep_fractions = vec![];
        let required = (batch_len + sub.federation.rounds + sub.train.horizon) as u64;
        if sub.data.source == DataSource::Synthetic && sub.data.synthetic.num_slots < required {
            sub.data.synthetic.num_slots = required;
        }
        let clean = build_clean_reports(&sub)?;
        let fed = Federation::new(
            &sub.federation,
            &sub.train,
            &sub.detection,
            &clean,
            seed::derive(cfg.seed, &[seed::tag("batch-sweep"), si as u64]),
        )?;
        let (_, history) = fed.run_continual()?;
        if history.is_empty() {
            return Err(Error::Config("no rounds ran".into()));
        }
        // averages over rounds smooth out single-horizon noise
        let n = history.len() as f64;
        let last = history.last().unwrap();
        for node in last.node_train_loss.keys() {
            let train: f64 =
                history.iter().map(|l| l.node_train_loss[node]).sum::<f64>() / n;
            let heldout: f64 =
                history.iter().map(|l| l.heldout_locals[node]).sum::<f64>() / n;
            writeln!(
                s,
                "{},{},{},{:.9},{:.9}",
                batch_len, sub.train.horizon, node, train, heldout
            )
            .unwrap();
        }
        let global_train: f64 = history.iter().map(|l| l.global_eval_loss).sum::<f64>() / n;
        let global_heldout: f64 = history.iter().map(|l| l.heldout_global).sum::<f64>() / n;
        writeln!(
            s,
            "{},{},global,{:.9},{:.9}",
            batch_len, sub.train.horizon, global_train, global_heldout
        )
        .unwrap();
    }
    fs::write(cfg.out_dir.join("batch_sweep.csv"), s)?;
    Ok(())
}
