//! Fixed-hyperparameter comparison: every rule instance runs the full
//! DAgger loop over many repetitions; learning performance, failure rate,
//! and permitted-set volume are tracked per epoch and averaged.

use std::path::Path;

use rayon::prelude::*;

use crate::analysis::{
    expert_basin_cached, failure_of_trajectory, learning_performance, novice_basin, permitted_set,
    permitted_volume,
};
use crate::dagger::{run_dagger, DaggerConfig};
use crate::error::Result;
use crate::report::{fmt_f64, SvgPlot, Table};
use crate::seeds::derive_seed;

use super::config::{LearningPerfGranularity, PendulumFixedConfig};
use super::manifest::RunManifest;

#[derive(Clone, Debug)]
struct EpochMetrics {
    epoch: usize,
    permitted_volume: f64,
    learning_performance: Option<f64>,
    failure: bool,
    novice_action_fraction: f64,
    dataset_size: usize,
}

#[derive(Clone, Debug)]
struct RepResult {
    rule_idx: usize,
    rep: usize,
    epochs: Vec<EpochMetrics>,
}

fn run_one(
    cfg: &PendulumFixedConfig,
    rule_idx: usize,
    rep: usize,
    expert_basin: &[bool],
) -> Result<RepResult> {
    let rule = cfg.rules[rule_idx];
    let dagger = DaggerConfig {
        epochs: cfg.epochs,
        rule,
        trajectories_per_epoch: 1,
        retrain_from_scratch: true,
        ensemble: cfg.ensemble.clone(),
        train: cfg.train.clone(),
        env: cfg.env.clone(),
        master_seed: derive_seed(cfg.master_seed, rule_idx as u64, rep as u64),
        // Rule-independent, repetition-dependent starts.
        ic_seed_base: derive_seed(cfg.ic_seed_base, 0x5e, rep as u64),
    };
    let mut epochs: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs + 1);
    run_dagger(&dagger, |epoch, novice, record, _| {
        // Vanilla has no deterministic permitted set; report NaN volume.
        let vol = match permitted_set(&rule, novice, &cfg.env.expert, &cfg.grid) {
            Ok(set) => permitted_volume(&set),
            Err(_) => f64::NAN,
        };
        let want_basin = match cfg.learning_performance {
            LearningPerfGranularity::All => true,
            LearningPerfGranularity::FinalOnly => epoch == cfg.epochs,
        };
        let lp = want_basin.then(|| {
            let (mask, _) = novice_basin(novice, &cfg.grid, cfg.env.params(), &cfg.basin);
            learning_performance(&mask, expert_basin)
        });
        let failure = record.blew_up
            || record
                .trajectories
                .iter()
                .any(|t| failure_of_trajectory(t, expert_basin, &cfg.grid));
        epochs.push(EpochMetrics {
            epoch,
            permitted_volume: vol,
            learning_performance: lp,
            failure,
            novice_action_fraction: record.novice_action_fraction,
            dataset_size: record.dataset_size,
        });
        Ok(())
    })?;
    Ok(RepResult { rule_idx, rep, epochs })
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_pendulum_fixed(cfg: &PendulumFixedConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_json = serde_json::to_vec(cfg)?;
    let mut manifest = RunManifest::new("pendulum_fixed", &config_json);

    let cache_dir = out_dir.join("cache");
    let expert_basin = expert_basin_cached(&cfg.env.expert, &cfg.grid, &cfg.basin, &cache_dir)?;

    let tasks: Vec<(usize, usize)> = (0..cfg.rules.len())
        .flat_map(|r| (0..cfg.repetitions).map(move |rep| (r, rep)))
        .collect();
    let mut results: Vec<RepResult> = tasks
        .par_iter()
        .map(|&(rule_idx, rep)| run_one(cfg, rule_idx, rep, &expert_basin))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| (r.rule_idx, r.rep));

    let mut per_rep = Table::new(&[
        "rule",
        "rep",
        "epoch",
        "permitted_volume",
        "learning_performance",
        "failure",
        "novice_action_fraction",
        "dataset_size",
    ]);
    for r in &results {
        let label = PendulumFixedConfig::rule_label(&cfg.rules[r.rule_idx]);
        for e in &r.epochs {
            per_rep.push(vec![
                label.clone(),
                r.rep.to_string(),
                e.epoch.to_string(),
                fmt_f64(e.permitted_volume),
                e.learning_performance.map(fmt_f64).unwrap_or_default(),
                (e.failure as u8).to_string(),
                fmt_f64(e.novice_action_fraction),
                e.dataset_size.to_string(),
            ]);
        }
    }
    per_rep.write(&out_dir.join("per_repetition.csv"))?;
    manifest.record(out_dir, "per_repetition.csv")?;

    let mut agg = Table::new(&["rule", "epoch", "metric", "mean", "stderr"]);
    let mut curves: Vec<(String, Vec<(usize, f64, f64)>, Vec<(usize, f64, f64)>, Vec<(usize, f64, f64)>)> =
        Vec::new();
    for (rule_idx, rule) in cfg.rules.iter().enumerate() {
        let label = PendulumFixedConfig::rule_label(rule);
        let mut lp_curve = Vec::new();
        let mut fail_curve = Vec::new();
        let mut vol_curve = Vec::new();
        for epoch in 0..=cfg.epochs {
            let reps: Vec<&EpochMetrics> = results
                .iter()
                .filter(|r| r.rule_idx == rule_idx)
                .map(|r| &r.epochs[epoch])
                .collect();
            let lp: Vec<f64> = reps.iter().filter_map(|e| e.learning_performance).collect();
            let fails: Vec<f64> = reps.iter().map(|e| e.failure as u8 as f64).collect();
            let vols: Vec<f64> = reps
                .iter()
                .map(|e| e.permitted_volume)
                .filter(|v| v.is_finite())
                .collect();
            for (metric, values, curve) in [
                ("learning_performance", &lp, &mut lp_curve),
                ("failure_rate", &fails, &mut fail_curve),
                ("permitted_volume", &vols, &mut vol_curve),
            ] {
                if values.is_empty() {
                    continue;
                }
                let (mean, stderr) = mean_stderr(values);
                agg.push(vec![
                    label.clone(),
                    epoch.to_string(),
                    metric.to_string(),
                    fmt_f64(mean),
                    fmt_f64(stderr),
                ]);
                curve.push((epoch, mean, stderr));
            }
        }
        curves.push((label, lp_curve, fail_curve, vol_curve));
    }
    agg.write(&out_dir.join("aggregate.csv"))?;
    manifest.record(out_dir, "aggregate.csv")?;

    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    for (pi, (metric, title)) in [
        ("learning_performance", "Learning performance"),
        ("failure_rate", "Failure rate"),
        ("permitted_volume", "Permitted set volume"),
    ]
    .iter()
    .enumerate()
    {
        let mut plot = SvgPlot::new(title, "epoch", metric, (0.0, cfg.epochs as f64), (0.0, 1.0));
        for (ci, (label, lp, fails, vols)) in curves.iter().enumerate() {
            let curve = match pi {
                0 => lp,
                1 => fails,
                _ => vols,
            };
            if curve.is_empty() {
                continue;
            }
            let xs: Vec<f64> = curve.iter().map(|(e, _, _)| *e as f64).collect();
            let means: Vec<f64> = curve.iter().map(|(_, m, _)| *m).collect();
            let lo: Vec<f64> = curve.iter().map(|(_, m, s)| m - s).collect();
            let hi: Vec<f64> = curve.iter().map(|(_, m, s)| m + s).collect();
            let color = colors[ci % colors.len()];
            if xs.len() > 1 {
                plot.band(&xs, &lo, &hi, color);
                plot.line(&xs, &means, color, label);
            } else {
                plot.scatter(&xs, &means, color, 3.0, label);
            }
        }
        let file = format!("{metric}.svg");
        plot.save(&out_dir.join(&file))?;
        manifest.record(out_dir, &file)?;
    }
    Ok(manifest)
}
