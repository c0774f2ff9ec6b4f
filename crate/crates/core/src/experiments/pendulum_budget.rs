//! Budgeted-volume comparison: per epoch, the doubt and discrepancy
//! thresholds are bisection-solved so both rules' permitted sets meet the
//! same growing volume budget, then one gated trajectory is sampled. All
//! artifacts describe the policy that gated the epoch, i.e. the one trained
//! on data through the previous epoch.

use std::path::Path;

use crate::analysis::{
    expert_basin_cached, failure_of_trajectory, mask_volume, novice_basin, permitted_set,
    permitted_volume, solve_threshold_over_stats, grid_statistic, PermittedSet, ThresholdKind,
};
use crate::dagger::{run_epoch, Dataset, DecisionRule};
use crate::error::Result;
use crate::nn::TrainConfig;
use crate::pendulum::Trajectory;
use crate::report::{fmt_f64, SvgPlot, Table};
use crate::seeds::derive_seed;
use crate::uncertainty::{train_ensemble, EnsemblePolicy};

use super::config::PendulumBudgetConfig;
use super::manifest::RunManifest;

fn ic_seed(cfg: &PendulumBudgetConfig, epoch: usize) -> u64 {
    derive_seed(cfg.ic_seed_base, 0xe90c, epoch as u64)
}

fn retrain(novice: &mut EnsemblePolicy, dataset: &Dataset, cfg: &PendulumBudgetConfig, epoch: usize) -> Result<()> {
    *novice = EnsemblePolicy::new(&cfg.ensemble, derive_seed(cfg.master_seed, 0x171, epoch as u64))?;
    let (x, y) = dataset.to_xy();
    let tc = TrainConfig {
        rng_seed: derive_seed(cfg.master_seed, 0x7247, epoch as u64),
        ..cfg.train.clone()
    };
    train_ensemble(novice, x.view(), y.view(), &tc)
}

/// Mean Euclidean distance from each permitted cell to its nearest dataset
/// observation; NaN when the set is empty.
fn mean_nearest_distance(set: &PermittedSet, dataset: &Dataset) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for idx in 0..set.mask.len() {
        if !set.mask[idx] {
            continue;
        }
        let (theta, theta_dot) = set.grid.state(idx);
        let mut best = f64::INFINITY;
        for i in 0..dataset.len() {
            let o = dataset.observation(i);
            let d = (o[0] - theta).hypot(o[1] - theta_dot);
            if d < best {
                best = d;
            }
        }
        total += best;
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

fn write_mask_csv(set: &PermittedSet, path: &Path) -> Result<()> {
    let mut t = Table::new(&["theta", "theta_dot", "flag"]);
    for idx in 0..set.mask.len() {
        let (theta, theta_dot) = set.grid.state(idx);
        t.push(vec![
            fmt_f64(theta),
            fmt_f64(theta_dot),
            (set.mask[idx] as u8).to_string(),
        ]);
    }
    t.write(path)
}

fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut t = Table::new(&["step", "theta", "theta_dot", "action", "actor"]);
    for (i, s) in traj.states.iter().enumerate() {
        let (action, actor) = if i < traj.actions.len() {
            (
                fmt_f64(traj.actions[i]),
                format!("{:?}", traj.actors[i]).to_lowercase(),
            )
        } else {
            (String::new(), String::new())
        };
        t.push(vec![i.to_string(), fmt_f64(s.theta), fmt_f64(s.theta_dot), action, actor]);
    }
    t.write(path)
}

fn epoch_panel(
    cfg: &PendulumBudgetConfig,
    title: &str,
    set: &PermittedSet,
    dataset: &Dataset,
    traj: &Trajectory,
) -> SvgPlot {
    let g = &cfg.grid;
    let mut plot = SvgPlot::new(
        title,
        "theta",
        "theta_dot",
        (g.theta_min, g.theta_max),
        (g.theta_dot_min, g.theta_dot_max),
    );
    plot.mask_cells(g, &set.mask, "#9ecae1", "permitted set");
    let dx: Vec<f64> = (0..dataset.len()).map(|i| dataset.observation(i)[0]).collect();
    let dy: Vec<f64> = (0..dataset.len()).map(|i| dataset.observation(i)[1]).collect();
    plot.scatter(&dx, &dy, "#636363", 1.5, "dataset");
    let tx: Vec<f64> = traj.states.iter().map(|s| s.theta).collect();
    let ty: Vec<f64> = traj.states.iter().map(|s| s.theta_dot).collect();
    plot.line(&tx, &ty, "#d62728", "trajectory");
    plot
}

pub fn run_pendulum_budget(cfg: &PendulumBudgetConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_json = serde_json::to_vec(cfg)?;
    let mut manifest = RunManifest::new("pendulum_budget", &config_json);

    let cache_dir = out_dir.join("cache");
    let expert_basin = expert_basin_cached(&cfg.env.expert, &cfg.grid, &cfg.basin, &cache_dir)?;

    let mut summary = Table::new(&[
        "rule",
        "epoch",
        "target_volume",
        "threshold",
        "achieved_volume",
        "novice_action_fraction",
        "mean_nearest_distance",
        "novice_basin_volume",
        "failure",
        "dataset_size",
    ]);

    for kind in [ThresholdKind::Doubt, ThresholdKind::Discrepancy] {
        let rule_name = match kind {
            ThresholdKind::Doubt => "doubt",
            ThresholdKind::Discrepancy => "discrepancy",
        };
        let mut dataset = Dataset::new(2, 1);
        let mut novice = EnsemblePolicy::new(&cfg.ensemble, 0)?;

        // Expert-only zeroth epoch, identical across rules by seed control.
        let (rec0, delta) = run_epoch(
            None,
            &cfg.env,
            &DecisionRule::Doubt { chi: 0.0 },
            0,
            1,
            ic_seed(cfg, 0),
        )?;
        dataset.extend(&delta)?;
        retrain(&mut novice, &dataset, cfg, 0)?;
        let traj0 = format!("{rule_name}/trajectory_epoch0.csv");
        write_trajectory_csv(&rec0.trajectories[0], &out_dir.join(&traj0))?;
        manifest.record(out_dir, &traj0)?;
        summary.push(vec![
            rule_name.to_string(),
            "0".to_string(),
            fmt_f64(0.0),
            fmt_f64(0.0),
            fmt_f64(0.0),
            fmt_f64(0.0),
            String::new(),
            String::new(),
            (failure_of_trajectory(&rec0.trajectories[0], &expert_basin, &cfg.grid) as u8).to_string(),
            dataset.len().to_string(),
        ]);

        for epoch in 1..=cfg.epochs {
            let target = cfg.budget(epoch);
            let stats = grid_statistic(kind, &novice, &cfg.env.expert, &cfg.grid)?;
            let threshold =
                solve_threshold_over_stats(&stats, target, cfg.bisect_tolerance, cfg.bisect_max_iter)?;
            let rule = match kind {
                ThresholdKind::Doubt => DecisionRule::Doubt { chi: threshold },
                ThresholdKind::Discrepancy => DecisionRule::Discrepancy { tau: threshold },
            };
            let set = permitted_set(&rule, &novice, &cfg.env.expert, &cfg.grid)?;
            let achieved = permitted_volume(&set);
            let nearest = mean_nearest_distance(&set, &dataset);
            let basin_vol = if cfg.compute_novice_basin {
                let (mask, vol) = novice_basin(&novice, &cfg.grid, cfg.env.params(), &cfg.basin);
                let f = format!("{rule_name}/novice_basin_epoch{epoch}.csv");
                write_mask_csv(
                    &PermittedSet {
                        grid: cfg.grid.clone(),
                        mask,
                    },
                    &out_dir.join(&f),
                )?;
                manifest.record(out_dir, &f)?;
                Some(vol)
            } else {
                None
            };

            let (rec, delta) = run_epoch(Some(&novice), &cfg.env, &rule, epoch, 1, ic_seed(cfg, epoch))?;
            let traj = &rec.trajectories[0];

            let set_file = format!("{rule_name}/permitted_set_epoch{epoch}.csv");
            write_mask_csv(&set, &out_dir.join(&set_file))?;
            manifest.record(out_dir, &set_file)?;
            let traj_file = format!("{rule_name}/trajectory_epoch{epoch}.csv");
            write_trajectory_csv(traj, &out_dir.join(&traj_file))?;
            manifest.record(out_dir, &traj_file)?;
            let data_file = format!("{rule_name}/dataset_epoch{epoch}.csv");
            let mut dt = Table::new(&["theta", "theta_dot", "expert_action"]);
            for i in 0..dataset.len() {
                let o = dataset.observation(i);
                dt.push(vec![fmt_f64(o[0]), fmt_f64(o[1]), fmt_f64(dataset.action(i)[0])]);
            }
            dt.write(&out_dir.join(&data_file))?;
            manifest.record(out_dir, &data_file)?;
            let panel_file = format!("{rule_name}/panel_epoch{epoch}.svg");
            epoch_panel(
                cfg,
                &format!("{rule_name} rule, epoch {epoch} (volume budget {target})"),
                &set,
                &dataset,
                traj,
            )
            .save(&out_dir.join(&panel_file))?;
            manifest.record(out_dir, &panel_file)?;

            summary.push(vec![
                rule_name.to_string(),
                epoch.to_string(),
                fmt_f64(target),
                fmt_f64(threshold),
                fmt_f64(achieved),
                fmt_f64(rec.novice_action_fraction),
                fmt_f64(nearest),
                basin_vol.map(fmt_f64).unwrap_or_default(),
                (failure_of_trajectory(traj, &expert_basin, &cfg.grid) as u8).to_string(),
                (dataset.len() + delta.len()).to_string(),
            ]);

            dataset.extend(&delta)?;
            retrain(&mut novice, &dataset, cfg, epoch)?;
        }
    }

    let expert_file = "expert_basin.csv";
    write_mask_csv(
        &PermittedSet {
            grid: cfg.grid.clone(),
            mask: expert_basin.clone(),
        },
        &out_dir.join(expert_file),
    )?;
    manifest.record(out_dir, expert_file)?;
    let mut eb = Table::new(&["expert_basin_volume"]);
    eb.push(vec![fmt_f64(mask_volume(&expert_basin))]);
    eb.write(&out_dir.join("expert_basin_volume.csv"))?;
    manifest.record(out_dir, "expert_basin_volume.csv")?;

    summary.write(&out_dir.join("summary.csv"))?;
    manifest.record(out_dir, "summary.csv")?;
    Ok(manifest)
}
