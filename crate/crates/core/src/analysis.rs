//! Grid analyses over the state space: permitted sets and volumes, the
//! novice's basin of attraction, learning performance, failure metrics, and
//! the bisection search solving a threshold for a target permitted volume.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dagger::DecisionRule;
use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::pendulum::{
    basin_of_attraction, expert_action, wrap_angle, Actor, BasinOptions, ExpertController,
    PendulumParams, PendulumState, Policy, Trajectory,
};
use crate::uncertainty::EnsemblePolicy;

/// Grid-aligned boolean mask of states where the rule permits the novice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PermittedSet {
    pub grid: StateGrid,
    pub mask: Vec<bool>,
}

pub fn mask_volume(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64
}

pub fn permitted_volume(set: &PermittedSet) -> f64 {
    mask_volume(&set.mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Discrepancy,
    Doubt,
}

/// Per-cell statistic the thresholded rules compare against: squared action
/// gap to the expert, or ensemble doubt.
pub fn grid_statistic(
    kind: ThresholdKind,
    novice: &EnsemblePolicy,
    expert: &ExpertController,
    grid: &StateGrid,
) -> Result<Vec<f64>> {
    let states = grid.states();
    let (mean, variance) = novice.predict_batch(states.view())?;
    Ok(match kind {
        ThresholdKind::Discrepancy => discrepancy_stat(&mean, expert, &states),
        ThresholdKind::Doubt => variance
            .rows()
            .into_iter()
            .map(|r| r.mean().unwrap_or(0.0))
            .collect(),
    })
}

fn discrepancy_stat(mean: &Array2<f64>, expert: &ExpertController, states: &Array2<f64>) -> Vec<f64> {
    states
        .rows()
        .into_iter()
        .zip(mean.rows())
        .map(|(s, m)| {
            let a_exp = expert_action(
                &PendulumState {
                    theta: s[0],
                    theta_dot: s[1],
                },
                expert,
            );
            // Scalar action; higher-dimensional experts would sum per dim.
            (m[0] - a_exp) * (m[0] - a_exp)
        })
        .collect()
}

/// States where the rule lets the novice act. Vanilla membership is a coin
/// flip, so it is rejected.
pub fn permitted_set(
    rule: &DecisionRule,
    novice: &EnsemblePolicy,
    expert: &ExpertController,
    grid: &StateGrid,
) -> Result<PermittedSet> {
    let mask = match *rule {
        DecisionRule::Vanilla { .. } => {
            return Err(Error::UnsupportedRule(
                "vanilla membership is stochastic; no deterministic permitted set".into(),
            ))
        }
        DecisionRule::Discrepancy { tau } => {
            let d = grid_statistic(ThresholdKind::Discrepancy, novice, expert, grid)?;
            d.iter().map(|&v| v <= tau).collect()
        }
        DecisionRule::Doubt { chi } => {
            let d = grid_statistic(ThresholdKind::Doubt, novice, expert, grid)?;
            d.iter().map(|&v| v <= chi).collect()
        }
        DecisionRule::Ensemble { tau, chi } => {
            let d = grid_statistic(ThresholdKind::Discrepancy, novice, expert, grid)?;
            let q = grid_statistic(ThresholdKind::Doubt, novice, expert, grid)?;
            d.iter().zip(q.iter()).map(|(&a, &b)| a <= tau && b <= chi).collect()
        }
    };
    Ok(PermittedSet {
        grid: grid.clone(),
        mask,
    })
}

fn volume_at(stats: &[f64], threshold: f64) -> f64 {
    stats.iter().filter(|&&v| v <= threshold).count() as f64 / stats.len() as f64
}

/// Bisection over a precomputed per-cell statistic; shared by the public
/// solver and usable directly when the statistic is already in hand.
pub fn solve_threshold_over_stats(
    stats: &[f64],
    target_volume: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Config("empty statistic grid".into()));
    }
    if !(0.0..=1.0).contains(&target_volume) {
        return Err(Error::Config("target volume must lie in [0, 1]".into()));
    }
    if volume_at(stats, 0.0) >= target_volume {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut doublings = 0;
    while volume_at(stats, hi) < target_volume {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::InfeasibleTarget {
                target: target_volume,
                best_volume: volume_at(stats, hi),
            });
        }
    }
    // Invariant: vol(lo) < target <= vol(hi); converge hi onto the smallest
    // statistic achieving the target so vol(hi) is the smallest achievable
    // volume at or above it.
    for _ in 0..max_iter {
        if hi - lo <= tolerance * hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if volume_at(stats, mid) >= target_volume {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Solves the rule threshold whose permitted volume meets `target_volume`,
/// per-cell statistics computed once up front.
pub fn solve_threshold_for_volume(
    kind: ThresholdKind,
    novice: &EnsemblePolicy,
    expert: &ExpertController,
    grid: &StateGrid,
    target_volume: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<f64> {
    let stats = grid_statistic(kind, novice, expert, grid)?;
    solve_threshold_over_stats(&stats, target_volume, tolerance, max_iter)
}

/// Ensemble mean action as a state-feedback policy; what the novice does
/// when acting alone.
pub struct NoviceMeanPolicy<'a>(pub &'a EnsemblePolicy);

impl Policy for NoviceMeanPolicy<'_> {
    fn action(&self, state: &PendulumState) -> f64 {
        let obs = Array1::from_vec(vec![state.theta, state.theta_dot]);
        self.0
            .predict(obs.view())
            .expect("novice observation dimension is 2")
            .mean[0]
    }

    fn action_batch(&self, states: &Array2<f64>) -> Array1<f64> {
        self.0
            .mean_action_batch(states.view())
            .expect("novice observation dimension is 2")
            .column(0)
            .to_owned()
    }

    fn actor(&self) -> Actor {
        Actor::Novice
    }
}

/// Basin of attraction of the unassisted novice (saturated mean action).
pub fn novice_basin(
    novice: &EnsemblePolicy,
    grid: &StateGrid,
    params: &PendulumParams,
    opts: &BasinOptions,
) -> (Vec<bool>, f64) {
    let mask = basin_of_attraction(&NoviceMeanPolicy(novice), grid, params, opts);
    let vol = mask_volume(&mask);
    (mask, vol)
}

/// Fraction of grid cells inside both basins.
pub fn learning_performance(novice_basin: &[bool], expert_basin: &[bool]) -> f64 {
    assert_eq!(novice_basin.len(), expert_basin.len(), "basin masks must align");
    if novice_basin.is_empty() {
        return 0.0;
    }
    novice_basin
        .iter()
        .zip(expert_basin.iter())
        .filter(|(&n, &e)| n && e)
        .count() as f64
        / novice_basin.len() as f64
}

/// True iff any visited state leaves the expert's basin; states outside the
/// grid window count as failures.
pub fn failure_of_trajectory(traj: &Trajectory, expert_basin: &[bool], grid: &StateGrid) -> bool {
    traj.states.iter().any(|s| {
        match grid.cell_of(wrap_angle(s.theta), s.theta_dot) {
            Some(cell) => !expert_basin[cell],
            None => true,
        }
    })
}

pub fn failure_rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

#[derive(Serialize)]
struct BasinCacheKey<'a> {
    gains: [f64; 2],
    params: &'a PendulumParams,
    grid: &'a StateGrid,
    opts: &'a BasinOptions,
}

/// Expert basin memoized on disk, keyed by a hash of everything that
/// determines it.
pub fn expert_basin_cached(
    expert: &ExpertController,
    grid: &StateGrid,
    opts: &BasinOptions,
    cache_dir: &Path,
) -> Result<Vec<bool>> {
    let key = serde_json::to_vec(&BasinCacheKey {
        gains: expert.gains,
        params: &expert.params,
        grid,
        opts,
    })?;
    let hash = Sha256::digest(&key);
    let mut name = String::from("expert_basin_");
    for b in hash.iter().take(16) {
        name.push_str(&format!("{b:02x}"));
    }
    name.push_str(".json");
    let path = cache_dir.join(name);
    if path.exists() {
        let bytes = std::fs::read(&path)?;
        let mask: Vec<bool> = serde_json::from_slice(&bytes)?;
        if mask.len() == grid.len() {
            return Ok(mask);
        }
    }
    let mask = basin_of_attraction(expert, grid, &expert.params, opts);
    std::fs::create_dir_all(cache_dir)?;
    std::fs::write(&path, serde_json::to_vec(&mask)?)?;
    Ok(mask)
}
