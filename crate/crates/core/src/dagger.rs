//! The DAgger outer loop with pluggable decision rules.
//!
//! Epoch 0 always queries the expert only; each later epoch samples
//! trajectories gated per step by the decision rule, labels every visited
//! observation with the expert action, aggregates, and retrains the novice.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pendulum::{expert_action, step, Actor, ExpertController, PendulumParams, PendulumState, Trajectory};
use crate::seeds::derive_seed;
use crate::uncertainty::{doubt_of, EnsembleConfig, EnsemblePolicy, PredictiveDistribution, train_ensemble};
use crate::nn::TrainConfig;

/// Aggregated (observation, expert action) pairs; append-only across epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
}

impl Dataset {
    pub fn new(obs_dim: usize, act_dim: usize) -> Dataset {
        Dataset {
            obs_dim,
            act_dim,
            observations: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: &[f64], act: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch {
                context: "dataset push observation",
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if act.len() != self.act_dim {
            return Err(Error::ShapeMismatch {
                context: "dataset push action",
                expected: self.act_dim,
                got: act.len(),
            });
        }
        if !obs.iter().chain(act.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("dataset entries must be finite".into()));
        }
        self.observations.extend_from_slice(obs);
        self.actions.extend_from_slice(act);
        Ok(())
    }

    pub fn extend(&mut self, delta: &Dataset) -> Result<()> {
        if delta.obs_dim != self.obs_dim || delta.act_dim != self.act_dim {
            return Err(Error::Config("dataset dims differ".into()));
        }
        self.observations.extend_from_slice(&delta.observations);
        self.actions.extend_from_slice(&delta.actions);
        Ok(())
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }

    /// Dense (inputs, targets) views for training.
    pub fn to_xy(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.len();
        (
            Array2::from_shape_vec((n, self.obs_dim), self.observations.clone()).unwrap(),
            Array2::from_shape_vec((n, self.act_dim), self.actions.clone()).unwrap(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Expert acts with probability `beta_i = lambda^i * beta0`.
    Vanilla { beta0: f64, lambda: f64 },
    /// Novice acts iff the squared action gap to the expert is at most tau.
    Discrepancy { tau: f64 },
    /// Novice acts iff the ensemble doubt is at most chi.
    Doubt { chi: f64 },
    /// Novice acts iff both the discrepancy and doubt conditions hold.
    Ensemble { tau: f64, chi: f64 },
}

impl DecisionRule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        match *self {
            DecisionRule::Vanilla { beta0, lambda } => {
                if !(0.0..=1.0).contains(&beta0) {
                    return bad("vanilla beta0 must lie in [0, 1]");
                }
                if !(lambda > 0.0 && lambda < 1.0) {
                    return bad("vanilla lambda must lie in (0, 1)");
                }
            }
            DecisionRule::Discrepancy { tau } => {
                if !(tau >= 0.0) {
                    return bad("discrepancy tau must be nonnegative");
                }
            }
            DecisionRule::Doubt { chi } => {
                if !(chi >= 0.0) {
                    return bad("doubt chi must be nonnegative");
                }
            }
            DecisionRule::Ensemble { tau, chi } => {
                if !(tau >= 0.0 && chi >= 0.0) {
                    return bad("ensemble tau and chi must be nonnegative");
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecisionRule::Vanilla { .. } => "vanilla",
            DecisionRule::Discrepancy { .. } => "discrepancy",
            DecisionRule::Doubt { .. } => "doubt",
            DecisionRule::Ensemble { .. } => "ensemble",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub chosen_action: Array1<f64>,
    pub actor: Actor,
    pub discrepancy_sq: f64,
    pub doubt: f64,
}

/// One gating decision. `epoch` only matters for the vanilla beta schedule;
/// `rng` is only drawn from by the vanilla rule.
pub fn decide(
    rule: &DecisionRule,
    novice_dist: &PredictiveDistribution,
    expert_act: ArrayView1<f64>,
    epoch: usize,
    rng: &mut impl Rng,
) -> Decision {
    let discrepancy_sq: f64 = novice_dist
        .mean
        .iter()
        .zip(expert_act.iter())
        .map(|(n, e)| (n - e) * (n - e))
        .sum();
    let doubt = doubt_of(novice_dist).0;
    let novice_acts = match *rule {
        DecisionRule::Vanilla { beta0, lambda } => {
            let beta = lambda.powi(epoch as i32) * beta0;
            let z: f64 = rng.random();
            z > beta
        }
        DecisionRule::Discrepancy { tau } => discrepancy_sq <= tau,
        DecisionRule::Doubt { chi } => doubt <= chi,
        DecisionRule::Ensemble { tau, chi } => discrepancy_sq <= tau && doubt <= chi,
    };
    if novice_acts {
        Decision {
            chosen_action: novice_dist.mean.clone(),
            actor: Actor::Novice,
            discrepancy_sq,
            doubt,
        }
    } else {
        Decision {
            chosen_action: expert_act.to_owned(),
            actor: Actor::Expert,
            discrepancy_sq,
            doubt,
        }
    }
}

/// Uniform box the initial condition is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcBox {
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_dot_min: f64,
    pub theta_dot_max: f64,
}

impl Default for IcBox {
    fn default() -> Self {
        IcBox {
            theta_min: -0.6,
            theta_max: 0.6,
            theta_dot_min: -1.5,
            theta_dot_max: 1.5,
        }
    }
}

impl IcBox {
    pub fn sample(&self, rng: &mut impl Rng) -> PendulumState {
        PendulumState {
            theta: rng.random_range(self.theta_min..=self.theta_max),
            theta_dot: rng.random_range(self.theta_dot_min..=self.theta_dot_max),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumEnv {
    pub expert: ExpertController,
    pub ic_box: IcBox,
}

impl PendulumEnv {
    pub fn params(&self) -> &PendulumParams {
        &self.expert.params
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub trajectories: Vec<Trajectory>,
    /// Per-step gating statistics aligned with the trajectories' actions;
    /// empty for the expert-only zeroth epoch.
    pub discrepancies: Vec<f64>,
    pub doubts: Vec<f64>,
    pub novice_action_fraction: f64,
    /// Cumulative dataset size after aggregating this epoch.
    pub dataset_size: usize,
    pub blew_up: bool,
}

/// Samples `n_trajectories` gated trajectories at `epoch`, labeling every
/// visited observation with the expert action. `novice = None` (or epoch 0)
/// runs the expert for every step. Simulation blow-up truncates the
/// trajectory and sets `blew_up` instead of erroring.
pub fn run_epoch(
    novice: Option<&EnsemblePolicy>,
    env: &PendulumEnv,
    rule: &DecisionRule,
    epoch: usize,
    n_trajectories: usize,
    seed: u64,
) -> Result<(EpochRecord, Dataset)> {
    let params = env.params();
    let mut delta = Dataset::new(2, 1);
    let mut record = EpochRecord {
        epoch,
        trajectories: Vec::with_capacity(n_trajectories),
        discrepancies: Vec::new(),
        doubts: Vec::new(),
        novice_action_fraction: 0.0,
        dataset_size: 0,
        blew_up: false,
    };
    let mut novice_steps = 0usize;
    let mut total_steps = 0usize;
    for t in 0..n_trajectories {
        let mut ic_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1c, t as u64));
        let mut gate_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6a7e, t as u64));
        let mut state = env.ic_box.sample(&mut ic_rng);
        let mut traj = Trajectory {
            states: vec![state],
            actions: Vec::new(),
            actors: Vec::new(),
            terminated_early: false,
        };
        for _ in 0..params.max_steps {
            let a_exp = expert_action(&state, &env.expert);
            delta.push(&[state.theta, state.theta_dot], &[a_exp])?;
            let (u, actor) = match novice {
                Some(nov) if epoch > 0 => {
                    let obs = Array1::from_vec(vec![state.theta, state.theta_dot]);
                    let dist = nov.predict(obs.view())?;
                    // Vanilla's beta schedule starts at beta0 on the first
                    // gated epoch, hence the shift by one.
                    let d = decide(rule, &dist, Array1::from_vec(vec![a_exp]).view(), epoch - 1, &mut gate_rng);
                    record.discrepancies.push(d.discrepancy_sq);
                    record.doubts.push(d.doubt);
                    (params.saturate(d.chosen_action[0]), d.actor)
                }
                _ => (a_exp, Actor::Expert),
            };
            if actor == Actor::Novice {
                novice_steps += 1;
            }
            total_steps += 1;
            match step(&state, u, params) {
                Ok(next) => {
                    traj.actions.push(u);
                    traj.actors.push(actor);
                    traj.states.push(next);
                    state = next;
                }
                Err(_) => {
                    record.blew_up = true;
                    traj.terminated_early = true;
                    break;
                }
            }
        }
        record.trajectories.push(traj);
    }
    record.novice_action_fraction = if total_steps == 0 {
        0.0
    } else {
        novice_steps as f64 / total_steps as f64
    };
    record.dataset_size = delta.len();
    Ok((record, delta))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DaggerConfig {
    /// Number of rule-gated epochs after the expert-only zeroth epoch.
    pub epochs: usize,
    pub rule: DecisionRule,
    pub trajectories_per_epoch: usize,
    /// Fresh member initializations every retrain; false warm-starts from
    /// the previous epoch's weights.
    pub retrain_from_scratch: bool,
    pub ensemble: EnsembleConfig,
    pub train: TrainConfig,
    pub env: PendulumEnv,
    /// Drives initialization and shuffling; rule-dependent streams.
    pub master_seed: u64,
    /// Drives initial conditions; must stay fixed across rules so every
    /// rule sees the same starts.
    pub ic_seed_base: u64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            epochs: 6,
            rule: DecisionRule::Doubt { chi: 1e-3 },
            trajectories_per_epoch: 1,
            retrain_from_scratch: true,
            ensemble: EnsembleConfig::default(),
            train: TrainConfig::default(),
            env: PendulumEnv::default(),
            master_seed: 0,
            ic_seed_base: 0,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("need at least one gated epoch".into()));
        }
        if self.trajectories_per_epoch == 0 {
            return Err(Error::Config("need at least one trajectory per epoch".into()));
        }
        self.rule.validate()?;
        self.env.params().validate()?;
        self.ensemble.validate()?;
        Ok(())
    }

    fn epoch_ic_seed(&self, epoch: usize) -> u64 {
        derive_seed(self.ic_seed_base, 0xe90c, epoch as u64)
    }
}

fn retrain(
    novice: &mut EnsemblePolicy,
    dataset: &Dataset,
    config: &DaggerConfig,
    epoch: usize,
) -> Result<()> {
    if config.retrain_from_scratch {
        *novice = EnsemblePolicy::new(&config.ensemble, derive_seed(config.master_seed, 0x171, epoch as u64))?;
    }
    let (x, y) = dataset.to_xy();
    let train_cfg = TrainConfig {
        rng_seed: derive_seed(config.master_seed, 0x7247, epoch as u64),
        ..config.train.clone()
    };
    train_ensemble(novice, x.view(), y.view(), &train_cfg)
}

/// Full DAgger run. The observer fires after every epoch's aggregation and
/// retraining, seeing the epoch's record, the policy trained on all data
/// through that epoch, and the aggregate dataset.
pub fn run_dagger<F>(config: &DaggerConfig, mut observer: F) -> Result<Vec<EpochRecord>>
where
    F: FnMut(usize, &EnsemblePolicy, &EpochRecord, &Dataset) -> Result<()>,
{
    config.validate()?;
    let mut dataset = Dataset::new(2, 1);
    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut novice = EnsemblePolicy::new(&config.ensemble, derive_seed(config.master_seed, 0x171, 0))?;
    for epoch in 0..=config.epochs {
        let gated = if epoch == 0 { None } else { Some(&novice) };
        let (mut record, delta) = run_epoch(
            gated,
            &config.env,
            &config.rule,
            epoch,
            config.trajectories_per_epoch,
            config.epoch_ic_seed(epoch),
        )?;
        dataset.extend(&delta)?;
        record.dataset_size = dataset.len();
        retrain(&mut novice, &dataset, config, epoch)?;
        observer(epoch, &novice, &record, &dataset)?;
        records.push(record);
    }
    Ok(records)
}
