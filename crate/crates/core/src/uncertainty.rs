//! Predictive-uncertainty policies: deep ensembles (point-estimate and
//! Gaussian-head members) and MC-dropout, each reporting a mean action and a
//! scalar doubt.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{clamp_log_var, train, Activation, DenseNet, DropoutMask, OutputHead, TrainConfig};
use crate::seeds::derive_seed;

/// Mean and per-dimension variance of the predicted action.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

/// Scalar doubt: the mean of the per-dimension action variances.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Doubt(pub f64);

pub fn doubt_of(dist: &PredictiveDistribution) -> Doubt {
    let d = dist.variance.len();
    Doubt(dist.variance.sum() / d as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub member_kind: OutputHead,
    pub members: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        // Pendulum novice: ten MLPs with hidden sizes [64, 64, 32, 32].
        EnsembleConfig {
            obs_dim: 2,
            act_dim: 1,
            hidden: vec![64, 64, 32, 32],
            activation: Activation::Tanh,
            member_kind: OutputHead::PointEstimate,
            members: 10,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(crate::Error::Config("ensemble dims must be positive".into()));
        }
        if self.members == 0 {
            return Err(crate::Error::Config("ensemble needs at least one member".into()));
        }
        Ok(())
    }

    fn size_chain(&self) -> Vec<usize> {
        let out = match self.member_kind {
            OutputHead::PointEstimate => self.act_dim,
            OutputHead::MeanAndLogVariance => 2 * self.act_dim,
        };
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.obs_dim);
        sizes.extend(&self.hidden);
        sizes.push(out);
        sizes
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsemblePolicy {
    pub members: Vec<DenseNet>,
    pub member_kind: OutputHead,
}

impl EnsemblePolicy {
    /// Builds `members` independently initialized networks; member `i` gets a
    /// seed derived from `(seed, i)`.
    pub fn new(config: &EnsembleConfig, seed: u64) -> Result<EnsemblePolicy> {
        if config.members == 0 {
            return Err(Error::Config("ensemble must have at least one member".into()));
        }
        let sizes = config.size_chain();
        let members = (0..config.members)
            .map(|i| DenseNet::new(&sizes, config.activation, config.member_kind, derive_seed(seed, 0x1717, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsemblePolicy {
            members,
            member_kind: config.member_kind,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.members[0].action_dim()
    }

    pub fn predict(&self, obs: ArrayView1<f64>) -> Result<PredictiveDistribution> {
        let obs2 = obs.insert_axis(Axis(0));
        let (mean, var) = self.predict_batch(obs2)?;
        Ok(PredictiveDistribution {
            mean: mean.index_axis_move(Axis(0), 0),
            variance: var.index_axis_move(Axis(0), 0),
        })
    }

    /// Batched ensemble prediction; rows are observations.
    ///
    /// Point-estimate members: sample mean and unbiased sample variance
    /// across members. Gaussian-head members: mixture-of-Gaussians moments
    /// `mean = avg(mu_i)`, `var = avg(sigma_i^2 + mu_i^2) - mean^2`.
    pub fn predict_batch(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if self.members.is_empty() {
            return Err(Error::Config("empty ensemble".into()));
        }
        let n = obs.nrows();
        let d = self.action_dim();
        let m = self.members.len() as f64;
        let mut sum = Array2::<f64>::zeros((n, d));
        let mut sum_sq = Array2::<f64>::zeros((n, d));
        let mut sum_var = Array2::<f64>::zeros((n, d));
        for net in &self.members {
            let out = net.forward_batch(obs, None)?;
            match self.member_kind {
                OutputHead::PointEstimate => {
                    sum += &out;
                    sum_sq += &out.mapv(|v| v * v);
                }
                OutputHead::MeanAndLogVariance => {
                    let mu = out.slice(ndarray::s![.., ..d]);
                    let lv = out.slice(ndarray::s![.., d..]);
                    sum += &mu;
                    sum_sq += &mu.mapv(|v| v * v);
                    sum_var += &lv.mapv(|v| clamp_log_var(v).exp());
                }
            }
        }
        let mean = sum / m;
        let variance = match self.member_kind {
            OutputHead::PointEstimate => {
                if self.members.len() == 1 {
                    Array2::zeros((n, d))
                } else {
                    // Unbiased: (sum_sq - m*mean^2) / (m - 1).
                    let mut v = sum_sq - &(mean.mapv(|x| x * x) * m);
                    v.mapv_inplace(|x| (x / (m - 1.0)).max(0.0));
                    v
                }
            }
            OutputHead::MeanAndLogVariance => {
                let mut v = (sum_var + sum_sq) / m - mean.mapv(|x| x * x);
                // Rounding can leave tiny negatives in the mixture formula.
                v.mapv_inplace(|x| x.max(0.0));
                v
            }
        };
        Ok((mean, variance))
    }

    /// Batched mean action, for rollouts and basin computation.
    pub fn mean_action_batch(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.members.is_empty() {
            return Err(Error::Config("empty ensemble".into()));
        }
        let d = self.action_dim();
        let mut sum = Array2::<f64>::zeros((obs.nrows(), d));
        for net in &self.members {
            let out = net.forward_batch(obs, None)?;
            match self.member_kind {
                OutputHead::PointEstimate => sum += &out,
                OutputHead::MeanAndLogVariance => sum += &out.slice(ndarray::s![.., ..d]),
            }
        }
        Ok(sum / self.members.len() as f64)
    }
}

pub fn ensemble_predict(policy: &EnsemblePolicy, obs: ArrayView1<f64>) -> Result<PredictiveDistribution> {
    policy.predict(obs)
}

/// Trains every member independently on the full dataset (no bagging); the
/// member's shuffle stream is derived from `(config.rng_seed, member index)`.
pub fn train_ensemble(
    policy: &mut EnsemblePolicy,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<()> {
    let inputs = inputs.to_owned();
    let targets = targets.to_owned();
    policy
        .members
        .par_iter_mut()
        .enumerate()
        .map(|(i, net)| {
            let cfg = TrainConfig {
                rng_seed: derive_seed(config.rng_seed, 0x7e41, i as u64),
                ..config.clone()
            };
            train(net, inputs.view(), targets.view(), &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

/// MC-dropout prediction: mean and unbiased variance of `n_samples`
/// stochastic forward passes with freshly sampled masks.
pub fn mc_dropout_predict(
    net: &DenseNet,
    obs: ArrayView1<f64>,
    n_samples: usize,
    keep_prob: f64,
    rng: &mut impl Rng,
) -> Result<PredictiveDistribution> {
    if n_samples < 2 {
        return Err(Error::Config("mc-dropout needs n_samples >= 2".into()));
    }
    let d = net.action_dim();
    let mut sum = Array1::<f64>::zeros(d);
    let mut sum_sq = Array1::<f64>::zeros(d);
    for _ in 0..n_samples {
        let mask = DropoutMask::sample(net, keep_prob, rng);
        let out = net.forward(obs, Some(&mask))?;
        for j in 0..d {
            sum[j] += out[j];
            sum_sq[j] += out[j] * out[j];
        }
    }
    let n = n_samples as f64;
    let mean = &sum / n;
    let variance = Array1::from_iter(
        (0..d).map(|j| ((sum_sq[j] - n * mean[j] * mean[j]) / (n - 1.0)).max(0.0)),
    );
    Ok(PredictiveDistribution { mean, variance })
}

/// Versioned on-disk policy format. JSON keeps f64s with shortest
/// round-trip encoding, so save/load is bit-exact.
#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format_version: u32,
    policy: EnsemblePolicy,
}

const POLICY_FORMAT_VERSION: u32 = 1;

pub fn save_policy(policy: &EnsemblePolicy, path: &Path) -> Result<()> {
    let file = PolicyFile {
        format_version: POLICY_FORMAT_VERSION,
        policy: policy.clone(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<EnsemblePolicy> {
    let data = std::fs::read_to_string(path)?;
    let file: PolicyFile = serde_json::from_str(&data)?;
    if file.format_version != POLICY_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported policy format version {}",
            file.format_version
        )));
    }
    Ok(file.policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(value: f64) -> DenseNet {
        DenseNet {
            layers: vec![crate::nn::Layer {
                weight: array![[0.0]],
                bias: array![value],
            }],
            hidden_activation: Activation::Tanh,
            output_head: OutputHead::PointEstimate,
        }
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let policy = EnsemblePolicy {
            members: vec![constant_net(0.3), constant_net(0.3), constant_net(0.3)],
            member_kind: OutputHead::PointEstimate,
        };
        let d = policy.predict(array![1.0].view()).unwrap();
        assert_abs_diff_eq!(d.mean[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(d.variance[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_members_unbiased_variance() {
        let policy = EnsemblePolicy {
            members: vec![constant_net(0.0), constant_net(2.0)],
            member_kind: OutputHead::PointEstimate,
        };
        let d = policy.predict(array![0.0].view()).unwrap();
        assert_abs_diff_eq!(d.mean[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.variance[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_mixture_identity() {
        // Two members with mu = 0, log-var = 0 (sigma^2 = 1).
        let member = DenseNet {
            layers: vec![crate::nn::Layer {
                weight: array![[0.0], [0.0]],
                bias: array![0.0, 0.0],
            }],
            hidden_activation: Activation::Tanh,
            output_head: OutputHead::MeanAndLogVariance,
        };
        let policy = EnsemblePolicy {
            members: vec![member.clone(), member],
            member_kind: OutputHead::MeanAndLogVariance,
        };
        let d = policy.predict(array![0.5].view()).unwrap();
        assert_abs_diff_eq!(d.mean[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.variance[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn doubt_is_mean_of_variances() {
        let dist = PredictiveDistribution {
            mean: array![0.0, 0.0],
            variance: array![2.0, 4.0],
        };
        assert_eq!(doubt_of(&dist).0, 3.0);
        let zero = PredictiveDistribution {
            mean: array![0.0],
            variance: array![0.0],
        };
        assert_eq!(doubt_of(&zero).0, 0.0);
    }

    #[test]
    fn doubt_scales_linearly() {
        for k in [0.0, 0.5, 2.0, 7.0] {
            let base = PredictiveDistribution {
                mean: array![0.0, 0.0],
                variance: array![1.0, 3.0],
            };
            let scaled = PredictiveDistribution {
                mean: base.mean.clone(),
                variance: base.variance.mapv(|v| k * v),
            };
            assert_abs_diff_eq!(doubt_of(&scaled).0, k * doubt_of(&base).0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let cfg = EnsembleConfig {
            hidden: vec![8],
            members: 4,
            ..EnsembleConfig::default()
        };
        let policy = EnsemblePolicy::new(&cfg, 12).unwrap();
        let mut reversed = policy.clone();
        reversed.members.reverse();
        let obs = array![0.2, -0.7];
        let a = policy.predict(obs.view()).unwrap();
        let b = reversed.predict(obs.view()).unwrap();
        assert_abs_diff_eq!(a.mean[0], b.mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(a.variance[0], b.variance[0], epsilon = 1e-12);
    }

    #[test]
    fn members_start_distinct() {
        let cfg = EnsembleConfig {
            hidden: vec![4],
            members: 3,
            ..EnsembleConfig::default()
        };
        let policy = EnsemblePolicy::new(&cfg, 5).unwrap();
        assert_ne!(policy.members[0].params_to_vec(), policy.members[1].params_to_vec());
        assert_ne!(policy.members[1].params_to_vec(), policy.members[2].params_to_vec());
    }

    #[test]
    fn mc_dropout_keep_one_has_zero_variance() {
        let net = DenseNet::new(&[1, 6, 1], Activation::Tanh, OutputHead::PointEstimate, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = mc_dropout_predict(&net, array![0.4].view(), 16, 1.0, &mut rng).unwrap();
        assert_abs_diff_eq!(d.variance[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mc_dropout_rejects_tiny_sample_counts() {
        let net = DenseNet::new(&[1, 4, 1], Activation::Tanh, OutputHead::PointEstimate, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mc_dropout_predict(&net, array![0.0].view(), 1, 0.5, &mut rng).is_err());
    }

    #[test]
    fn mc_dropout_is_reproducible() {
        let net = DenseNet::new(&[1, 5, 1], Activation::Tanh, OutputHead::PointEstimate, 8).unwrap();
        let sample = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            mc_dropout_predict(&net, array![0.3].view(), 32, 0.6, &mut rng).unwrap()
        };
        assert_eq!(sample(), sample());
    }

    #[test]
    fn mc_dropout_matches_exhaustive_mask_enumeration() {
        // One hidden layer of 8 units: enumerate all 2^8 masks exactly.
        let net = DenseNet::new(&[1, 8, 1], Activation::Tanh, OutputHead::PointEstimate, 21).unwrap();
        let keep = 0.75;
        let obs = array![0.4];
        let scale = 1.0 / keep;
        let (mut exact_mean, mut exact_sq) = (0.0, 0.0);
        for bits in 0u32..(1 << 8) {
            let mut p = 1.0;
            let mask_vals: Vec<f64> = (0..8)
                .map(|j| {
                    if bits >> j & 1 == 1 {
                        p *= keep;
                        scale
                    } else {
                        p *= 1.0 - keep;
                        0.0
                    }
                })
                .collect();
            let mask = DropoutMask {
                masks: vec![Array1::from_vec(mask_vals)],
            };
            let out = net.forward(obs.view(), Some(&mask)).unwrap()[0];
            exact_mean += p * out;
            exact_sq += p * out * out;
        }
        let exact_var = exact_sq - exact_mean * exact_mean;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let est = mc_dropout_predict(&net, obs.view(), 10_000, keep, &mut rng).unwrap();
        assert!((est.variance[0] - exact_var).abs() / exact_var < 0.05);
        assert!((est.mean[0] - exact_mean).abs() < 0.05 * exact_var.sqrt().max(1e-3));
    }

    #[test]
    fn trained_ensemble_fits_and_doubts_far_away() {
        let cfg = EnsembleConfig {
            obs_dim: 1,
            hidden: vec![16, 16],
            members: 5,
            ..EnsembleConfig::default()
        };
        let mut policy = EnsemblePolicy::new(&cfg, 31).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + 2.0 * i as f64 / 19.0).collect();
        let x = Array2::from_shape_vec((20, 1), xs).unwrap();
        let y = x.mapv(|v| 2.0 * v);
        let tc = TrainConfig {
            epochs: 400,
            batch_size: 4,
            learning_rate: 1e-2,
            rng_seed: 13,
            ..TrainConfig::default()
        };
        train_ensemble(&mut policy, x.view(), y.view(), &tc).unwrap();
        let at_train = policy.predict(array![0.5].view()).unwrap();
        assert!((at_train.mean[0] - 1.0).abs() < 0.05, "mean {}", at_train.mean[0]);
        // Doubt far outside the data range dwarfs doubt at a training input.
        let far = policy.predict(array![7.0].view()).unwrap();
        assert!(
            doubt_of(&far).0 > doubt_of(&at_train).0,
            "far {:?} vs near {:?}",
            doubt_of(&far),
            doubt_of(&at_train)
        );
    }

    #[test]
    fn identical_member_seeds_give_zero_doubt() {
        let cfg = EnsembleConfig {
            obs_dim: 1,
            hidden: vec![8],
            members: 3,
            ..EnsembleConfig::default()
        };
        let one = EnsemblePolicy::new(&cfg, 2).unwrap();
        let policy = EnsemblePolicy {
            members: vec![one.members[0].clone(); 3],
            member_kind: OutputHead::PointEstimate,
        };
        let d = policy.predict(array![0.9].view()).unwrap();
        assert_abs_diff_eq!(doubt_of(&d).0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn policy_roundtrip_is_bit_exact() {
        let cfg = EnsembleConfig {
            hidden: vec![6, 4],
            members: 3,
            ..EnsembleConfig::default()
        };
        let policy = EnsemblePolicy::new(&cfg, 44).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        save_policy(&policy, &path).unwrap();
        let loaded = load_policy(&path).unwrap();
        for (a, b) in policy.members.iter().zip(&loaded.members) {
            let (pa, pb) = (a.params_to_vec(), b.params_to_vec());
            assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
