//! Exact Gaussian-process regression with a squared-exponential kernel:
//! `k(x, x') = sf2 * exp(-|x - x'|^2 / (2 l^2))`, zero prior mean.
//!
//! Hyperparameters are fit by maximizing the log marginal likelihood with
//! ADAM in log-parameter space, best of several seeded restarts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamParams, FlatAdam};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyperParams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyperParams {
    fn default() -> Self {
        GpHyperParams {
            length_scale: 10.0,
            signal_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GpFitConfig {
    pub init: GpHyperParams,
    /// When false the length scale stays at its initial value.
    pub optimize_length_scale: bool,
    /// When false the noise variance stays fixed at its initial value, as
    /// in kernel-only scikit-learn fits; optimizing it lets the marginal
    /// likelihood trade interpolation for smoothing.
    pub optimize_noise: bool,
    /// Number of optimizer runs; 0 means use `init` verbatim.
    pub n_restarts: usize,
    pub opt_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            init: GpHyperParams::default(),
            optimize_length_scale: true,
            optimize_noise: false,
            n_restarts: 9,
            opt_steps: 200,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub train_inputs: Array2<f64>,
    pub train_targets: Array1<f64>,
    /// Lower-triangular factor of K(X, X) + noise * I (plus minimal jitter).
    pub chol_factor: Array2<f64>,
    /// Solution of (K + noise * I) alpha = y.
    pub alpha: Array1<f64>,
    pub log_marginal_likelihood: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel(hp: &GpHyperParams, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    hp.signal_variance * (-sq_dist(a, b) / (2.0 * hp.length_scale * hp.length_scale)).exp()
}

fn kernel_matrix(hp: &GpHyperParams, x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = kernel(hp, x.row(i), x.row(j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Plain Cholesky; None if the matrix is not positive definite.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let v = x[k];
            x[i] -= l[[i, k]] * v;
        }
        x[i] /= l[[i, i]];
    }
    x
}

fn solve_upper_t(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    // Solves L' x = b.
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = x[k];
            x[i] -= l[[k, i]] * v;
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Cholesky with escalating jitter from 1e-10 to 1e-6.
fn cholesky_with_jitter(k: &Array2<f64>, scale: f64) -> Result<(Array2<f64>, f64)> {
    if let Some(l) = cholesky(k) {
        return Ok((l, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[[i, i]] += jitter * scale;
        }
        if let Some(l) = cholesky(&kj) {
            return Ok((l, jitter * scale));
        }
        jitter *= 10.0;
    }
    Err(Error::GpFit("kernel matrix not positive definite after jitter escalation".into()))
}

struct Likelihood {
    value: f64,
    chol: Array2<f64>,
    alpha: Array1<f64>,
}

fn log_marginal(hp: &GpHyperParams, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Likelihood> {
    let n = x.nrows();
    let mut k = kernel_matrix(hp, x);
    for i in 0..n {
        k[[i, i]] += hp.noise_variance;
    }
    let (l, _) = cholesky_with_jitter(&k, hp.signal_variance.max(1e-12))?;
    let alpha = solve_upper_t(&l, &solve_lower(&l, y));
    let log_det: f64 = (0..n).map(|i| l[[i, i]].ln()).sum();
    let value = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Likelihood { value, chol: l, alpha })
}

/// Gradient of the log marginal likelihood w.r.t. the log-hyperparameters
/// `[ln sf2, ln sn2, ln l]` via 0.5 * tr((aa' - K^-1) dK/dtheta).
fn log_marginal_grad(hp: &GpHyperParams, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, [f64; 3])> {
    let n = x.nrows();
    let lik = log_marginal(hp, x, y)?;
    // K^-1 via Cholesky solves against the identity.
    let mut k_inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = solve_upper_t(&lik.chol, &solve_lower(&lik.chol, e.view()));
        for i in 0..n {
            k_inv[[i, j]] = col[i];
        }
    }
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = lik.alpha[i] * lik.alpha[j] - k_inv[[i, j]];
            let d2 = sq_dist(x.row(i), x.row(j));
            let kf = hp.signal_variance * (-d2 / (2.0 * hp.length_scale * hp.length_scale)).exp();
            // dK/d ln sf2 = Kf; dK/d ln sn2 = sn2 I; dK/d ln l = Kf * d2 / l^2.
            g[0] += 0.5 * w * kf;
            if i == j {
                g[1] += 0.5 * w * hp.noise_variance;
            }
            g[2] += 0.5 * w * kf * d2 / (hp.length_scale * hp.length_scale);
        }
    }
    Ok((lik.value, g))
}

fn finish(hp: GpHyperParams, x: &Array2<f64>, y: &Array1<f64>) -> Result<GpModel> {
    let lik = log_marginal(&hp, x.view(), y.view())?;
    Ok(GpModel {
        length_scale: hp.length_scale,
        signal_variance: hp.signal_variance,
        noise_variance: hp.noise_variance,
        train_inputs: x.clone(),
        train_targets: y.clone(),
        chol_factor: lik.chol,
        alpha: lik.alpha,
        log_marginal_likelihood: lik.value,
    })
}

/// Fits hyperparameters by gradient ascent on the log marginal likelihood
/// from `n_restarts` seeded starts (the first start is `init` itself) and
/// keeps the best.
pub fn gp_fit(x: &Array2<f64>, y: &Array1<f64>, config: &GpFitConfig) -> Result<GpModel> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::GpFit("training set empty or sizes inconsistent".into()));
    }
    if config.n_restarts == 0 {
        return finish(config.init, x, y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, GpHyperParams)> = None;
    for restart in 0..config.n_restarts {
        let start = if restart == 0 {
            config.init
        } else {
            GpHyperParams {
                // Log-uniform over several decades; the marginal likelihood
                // has local maxima at long length scales that explain the
                // data as noise, so restarts must reach short ones too.
                length_scale: if config.optimize_length_scale {
                    10f64.powf(rng.random_range(-1.5..1.5))
                } else {
                    config.init.length_scale
                },
                signal_variance: 10f64.powf(rng.random_range(-2.0..2.0)),
                noise_variance: if config.optimize_noise {
                    10f64.powf(rng.random_range(-8.0..-1.0))
                } else {
                    config.init.noise_variance
                },
            }
        };
        if let Ok(hp) = optimize_from(start, x, y, config) {
            if let Ok(lik) = log_marginal(&hp, x.view(), y.view()) {
                if best.is_none() || lik.value > best.as_ref().unwrap().0 {
                    best = Some((lik.value, hp));
                }
            }
        }
    }
    let (_, hp) = best.ok_or_else(|| Error::GpFit("all restarts failed".into()))?;
    finish(hp, x, y)
}

fn optimize_from(start: GpHyperParams, x: &Array2<f64>, y: &Array1<f64>, config: &GpFitConfig) -> Result<GpHyperParams> {
    // Log-space parameters [ln sf2, ln sn2, ln l]; frozen entries get zero
    // gradient so ADAM leaves them in place.
    let mut params = vec![
        start.signal_variance.ln(),
        start.noise_variance.max(1e-300).ln(),
        start.length_scale.ln(),
    ];
    let mut adam = FlatAdam::new(
        3,
        AdamParams {
            learning_rate: config.learning_rate,
            ..AdamParams::default()
        },
    );
    let current = |p: &[f64]| GpHyperParams {
        signal_variance: p[0].exp(),
        noise_variance: if config.optimize_noise { p[1].exp() } else { start.noise_variance },
        length_scale: if config.optimize_length_scale { p[2].exp() } else { start.length_scale },
    };
    for _ in 0..config.opt_steps {
        let (_, g) = log_marginal_grad(&current(&params), x.view(), y.view())?;
        // Ascent: ADAM minimizes, so feed the negative gradient.
        let grad = vec![
            -g[0],
            if config.optimize_noise { -g[1] } else { 0.0 },
            if config.optimize_length_scale { -g[2] } else { 0.0 },
        ];
        adam.step(&mut params, &grad);
        params[0] = params[0].clamp(-20.0, 10.0);
        // Keep noise from collapsing to exactly zero in log space.
        params[1] = params[1].clamp(-30.0, 5.0);
        params[2] = params[2].clamp(-10.0, 10.0);
    }
    Ok(current(&params))
}

/// Posterior mean and standard deviation at a query point.
pub fn gp_posterior(model: &GpModel, query: ArrayView1<f64>) -> (f64, f64) {
    let hp = GpHyperParams {
        length_scale: model.length_scale,
        signal_variance: model.signal_variance,
        noise_variance: model.noise_variance,
    };
    let n = model.train_inputs.nrows();
    let k_star = Array1::from_iter((0..n).map(|i| kernel(&hp, model.train_inputs.row(i), query)));
    let mean = k_star.dot(&model.alpha);
    let v = solve_lower(&model.chol_factor, k_star.view());
    let var = model.signal_variance - v.dot(&v);
    (mean, var.max(0.0).sqrt())
}
