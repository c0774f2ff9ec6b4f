//! Minimal dense network engine: batched forward/backward passes, ADAM,
//! MSE and Gaussian-NLL losses, L2 regularization, and dropout masks.
//!
//! Everything is f64 and deterministic given the seeds in [`TrainConfig`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-variance outputs are clamped to this symmetric range before
/// exponentiation so NLL training cannot drive sigma^2 to 0 or infinity.
pub const LOG_VAR_CLAMP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed in terms of the activation value `a = act(z)`.
    fn deriv_from_output(self, a: f64, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Final layer outputs are actions directly.
    PointEstimate,
    /// Final layer outputs `[mean..., log_variance...]`; dimension must be even.
    MeanAndLogVariance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layer {
    /// Shape `[out, in]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    GaussianNll,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub loss: Loss,
    pub dropout_keep_prob: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            l2_coeff: 0.0,
            loss: Loss::Mse,
            dropout_keep_prob: 1.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.l2_coeff < 0.0 {
            return Err(Error::Config("l2_coeff must be >= 0".into()));
        }
        if !(self.dropout_keep_prob > 0.0 && self.dropout_keep_prob <= 1.0) {
            return Err(Error::Config("dropout_keep_prob must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One inverted-dropout mask per hidden layer; entries are 0 or 1/keep_prob.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    pub masks: Vec<Array1<f64>>,
}

impl DropoutMask {
    pub fn sample(net: &DenseNet, keep_prob: f64, rng: &mut impl Rng) -> DropoutMask {
        let scale = 1.0 / keep_prob;
        let masks = net.layers[..net.layers.len() - 1]
            .iter()
            .map(|l| {
                Array1::from_iter((0..l.bias.len()).map(|_| {
                    if rng.random::<f64>() < keep_prob {
                        scale
                    } else {
                        0.0
                    }
                }))
            })
            .collect();
        DropoutMask { masks }
    }

    fn check(&self, net: &DenseNet) -> Result<()> {
        if self.masks.len() != net.layers.len() - 1 {
            return Err(Error::ShapeMismatch {
                context: "dropout mask layer count",
                expected: net.layers.len() - 1,
                got: self.masks.len(),
            });
        }
        for (m, l) in self.masks.iter().zip(&net.layers) {
            if m.len() != l.bias.len() {
                return Err(Error::ShapeMismatch {
                    context: "dropout mask width",
                    expected: l.bias.len(),
                    got: m.len(),
                });
            }
        }
        Ok(())
    }
}

impl DenseNet {
    /// Builds a network with the given size chain `[in, h1, ..., out]`,
    /// Xavier-uniform initialized from `seed`.
    pub fn new(sizes: &[usize], hidden_activation: Activation, output_head: OutputHead, seed: u64) -> Result<DenseNet> {
        if sizes.len() < 2 {
            return Err(Error::Config("network needs at least input and output sizes".into()));
        }
        if output_head == OutputHead::MeanAndLogVariance && sizes[sizes.len() - 1] % 2 != 0 {
            return Err(Error::Config(
                "mean-and-log-variance head needs an even output dimension".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(DenseNet {
            layers,
            hidden_activation,
            output_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].bias.len()
    }

    /// Dimensionality of the action the network predicts (half the output
    /// for mean-and-log-variance heads).
    pub fn action_dim(&self) -> usize {
        match self.output_head {
            OutputHead::PointEstimate => self.output_dim(),
            OutputHead::MeanAndLogVariance => self.output_dim() / 2,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_from_slice(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().expect("parameter count mismatch");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("parameter count mismatch");
            }
        }
        assert!(it.next().is_none(), "parameter count mismatch");
    }

    pub fn forward(&self, input: ArrayView1<f64>, mask: Option<&DropoutMask>) -> Result<Array1<f64>> {
        let x = input.insert_axis(Axis(0));
        let out = self.forward_batch(x, mask)?;
        Ok(out.index_axis_move(Axis(0), 0))
    }

    /// Forward pass over a batch, inputs as rows.
    pub fn forward_batch(&self, input: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        if let Some(m) = mask {
            m.check(self)?;
        }
        let mut a = input.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(|v| self.hidden_activation.apply(v));
                if let Some(m) = mask {
                    z *= &m.masks[k];
                }
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        Ok(())
    }
}

/// Per-parameter gradients mirroring [`DenseNet::layers`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

pub fn clamp_log_var(lv: f64) -> f64 {
    lv.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP)
}

/// Mean per-example loss over the batch plus `l2_coeff * sum(w^2)` (weights
/// only), together with its exact reverse-mode gradient.
///
/// Per-example losses sum over output dimensions; Gaussian NLL per dimension
/// is `0.5 * log(sigma^2) + (y - mu)^2 / (2 sigma^2)` with
/// `sigma^2 = exp(clamped log-variance)`.
pub fn loss_and_gradient(
    net: &DenseNet,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    loss: Loss,
    l2_coeff: f64,
    mask: Option<&DropoutMask>,
) -> Result<(f64, Gradients)> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Config("batch must be non-empty".into()));
    }
    if targets.nrows() != n {
        return Err(Error::ShapeMismatch {
            context: "target batch rows",
            expected: n,
            got: targets.nrows(),
        });
    }
    let act_dim = net.action_dim();
    if targets.ncols() != act_dim {
        return Err(Error::ShapeMismatch {
            context: "target dimension",
            expected: act_dim,
            got: targets.ncols(),
        });
    }
    net.check_input(inputs)?;
    if let Some(m) = mask {
        m.check(net)?;
    }

    // Forward with cached pre-activations and activations.
    let last = net.layers.len() - 1;
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(net.layers.len() + 1);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(net.layers.len());
    acts.push(inputs.to_owned());
    for (k, layer) in net.layers.iter().enumerate() {
        let mut z = acts[k].dot(&layer.weight.t());
        z += &layer.bias;
        if k < last {
            pre.push(z.clone());
            z.mapv_inplace(|v| net.hidden_activation.apply(v));
            if let Some(m) = mask {
                z *= &m.masks[k];
            }
        } else {
            pre.push(z.clone());
        }
        acts.push(z);
    }
    let output = &acts[net.layers.len()];

    // Loss and gradient w.r.t. the network output.
    let nf = n as f64;
    let mut data_loss = 0.0;
    let mut dout = Array2::<f64>::zeros(output.raw_dim());
    match (loss, net.output_head) {
        (Loss::Mse, _) => {
            // MSE pairs with point-estimate heads; with a Gaussian head it
            // would regress targets onto the raw [mu, log-var] outputs.
            if net.output_head != OutputHead::PointEstimate {
                return Err(Error::Config("MSE loss requires a point-estimate head".into()));
            }
            for i in 0..n {
                for j in 0..act_dim {
                    let r = output[[i, j]] - targets[[i, j]];
                    data_loss += r * r;
                    dout[[i, j]] = 2.0 * r / nf;
                }
            }
            data_loss /= nf;
        }
        (Loss::GaussianNll, OutputHead::MeanAndLogVariance) => {
            for i in 0..n {
                for j in 0..act_dim {
                    let mu = output[[i, j]];
                    let lv_raw = output[[i, act_dim + j]];
                    let lv = clamp_log_var(lv_raw);
                    let inv_var = (-lv).exp();
                    let r = targets[[i, j]] - mu;
                    data_loss += 0.5 * lv + 0.5 * r * r * inv_var;
                    dout[[i, j]] = -r * inv_var / nf;
                    if lv_raw.abs() < LOG_VAR_CLAMP {
                        dout[[i, act_dim + j]] = (0.5 - 0.5 * r * r * inv_var) / nf;
                    }
                }
            }
            data_loss /= nf;
        }
        (Loss::GaussianNll, OutputHead::PointEstimate) => {
            return Err(Error::Config(
                "Gaussian NLL loss requires a mean-and-log-variance head".into(),
            ));
        }
    }

    let l2_term: f64 = if l2_coeff > 0.0 {
        l2_coeff
            * net
                .layers
                .iter()
                .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
                .sum::<f64>()
    } else {
        0.0
    };
    let total_loss = data_loss + l2_term;
    if !total_loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    // Backward.
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = vec![Default::default(); net.layers.len()];
    let mut delta = dout;
    for k in (0..net.layers.len()).rev() {
        let dw = delta.t().dot(&acts[k]);
        let db = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut next = delta.dot(&net.layers[k].weight);
            // Chain through the hidden activation (and dropout mask) of layer k-1.
            let z = &pre[k - 1];
            for i in 0..next.nrows() {
                for j in 0..next.ncols() {
                    let m = mask.map_or(1.0, |m| m.masks[k - 1][j]);
                    let av = net.hidden_activation.apply(z[[i, j]]);
                    next[[i, j]] *= m * net.hidden_activation.deriv_from_output(av, z[[i, j]]);
                }
            }
            delta = next;
        }
        let mut dw = dw;
        if l2_coeff > 0.0 {
            dw.scaled_add(2.0 * l2_coeff, &net.layers[k].weight);
        }
        grads[k] = (dw, db);
    }

    Ok((total_loss, Gradients { layers: grads }))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// ADAM over a flat parameter vector; also reused by the GP hyperparameter fit.
#[derive(Clone, Debug)]
pub struct FlatAdam {
    pub hp: AdamParams,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl FlatAdam {
    pub fn new(n_params: usize, hp: AdamParams) -> FlatAdam {
        FlatAdam {
            hp,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grad.len(), self.first_moment.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = self.hp.beta1;
        let b2 = self.hp.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
            self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.hp.learning_rate * m_hat / (v_hat.sqrt() + self.hp.epsilon);
        }
    }
}

/// ADAM state bound to a particular network's parameter shapes.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub inner: FlatAdam,
    n_params: usize,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> AdamState {
        let hp = AdamParams {
            learning_rate,
            ..AdamParams::default()
        };
        AdamState {
            inner: FlatAdam::new(net.n_params(), hp),
            n_params: net.n_params(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.inner.step_count
    }
}

pub fn adam_step(net: &mut DenseNet, grad: &Gradients, state: &mut AdamState) {
    assert_eq!(net.n_params(), state.n_params, "optimizer bound to a different shape");
    let mut params = net.params_to_vec();
    let g = grad.to_vec();
    state.inner.step(&mut params, &g);
    net.set_params_from_slice(&params);
}

/// Trains `net` in place: `config.epochs` full passes over the data, each
/// pass reshuffled from the config's seed stream, mini-batches of
/// `batch_size` with the final short batch included.
pub fn train(net: &mut DenseNet, inputs: ArrayView2<f64>, targets: ArrayView2<f64>, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::Config("training dataset must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = AdamState::new(net, config.learning_rate);
    let mut idx: Vec<usize> = (0..inputs.nrows()).collect();
    for _ in 0..config.epochs {
        idx.shuffle(&mut rng);
        for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
            let xb = inputs.select(Axis(0), chunk);
            let yb = targets.select(Axis(0), chunk);
            let mask = if config.dropout_keep_prob < 1.0 {
                Some(DropoutMask::sample(net, config.dropout_keep_prob, &mut rng))
            } else {
                None
            };
            let (_, grad) = loss_and_gradient(
                net,
                xb.view(),
                yb.view(),
                config.loss,
                config.l2_coeff,
                mask.as_ref(),
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss => Error::TrainingDivergence { batch_index: b },
                other => other,
            })?;
            adam_step(net, &grad, &mut adam);
        }
    }
    Ok(())
}
