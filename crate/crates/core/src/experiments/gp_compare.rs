//! Four uncertainty models fit to the same eight samples of
//! f(x) = sin(pi x) + 0.2 sin(4 pi x), queried over [-1.5, 1.5]: exact GP,
//! MSE ensemble, NLL ensemble, and MC-dropout. Each model's std column is
//! also emitted rescaled so its sum matches the GP's.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gp::{gp_fit, gp_posterior};
use crate::nn::{Activation, DenseNet, Loss, OutputHead, TrainConfig, train};
use crate::report::{fmt_f64, SvgPlot, Table};
use crate::seeds::derive_seed;
use crate::uncertainty::{mc_dropout_predict, train_ensemble, EnsemblePolicy};

use super::config::GpCompareConfig;
use super::manifest::RunManifest;

struct ModelCurve {
    name: &'static str,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Predictive mean at the exact training inputs, for the train RMSE.
    train_pred: Vec<f64>,
    status: std::result::Result<(), String>,
}

fn queries(cfg: &GpCompareConfig) -> Vec<f64> {
    (0..cfg.query_points)
        .map(|i| cfg.query_min + (cfg.query_max - cfg.query_min) * i as f64 / (cfg.query_points - 1) as f64)
        .collect()
}

fn failed(name: &'static str, n: usize, err: String) -> ModelCurve {
    ModelCurve {
        name,
        mean: vec![f64::NAN; n],
        std: vec![f64::NAN; n],
        train_pred: Vec::new(),
        status: Err(err),
    }
}

fn fit_gp(cfg: &GpCompareConfig, xs: &Array2<f64>, ys: &Array1<f64>, qs: &[f64]) -> ModelCurve {
    let mut gp_cfg = cfg.gp.clone();
    gp_cfg.seed = derive_seed(cfg.master_seed, 0x69, 0);
    match gp_fit(xs, ys, &gp_cfg) {
        Ok(model) => {
            let mut mean = Vec::with_capacity(qs.len());
            let mut std = Vec::with_capacity(qs.len());
            for &q in qs {
                let (m, s) = gp_posterior(&model, Array1::from_vec(vec![q]).view());
                mean.push(m);
                std.push(s);
            }
            let train_pred = xs
                .rows()
                .into_iter()
                .map(|r| gp_posterior(&model, r).0)
                .collect();
            ModelCurve {
                name: "gp",
                mean,
                std,
                train_pred,
                status: Ok(()),
            }
        }
        Err(e) => failed("gp", qs.len(), e.to_string()),
    }
}

fn fit_ensemble(
    cfg: &GpCompareConfig,
    name: &'static str,
    head: OutputHead,
    train_cfg: &TrainConfig,
    seed_tag: u64,
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    qs: &[f64],
) -> ModelCurve {
    let ens_cfg = cfg.ensemble(head);
    let build = || -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut ens = EnsemblePolicy::new(&ens_cfg, derive_seed(cfg.master_seed, seed_tag, 0))?;
        let tc = TrainConfig {
            rng_seed: derive_seed(cfg.master_seed, seed_tag, 1),
            ..train_cfg.clone()
        };
        train_ensemble(&mut ens, xs.view(), ys.view(), &tc)?;
        let q = Array2::from_shape_vec((qs.len(), 1), qs.to_vec()).unwrap();
        let (mean, var) = ens.predict_batch(q.view())?;
        let (train_mean, _) = ens.predict_batch(xs.view())?;
        Ok((
            mean.column(0).to_vec(),
            var.column(0).iter().map(|v| v.sqrt()).collect(),
            train_mean.column(0).to_vec(),
        ))
    };
    match build() {
        Ok((mean, std, train_pred)) => ModelCurve {
            name,
            mean,
            std,
            train_pred,
            status: Ok(()),
        },
        Err(e) => failed(name, qs.len(), e.to_string()),
    }
}

fn fit_mc_dropout(cfg: &GpCompareConfig, xs: &Array2<f64>, ys: &Array2<f64>, qs: &[f64]) -> ModelCurve {
    let mut sizes = vec![1usize];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let build = || -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut net = DenseNet::new(
            &sizes,
            Activation::Tanh,
            OutputHead::PointEstimate,
            derive_seed(cfg.master_seed, 0xd0, 0),
        )?;
        let tc = TrainConfig {
            epochs: cfg.dropout_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.dropout_learning_rate,
            l2_coeff: 0.0,
            loss: Loss::Mse,
            dropout_keep_prob: cfg.dropout_keep_prob,
            rng_seed: derive_seed(cfg.master_seed, 0xd0, 1),
        };
        train(&mut net, xs.view(), ys.view(), &tc)?;
        let mut mean = Vec::with_capacity(qs.len());
        let mut std = Vec::with_capacity(qs.len());
        for (qi, &q) in qs.iter().enumerate() {
            // Per-query rng stream keeps the output independent of query
            // order and chunking.
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 0xd05e, qi as u64));
            let dist = mc_dropout_predict(
                &net,
                Array1::from_vec(vec![q]).view(),
                cfg.dropout_queries,
                cfg.dropout_keep_prob,
                &mut rng,
            )?;
            mean.push(dist.mean[0]);
            std.push(dist.variance[0].sqrt());
        }
        let mut train_pred = Vec::with_capacity(xs.nrows());
        for (ti, row) in xs.rows().into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 0xd07e, ti as u64));
            let dist = mc_dropout_predict(&net, row, cfg.dropout_queries, cfg.dropout_keep_prob, &mut rng)?;
            train_pred.push(dist.mean[0]);
        }
        Ok((mean, std, train_pred))
    };
    match build() {
        Ok((mean, std, train_pred)) => ModelCurve {
            name: "mc_dropout",
            mean,
            std,
            train_pred,
            status: Ok(()),
        },
        Err(e) => failed("mc_dropout", qs.len(), e.to_string()),
    }
}

pub fn run_gp_compare(cfg: &GpCompareConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_json = serde_json::to_vec(cfg)?;
    let mut manifest = RunManifest::new("gp_compare", &config_json);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 0x5a, 0));
    let sample_x: Vec<f64> = (0..cfg.n_samples)
        .map(|_| rng.random_range(cfg.sample_min..cfg.sample_max))
        .collect();
    let sample_y: Vec<f64> = sample_x.iter().map(|&x| GpCompareConfig::target(x)).collect();

    let mut data = Table::new(&["x", "y"]);
    for (&x, &y) in sample_x.iter().zip(sample_y.iter()) {
        data.push(vec![fmt_f64(x), fmt_f64(y)]);
    }
    data.write(&out_dir.join("training_data.csv"))?;
    manifest.record(out_dir, "training_data.csv")?;

    let xs = Array2::from_shape_vec((cfg.n_samples, 1), sample_x.clone()).unwrap();
    let ys1 = Array1::from_vec(sample_y.clone());
    let ys2 = Array2::from_shape_vec((cfg.n_samples, 1), sample_y.clone()).unwrap();
    let qs = queries(cfg);

    let vanilla_tc = TrainConfig {
        epochs: cfg.vanilla_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.vanilla_learning_rate,
        l2_coeff: 0.0,
        loss: Loss::Mse,
        dropout_keep_prob: 1.0,
        rng_seed: 0,
    };
    let nll_tc = TrainConfig {
        epochs: cfg.nll_epochs,
        learning_rate: cfg.nll_learning_rate,
        loss: Loss::GaussianNll,
        ..vanilla_tc.clone()
    };

    let models = vec![
        fit_gp(cfg, &xs, &ys1, &qs),
        fit_ensemble(cfg, "vanilla_ensemble", OutputHead::PointEstimate, &vanilla_tc, 0xa1, &xs, &ys2, &qs),
        fit_ensemble(cfg, "nll_ensemble", OutputHead::MeanAndLogVariance, &nll_tc, 0xa2, &xs, &ys2, &qs),
        fit_mc_dropout(cfg, &xs, &ys2, &qs),
    ];

    let gp_std_sum: f64 = models[0]
        .status
        .is_ok()
        .then(|| models[0].std.iter().sum())
        .unwrap_or(f64::NAN);

    let mut status = Table::new(&["model", "status"]);
    let mut metrics = Table::new(&["model", "train_rmse", "mean_std_hull", "mean_std_far", "std_scale"]);
    let hull = (
        sample_x.iter().cloned().fold(f64::INFINITY, f64::min),
        sample_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    let mut plot = SvgPlot::new(
        "Uncertainty models on 8 samples",
        "x",
        "f(x)",
        (cfg.query_min, cfg.query_max),
        (-2.0, 2.0),
    );
    let truth: Vec<f64> = qs.iter().map(|&x| GpCompareConfig::target(x)).collect();
    plot.line(&qs, &truth, "#999999", "target");
    plot.scatter(&sample_x, &sample_y, "#000000", 3.0, "samples");
    let colors = ["#1f77b4", "#2ca02c", "#d62728", "#9467bd"];

    for (mi, model) in models.iter().enumerate() {
        status.push(vec![
            model.name.to_string(),
            match &model.status {
                Ok(()) => "ok".to_string(),
                Err(e) => format!("diverged: {e}"),
            },
        ]);
        let std_sum: f64 = model.std.iter().sum();
        let scale = if model.status.is_ok() && std_sum > 0.0 && gp_std_sum.is_finite() {
            gp_std_sum / std_sum
        } else {
            1.0
        };
        let mut t = Table::new(&["x", "mean", "std_raw", "std_scaled"]);
        for (i, &x) in qs.iter().enumerate() {
            t.push(vec![
                fmt_f64(x),
                fmt_f64(model.mean[i]),
                fmt_f64(model.std[i]),
                fmt_f64(model.std[i] * scale),
            ]);
        }
        let file = format!("{}.csv", model.name);
        t.write(&out_dir.join(&file))?;
        manifest.record(out_dir, &file)?;

        if model.status.is_ok() {
            let rmse = train_rmse(&sample_y, &model.train_pred);
            let hull_std = mean_where(&qs, &model.std, |x| x >= hull.0 && x <= hull.1);
            let far_std = mean_where(&qs, &model.std, |x| x.abs() >= 1.2);
            metrics.push(vec![
                model.name.to_string(),
                fmt_f64(rmse),
                fmt_f64(hull_std),
                fmt_f64(far_std),
                fmt_f64(scale),
            ]);
            let scaled: Vec<f64> = model.std.iter().map(|s| s * scale).collect();
            let lo: Vec<f64> = model.mean.iter().zip(&scaled).map(|(m, s)| m - s).collect();
            let hi: Vec<f64> = model.mean.iter().zip(&scaled).map(|(m, s)| m + s).collect();
            plot.band(&qs, &lo, &hi, colors[mi]);
            plot.line(&qs, &model.mean, colors[mi], model.name);
        }
    }
    status.write(&out_dir.join("model_status.csv"))?;
    manifest.record(out_dir, "model_status.csv")?;
    metrics.write(&out_dir.join("metrics.csv"))?;
    manifest.record(out_dir, "metrics.csv")?;
    plot.save(&out_dir.join("comparison.svg"))?;
    manifest.record(out_dir, "comparison.svg")?;
    Ok(manifest)
}

fn train_rmse(sample_y: &[f64], pred: &[f64]) -> f64 {
    let mse: f64 = sample_y
        .iter()
        .zip(pred.iter())
        .map(|(&y, &p)| (p - y) * (p - y))
        .sum::<f64>()
        / sample_y.len().max(1) as f64;
    mse.sqrt()
}

fn mean_where(qs: &[f64], vals: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    let sel: Vec<f64> = qs
        .iter()
        .zip(vals.iter())
        .filter(|(&x, _)| pred(x))
        .map(|(_, &v)| v)
        .collect();
    sel.iter().sum::<f64>() / sel.len().max(1) as f64
}
