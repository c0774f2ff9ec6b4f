//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`.
//! Criteria 3 to 5 share one full-scale fixed-threshold run; with criterion
//! 8's twenty budget runs this suite takes a few hours on one core.

use std::path::Path;
use std::sync::OnceLock;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ensemble_dagger::analysis::{
    grid_statistic, permitted_set, solve_threshold_over_stats, ThresholdKind,
};
use ensemble_dagger::dagger::DecisionRule;
use ensemble_dagger::experiments::{
    self, ExperimentConfig, GpCompareConfig, LearningPerfGranularity, PendulumBudgetConfig,
    PendulumFixedConfig,
};
use ensemble_dagger::nn::{
    loss_and_gradient, Activation, DenseNet, DropoutMask, Loss, OutputHead, TrainConfig,
};
use ensemble_dagger::pendulum::ExpertController;
use ensemble_dagger::riccati::lqr_gains;
use ensemble_dagger::uncertainty::{train_ensemble, EnsembleConfig, EnsemblePolicy};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE CRITERION {n} ({name}): {verdict} [{detail}]");
    assert!(ok, "criterion {n} ({name}): {detail}");
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce01);
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let nll = case % 2 == 1;
        let obs_dim = rng.random_range(1..=3);
        let act_dim = rng.random_range(1..=2);
        let out_dim = if nll { 2 * act_dim } else { act_dim };
        let mut sizes = vec![obs_dim];
        for _ in 0..rng.random_range(1..=2usize) {
            sizes.push(rng.random_range(2..=5));
        }
        sizes.push(out_dim);
        let (head, loss) = if nll {
            (OutputHead::MeanAndLogVariance, Loss::GaussianNll)
        } else {
            (OutputHead::PointEstimate, Loss::Mse)
        };
        let activation = if case % 3 == 0 { Activation::Relu } else { Activation::Tanh };
        let mut net = DenseNet::new(&sizes, activation, head, case).unwrap();
        assert!(net.n_params() <= 100, "case {case}: {} params", net.n_params());

        let batch = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((batch, obs_dim), |_| rng.random_range(-1.5..1.5));
        let t = Array2::from_shape_fn((batch, act_dim), |_| rng.random_range(-1.5..1.5));
        let l2 = if case % 5 == 0 { 1e-3 } else { 0.0 };
        let mask = (case % 4 == 2)
            .then(|| DropoutMask::sample(&net, 0.8, &mut rng));

        let (l0, grads) =
            loss_and_gradient(&net, x.view(), t.view(), loss, l2, mask.as_ref()).unwrap();
        let analytic = grads.to_vec();
        let params = net.params_to_vec();
        let h = 1e-5;
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[k] = params[k] + h;
            net.set_params_from_slice(&p);
            let (lp, _) =
                loss_and_gradient(&net, x.view(), t.view(), loss, l2, mask.as_ref()).unwrap();
            p[k] = params[k] - h;
            net.set_params_from_slice(&p);
            let (lm, _) =
                loss_and_gradient(&net, x.view(), t.view(), loss, l2, mask.as_ref()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if activation == Activation::Relu && rel >= 1e-4 {
                // A ReLU kink within h of a preactivation (exact for rows
                // whose previous layer went fully inactive, since biases
                // start at zero) invalidates central FD. There the one-sided
                // slopes disagree; on a smooth coordinate they match, so a
                // genuinely wrong gradient stays flagged.
                let fd_plus = (lp - l0) / h;
                let fd_minus = (l0 - lm) / h;
                if (fd_plus - fd_minus).abs() > 1e-3 * fd_plus.abs().max(fd_minus.abs()).max(1e-3) {
                    continue;
                }
            }
            worst = worst.max(rel);
            if rel >= 1e-4 {
                report(
                    1,
                    "gradient oracle",
                    false,
                    &format!("case {case} param {k}: analytic {a} vs fd {fd}"),
                );
            }
        }
        net.set_params_from_slice(&params);
    }
    report(1, "gradient oracle", worst < 1e-4, &format!("worst rel err {worst:.2e} over 1000 cases"));
}

#[test]
fn criterion_02_lqr_gains() {
    let a = array![[0.0, 1.0], [0.0, -2.0]];
    let b = array![[0.0], [1.0]];
    let q = Array2::eye(2);
    let r = array![[10.0]];
    let k = lqr_gains(&a, &b, &q, &r).unwrap();
    let err = (k[[0, 0]] - 0.316).abs().max((k[[0, 1]] - 0.175).abs());
    report(
        2,
        "LQR gain reproduction",
        err < 1e-3,
        &format!("K = [{:.6}, {:.6}], max dev {err:.2e}", k[[0, 0]], k[[0, 1]]),
    );
}

struct RepRow {
    rule: String,
    epoch: usize,
    failure: bool,
}

struct AggRow {
    rule: String,
    epoch: usize,
    metric: String,
    mean: f64,
    stderr: f64,
}

struct FixedRun {
    per_rep: Vec<RepRow>,
    agg: Vec<AggRow>,
}

fn fixed_run() -> &'static FixedRun {
    static RUN: OnceLock<FixedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut cfg = PendulumFixedConfig::default();
        // Final-epoch basins only: per-epoch novice basins would multiply
        // the runtime several-fold and only epoch 6 is graded.
        cfg.learning_performance = LearningPerfGranularity::FinalOnly;
        let dir = tempfile::tempdir().unwrap();
        experiments::run(&ExperimentConfig::PendulumFixed(cfg), dir.path()).unwrap();
        let per_rep = read_csv(&dir.path().join("per_repetition.csv"))[1..]
            .iter()
            .map(|r| RepRow {
                rule: r[0].clone(),
                epoch: r[2].parse().unwrap(),
                failure: r[5] == "1",
            })
            .collect();
        let agg = read_csv(&dir.path().join("aggregate.csv"))[1..]
            .iter()
            .map(|r| AggRow {
                rule: r[0].clone(),
                epoch: r[1].parse().unwrap(),
                metric: r[2].clone(),
                mean: r[3].parse().unwrap(),
                stderr: r[4].parse().unwrap(),
            })
            .collect();
        FixedRun { per_rep, agg }
    })
}

fn doubt_label() -> String {
    PendulumFixedConfig::rule_label(&DecisionRule::Doubt { chi: 1e-3 })
}

fn disc_labels() -> [String; 2] {
    [
        PendulumFixedConfig::rule_label(&DecisionRule::Discrepancy { tau: 1e-1 }),
        PendulumFixedConfig::rule_label(&DecisionRule::Discrepancy { tau: 5e-2 }),
    ]
}

fn failures_at(run: &FixedRun, rule: &str, epoch: usize) -> usize {
    run.per_rep
        .iter()
        .filter(|r| r.rule == rule && r.epoch == epoch && r.failure)
        .count()
}

#[test]
fn criterion_03_doubt_rule_safety_ordering() {
    let run = fixed_run();
    let doubt = doubt_label();
    let disc = &disc_labels()[0];
    let doubt_total: usize = (1..=6).map(|e| failures_at(run, &doubt, e)).sum();
    let mut ordering_ok = true;
    let mut per_epoch = String::new();
    for e in 1..=6 {
        let d = failures_at(run, &doubt, e);
        let x = failures_at(run, disc, e);
        if x > 0 && d >= x {
            ordering_ok = false;
        }
        per_epoch.push_str(&format!(" e{e}:{d}/{x}"));
    }
    report(
        3,
        "fixed-hyperparameter safety ordering",
        doubt_total <= 2 && ordering_ok,
        &format!("doubt failures {doubt_total}/180; doubt/discrepancy per epoch{per_epoch}"),
    );
}

fn agg_value(run: &FixedRun, rule: &str, epoch: usize, metric: &str) -> (f64, f64) {
    let row = run
        .agg
        .iter()
        .find(|r| r.rule == rule && r.epoch == epoch && r.metric == metric)
        .unwrap_or_else(|| panic!("no aggregate row for {rule} epoch {epoch} {metric}"));
    (row.mean, row.stderr)
}

#[test]
fn criterion_04_learning_performance_ordering() {
    let run = fixed_run();
    let (doubt_mean, doubt_se) = agg_value(run, &doubt_label(), 6, "learning_performance");
    let mut ok = true;
    let mut detail = format!("doubt {doubt_mean:.3}±{doubt_se:.3}");
    for disc in &disc_labels() {
        let (m, se) = agg_value(run, disc, 6, "learning_performance");
        let margin = doubt_mean - m;
        let pooled = (doubt_se * doubt_se + se * se).sqrt();
        ok &= margin > 2.0 * pooled;
        detail.push_str(&format!("; vs {disc} {m:.3}±{se:.3} margin {margin:.3} > 2x{pooled:.3}"));
    }
    report(4, "learning-performance ordering", ok, &detail);
}

#[test]
fn criterion_05_permitted_volume_ordering() {
    let run = fixed_run();
    let doubt = doubt_label();
    let disc = &disc_labels()[0];
    let mut ok = true;
    let mut detail = String::from("discrepancy/doubt volume ratio per epoch:");
    for e in 1..=6 {
        let (dv, _) = agg_value(run, &doubt, e, "permitted_volume");
        let (xv, _) = agg_value(run, disc, e, "permitted_volume");
        let ratio = xv / dv;
        ok &= ratio >= 2.0;
        detail.push_str(&format!(" e{e}:{ratio:.1}"));
    }
    report(5, "permitted-volume ordering", ok, &detail);
}

fn small_trained_novice(seed: u64, rng: &mut ChaCha8Rng) -> EnsemblePolicy {
    let cfg = EnsembleConfig {
        hidden: vec![16, 16],
        members: 3,
        ..EnsembleConfig::default()
    };
    let mut pol = EnsemblePolicy::new(&cfg, seed).unwrap();
    let expert = ExpertController::default();
    let n = 60;
    let x = Array2::from_shape_fn((n, 2), |(_, j)| {
        if j == 0 {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        } else {
            rng.random_range(-5.0..5.0)
        }
    });
    let y = Array2::from_shape_fn((n, 1), |(i, _)| {
        let s = ensemble_dagger::pendulum::PendulumState::new(x[[i, 0]], x[[i, 1]]);
        ensemble_dagger::pendulum::expert_action(&s, &expert)
    });
    let tc = TrainConfig {
        epochs: 30,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    train_ensemble(&mut pol, x.view(), y.view(), &tc).unwrap();
    pol
}

#[test]
fn criterion_06_bisection_matches_sorting_oracle() {
    let grid = ensemble_dagger::grid::StateGrid::default();
    let expert = ExpertController::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce06);
    let mut checks = 0;
    for i in 0..20u64 {
        let pol = small_trained_novice(i, &mut rng);
        let kind = if i % 2 == 0 { ThresholdKind::Doubt } else { ThresholdKind::Discrepancy };
        let stats = grid_statistic(kind, &pol, &expert, &grid).unwrap();
        let mut sorted = stats.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in [10usize, 500, 5000] {
            let target = k as f64 / grid.len() as f64;
            let thr = solve_threshold_over_stats(&stats, target, 1e-12, 200).unwrap();
            let achieved = stats.iter().filter(|&&v| v <= thr).count();
            // Oracle: the k-th order statistic, tie cells included.
            let s = sorted[k - 1];
            let oracle = sorted.iter().filter(|&&v| v <= s).count();
            if achieved != oracle {
                report(
                    6,
                    "bisection vs sorting oracle",
                    false,
                    &format!("novice {i} k={k}: bisection volume {achieved} cells, oracle {oracle}"),
                );
            }
            checks += 1;
        }
    }
    report(6, "bisection vs sorting oracle", checks == 60, &format!("{checks}/60 exact volume matches"));
}

#[test]
fn criterion_07_ensemble_mask_is_conjunction() {
    let grid = ensemble_dagger::grid::StateGrid::default();
    let expert = ExpertController::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce07);
    let cfg = EnsembleConfig {
        hidden: vec![16, 16],
        members: 3,
        ..EnsembleConfig::default()
    };
    let mut triples = 0;
    for i in 0..50u64 {
        let pol = EnsemblePolicy::new(&cfg, i).unwrap();
        let tau = 10f64.powf(rng.random_range(-4.0..0.0));
        let chi = 10f64.powf(rng.random_range(-8.0..-2.0));
        let disc =
            permitted_set(&DecisionRule::Discrepancy { tau }, &pol, &expert, &grid).unwrap();
        let doubt = permitted_set(&DecisionRule::Doubt { chi }, &pol, &expert, &grid).unwrap();
        let both =
            permitted_set(&DecisionRule::Ensemble { tau, chi }, &pol, &expert, &grid).unwrap();
        for c in 0..grid.len() {
            let conj = disc.mask[c] && doubt.mask[c];
            if both.mask[c] != conj || (both.mask[c] && !(disc.mask[c] && doubt.mask[c])) {
                report(
                    7,
                    "permitted-set algebra",
                    false,
                    &format!("triple {i} cell {c}: ensemble {} vs AND {conj}", both.mask[c]),
                );
            }
        }
        triples += 1;
    }
    report(7, "permitted-set algebra", triples == 50, "ensemble mask == discrepancy AND doubt on 50 triples");
}

#[test]
fn criterion_08_doubt_set_is_nearer_the_dataset() {
    let base = tempfile::tempdir().unwrap();
    let mut wins = 0;
    for run in 0..20u64 {
        let mut cfg = PendulumBudgetConfig::default();
        cfg.master_seed = run;
        cfg.ic_seed_base = 1000 + run;
        cfg.compute_novice_basin = false;
        let dir = base.path().join(format!("run{run}"));
        // The expert basin depends only on controller and grid; reuse the
        // first run's cache.
        if run > 0 {
            let src = base.path().join("run0/cache");
            let dst = dir.join("cache");
            std::fs::create_dir_all(&dst).unwrap();
            for entry in std::fs::read_dir(&src).unwrap() {
                let entry = entry.unwrap();
                std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
            }
        }
        experiments::run(&ExperimentConfig::PendulumBudget(cfg), &dir).unwrap();
        let summary = read_csv(&dir.join("summary.csv"));
        let mean_dist = |rule: &str| -> f64 {
            let vals: Vec<f64> = summary[1..]
                .iter()
                .filter(|r| r[0] == rule && r[1] != "0")
                .map(|r| r[6].parse().unwrap())
                .collect();
            assert_eq!(vals.len(), 3, "{rule}: expected 3 gated epochs");
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        if mean_dist("doubt") < mean_dist("discrepancy") {
            wins += 1;
        }
    }
    report(
        8,
        "familiarity of the doubt-permitted set",
        wins >= 18,
        &format!("doubt nearer the dataset in {wins}/20 seeded runs"),
    );
}

#[test]
fn criterion_09_gp_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GpCompareConfig::default();
    experiments::run(&ExperimentConfig::GpCompare(cfg), dir.path()).unwrap();
    let status = read_csv(&dir.path().join("model_status.csv"));
    let all_ok = status[1..].iter().all(|r| r[1] == "ok");
    let metrics = read_csv(&dir.path().join("metrics.csv"));
    let row = |model: &str| -> &Vec<String> {
        metrics[1..].iter().find(|r| r[0] == model).unwrap()
    };
    let rmse_gp: f64 = row("gp")[1].parse().unwrap();
    let rmse_vanilla: f64 = row("vanilla_ensemble")[1].parse().unwrap();
    let mut grows = true;
    for model in ["gp", "vanilla_ensemble", "nll_ensemble"] {
        let hull: f64 = row(model)[2].parse().unwrap();
        let far: f64 = row(model)[3].parse().unwrap();
        grows &= far > hull;
    }
    report(
        9,
        "GP-approximation comparison",
        all_ok && rmse_gp < 0.05 && rmse_vanilla < 0.05 && grows,
        &format!(
            "all models trained: {all_ok}; train RMSE gp {rmse_gp:.4}, vanilla {rmse_vanilla:.4}; std grows off-data: {grows}"
        ),
    );
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let mut gp = GpCompareConfig::default();
    gp.members = 3;
    gp.hidden = vec![16, 16];
    gp.vanilla_epochs = 30;
    gp.nll_epochs = 40;
    gp.dropout_epochs = 30;
    gp.dropout_queries = 25;
    gp.query_points = 31;
    gp.gp.n_restarts = 2;
    gp.gp.opt_steps = 40;

    let mut budget = PendulumBudgetConfig::default();
    budget.epochs = 2;
    budget.ensemble.hidden = vec![12, 12];
    budget.ensemble.members = 3;
    budget.train.epochs = 10;
    budget.grid.n_theta = 21;
    budget.grid.n_theta_dot = 21;
    budget.basin.max_steps = 120;
    budget.compute_novice_basin = false;

    let mut fixed = PendulumFixedConfig::default();
    fixed.epochs = 2;
    fixed.repetitions = 2;
    fixed.ensemble.hidden = vec![12, 12];
    fixed.ensemble.members = 3;
    fixed.train.epochs = 10;
    fixed.grid.n_theta = 21;
    fixed.grid.n_theta_dot = 21;
    fixed.basin.max_steps = 120;
    fixed.learning_performance = LearningPerfGranularity::FinalOnly;

    let mut ok = true;
    let mut detail = String::new();
    for cfg in [
        ExperimentConfig::GpCompare(gp),
        ExperimentConfig::PendulumBudget(budget),
        ExperimentConfig::PendulumFixed(fixed),
    ] {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = experiments::run(&cfg, d1.path()).unwrap();
        let m2 = experiments::run(&cfg, d2.path()).unwrap();
        let same = m1.files == m2.files;
        ok &= same;
        if !detail.is_empty() {
            detail.push_str("; ");
        }
        detail.push_str(&format!("{}: {}", cfg.name(), if same { "identical" } else { "differs" }));
    }
    report(10, "determinism", ok, &detail);
}
