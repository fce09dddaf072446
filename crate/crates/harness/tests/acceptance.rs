//! The acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{gaussian_tensor, instance, load_config, mean, with_params, Csv};
use curvlab::autodiff::{self, Program};
use curvlab::bn::{bn_forward, bn_gap_sweep, bn_jacobian_dense, BnBatchState};
use curvlab::cost::{loss, loss_and_grad, GammaProgram, LossProgram};
use curvlab::distributions::{
    generalisation_bound, max_inequality_violation_rate, reference_stats, sample_max_shortfall_rate,
    thm_sample_max_bound, ColumnMap, Distribution, GeneralisationInputs, HProfile, JacobianNormMap,
    McOptions,
};
use curvlab::spectral::{empirical_lipschitz, gauss_newton_norm, sharpness, GnMode, LossSetup, PowerOptions};
use curvlab::trainer::{train, TrainConfig};
use curvlab::{BnMode, CostSpec, LayerKind, LayeredNetwork, Tensor};
use curvlab_harness::render;
use curvlab_oracle::{
    fd_directional, fd_grad, fd_hessian, fd_hessian_values, fd_hvp, fd_jacobian, from_row_major,
    lstsq_slope, magnitude_eigenvalue, rel_err, rel_err_scalar, top_eigenvalue, H,
};
use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn tight() -> PowerOptions {
    PowerOptions {
        tol: 1e-12,
        max_iter: 20_000,
        seed: 3,
    }
}

fn layer_only(net: &LayeredNetwork, l: usize) -> LayeredNetwork {
    let mut single = LayeredNetwork::new(vec![net.layers()[l].clone()]).unwrap();
    let r = net.param_range(l);
    single.set_params(Tensor::vector(net.params().data()[r].to_vec())).unwrap();
    single
}

#[allow(clippy::needless_range_loop)]
fn autodiff_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..24 {
        let inst = instance(k, 101);
        let theta = inst.net.params().data().to_vec();
        let (_, g) = loss_and_grad(&inst.net, &inst.cost, &inst.x, &inst.y).unwrap();
        let fd = fd_grad(|t| loss(&with_params(&inst.net, t), &inst.cost, &inst.x, &inst.y).unwrap(), &theta, H);
        worst = worst.max(rel_err(g.data(), &fd, 1e-8));

        let p = LossProgram { net: &inst.net, cost: &inst.cost, x: &inst.x, y: &inst.y };
        let v = gaussian_tensor(&[theta.len()], 7 + k as u64);
        let hv = autodiff::hvp(&p, inst.net.params(), &v).unwrap();
        let fd = fd_hvp(|t| autodiff::grad(&p, &Tensor::vector(t.to_vec())).unwrap().into_data(), &theta, v.data(), H);
        worst = worst.max(rel_err(hv.data(), &fd, 1e-8));

        let acts = inst.net.activations(&inst.x).unwrap();
        for l in 0..inst.net.num_layers() {
            let op = inst.net.layer_io_jacobian(l, &inst.x).unwrap();
            let dense = from_row_major(op.dim_out(), op.dim_in(), &op.to_dense().unwrap());
            let single = layer_only(&inst.net, l);
            let shape = acts[l].shape().to_vec();
            let fd = fd_jacobian(
                |v| single.forward_batch(&Tensor::new(shape.clone(), v.to_vec()).unwrap()).unwrap().into_data(),
                acts[l].data(),
                H,
            );
            worst = worst.max((&dense - &fd).norm() / fd.norm().max(1e-8));
        }
        for l in inst.net.linear_layers() {
            let op = inst.net.layer_param_derivative(l, &inst.x).unwrap();
            let single = layer_only(&inst.net, l);
            let theta_l = single.params().data().to_vec();
            let v = gaussian_tensor(&[theta_l.len()], 50 + l as u64);
            let fd = fd_directional(
                |t| with_params(&single, t).forward_batch(&acts[l]).unwrap().into_data(),
                &theta_l,
                v.data(),
                H,
            );
            worst = worst.max(rel_err(&op.apply(v.data()).unwrap(), &fd, 1e-8));
        }
    }
    check(worst < 1e-6, format!("worst relative error {worst:.3e}"))?;
    Ok(format!("24 instances, worst relative error {worst:.3e}"))
}

fn hessian_decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let inst = instance(k, 202);
        let s = LossSetup::new(&inst.net, &inst.cost, &inst.x, &inst.y);
        let (h, gn, res) = (s.hessian(), s.gauss_newton(GnMode::Primal).unwrap(), s.residual().unwrap());
        for probe in 0..3 {
            let v = gaussian_tensor(&[inst.net.param_count()], 300 + probe);
            let hv = h.apply(v.data()).unwrap();
            let sum: Vec<f64> = gn
                .apply(v.data())
                .unwrap()
                .iter()
                .zip(res.apply(v.data()).unwrap())
                .map(|(a, b)| a + b)
                .collect();
            worst = worst.max(rel_err(&sum, &hv, 1e-12));
        }
    }
    check(worst < 1e-8, format!("worst relative error {worst:.3e}"))?;
    Ok(format!("10 nets, worst relative error {worst:.3e}"))
}

fn dense_gauss_newton(net: &LayeredNetwork, cost: &CostSpec, x: &Tensor, y: &Tensor) -> DMatrix<f64> {
    let j = fd_jacobian(|t| with_params(net, t).forward_batch(x).unwrap().into_data(), net.params().data(), H);
    let z = net.forward_batch(x).unwrap();
    let shape = z.shape().to_vec();
    let hg = fd_hessian_values(
        |v| {
            let p = GammaProgram { cost, y };
            p_eval(&p, &Tensor::new(shape.clone(), v.to_vec()).unwrap())
        },
        z.data(),
        1e-4,
    );
    j.transpose() * hg * j
}

fn p_eval<P: Program>(p: &P, x: &Tensor) -> f64 {
    autodiff::evaluate(p, x).unwrap().data()[0]
}

fn isospectrality() -> Outcome {
    let (mut modes, mut dense_err): (f64, f64) = (0.0, 0.0);
    for k in 0..10 {
        let inst = instance(k, 303);
        let s = LossSetup::new(&inst.net, &inst.cost, &inst.x, &inst.y);
        let p = gauss_newton_norm(&s, GnMode::Primal, &tight()).unwrap().value;
        let c = gauss_newton_norm(&s, GnMode::Conjugate, &tight()).unwrap().value;
        modes = modes.max(rel_err_scalar(p, c, 1e-12));
        check(inst.net.param_count() <= 200, "net too large for the dense oracle")?;
        let dense = top_eigenvalue(&dense_gauss_newton(&inst.net, &inst.cost, &inst.x, &inst.y));
        dense_err = dense_err.max(rel_err_scalar(p, dense, 1e-12));
    }
    check(modes < 1e-6, format!("primal vs conjugate {modes:.3e}"))?;
    check(dense_err < 1e-5, format!("vs dense {dense_err:.3e}"))?;
    Ok(format!("primal vs conjugate {modes:.3e}, vs dense {dense_err:.3e}"))
}

fn dense_hessian(net: &LayeredNetwork, cost: &CostSpec, x: &Tensor, y: &Tensor) -> DMatrix<f64> {
    fd_hessian(|t| loss_and_grad(&with_params(net, t), cost, x, y).unwrap().1.into_data(), net.params().data(), H)
}

fn sharpness_oracle() -> Outcome {
    let mut cases = Vec::new();
    for seed in 0..3 {
        let net = LayeredNetwork::mlp(&[2, 4, 3, 1], LayerKind::Tanh, 40 + seed).unwrap();
        let x = gaussian_tensor(&[2, 6], 41 + seed);
        let y = gaussian_tensor(&[1, 6], 42 + seed);
        cases.push((net, x, y));
    }
    // large residual against a far negative target: the most negative
    // eigenvalue dominates in magnitude
    let mut neg = LayeredNetwork::mlp(&[1, 1, 1], LayerKind::Tanh, 0).unwrap();
    neg.set_params(Tensor::vector(vec![0.8, 0.6, 1.0, 0.0])).unwrap();
    cases.push((
        neg,
        Tensor::matrix(1, 2, vec![1.0, 1.5]).unwrap(),
        Tensor::matrix(1, 2, vec![-20.0, -20.0]).unwrap(),
    ));
    let cost = CostSpec::square();
    let mut worst: f64 = 0.0;
    for (i, (net, x, y)) in cases.iter().enumerate() {
        check(net.param_count() <= 50, "net too large")?;
        let h = dense_hessian(net, &cost, x, y);
        let top = top_eigenvalue(&h);
        if i == cases.len() - 1 {
            check(magnitude_eigenvalue(&h) > 2.0 * top.abs(), "negative case is not dominated")?;
        }
        let r = sharpness(&LossSetup::new(net, &cost, x, y), &tight()).unwrap();
        worst = worst.max(rel_err_scalar(r.value, top, 1e-12));
    }
    check(worst < 1e-4, format!("worst relative error {worst:.3e}"))?;
    Ok(format!("4 nets incl. negative-dominant, worst relative error {worst:.3e}"))
}

fn bn_decay() -> Outcome {
    let ns: Vec<usize> = (3..=10).map(|k| 1usize << k).collect();
    let sweep = bn_gap_sweep(4, &ns, 17).unwrap();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = sweep.points.iter().map(|p| p.gap.ln()).collect();
    let slope = sweep.fitted_slope;
    check((slope - lstsq_slope(&xs, &ys)).abs() < 1e-12, "slope differs from the least-squares fit")?;
    check((-1.15..=-0.85).contains(&slope), format!("slope {slope}"))?;
    let mut worst: f64 = 0.0;
    for (k, (d, n)) in [(1, 3), (2, 5), (3, 8), (4, 16), (4, 11)].into_iter().enumerate() {
        let x = gaussian_tensor(&[d, n], 500 + k as u64);
        let train_state = BnBatchState::from_batch(x.clone(), 1e-5).unwrap();
        let eval_state = BnBatchState::with_stats(x, vec![0.2; d], vec![1.7; d], 1e-5).unwrap();
        for (state, mode) in [(&train_state, BnMode::Train), (&eval_state, BnMode::Eval)] {
            let exact = bn_jacobian_dense(state, mode).unwrap().to_dense();
            let shape = state.x.shape().to_vec();
            let fd = fd_jacobian(
                |v| {
                    let s = BnBatchState { x: Tensor::new(shape.clone(), v.to_vec()).unwrap(), ..state.clone() };
                    bn_forward(&s, mode).unwrap().into_data()
                },
                state.x.data(),
                H,
            );
            worst = worst.max(rel_err(exact.as_slice(), fd.as_slice(), 1e-8));
        }
    }
    check(worst < 1e-7, format!("dense vs finite differences {worst:.3e}"))?;
    Ok(format!("slope {slope:.4}, dense vs finite differences {worst:.3e}"))
}

fn max_inequality() -> Outcome {
    for n in [1usize, 2] {
        let expected = std::f64::consts::PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0);
        let got = HProfile::new(n, 1.0).ball_const;
        check((got - expected).abs() <= 1e-12, format!("n={n}: {got} vs {expected}"))?;
    }
    let dist = Distribution::hypercube(1, 1.0).unwrap();
    let g = ColumnMap(|v: &[f64]| vec![v[0]]);
    let h = HProfile::new(1, 1.0);
    let mut parts = Vec::new();
    for (k, eps) in [0.05, 0.1, 0.2].into_iter().enumerate() {
        let opts = McOptions { reference: 100_000, trials: 1_000_000, seed: 60 + k as u64 };
        let r = max_inequality_violation_rate(&dist, &g, eps, &opts).unwrap();
        let target = 1.0 - h.eval(eps);
        let z = (r.rate - target).abs() / r.std_error;
        check(z <= 3.0, format!("eps {eps}: rate {} vs {target}, {z:.2} sigma", r.rate))?;
        parts.push(format!("eps {eps}: {z:.2}σ"));
    }
    Ok(parts.join(", "))
}

fn sample_max_coverage() -> Outcome {
    let dist = Distribution::hypercube(2, 1.0).unwrap();
    let net = LayeredNetwork::mlp(&[2, 8, 1], LayerKind::Tanh, 70).unwrap();
    let g = JacobianNormMap { net: &net, softmaxed: false };
    let r = reference_stats(&dist, &g, 100_000, 71).unwrap();
    let eps = 0.1 * r.sup;
    let mut parts = Vec::new();
    for (k, n) in [4usize, 16, 64].into_iter().enumerate() {
        let rate = sample_max_shortfall_rate(&dist, &g, n, eps, r.sup, 10_000, 72 + k as u64).unwrap();
        let bound = thm_sample_max_bound(n, eps, r.lip, &dist.profile());
        check(rate <= bound + 0.02, format!("N={n}: rate {rate} vs bound {bound}"))?;
        parts.push(format!("N={n}: {rate:.4} ≤ {bound:.4}"));
    }
    Ok(parts.join(", "))
}

fn two_point_lipschitz() -> Outcome {
    let eps = 0.05;
    let cost = CostSpec::square();
    let (x1, x2, y1, y2) = (0.25, 0.75, -1.0, 1.0);
    let x = Tensor::matrix(1, 2, vec![x1, x2]).unwrap();
    let y = Tensor::matrix(1, 2, vec![y1, y2]).unwrap();
    let mut net = LayeredNetwork::mlp(&[1, 16, 1], LayerKind::Tanh, 80).unwrap();
    let cfg = TrainConfig { momentum: 0.9, stop_loss: Some(1e-5), ..TrainConfig::gd(0.05, 20_000) };
    train(&mut net, &cost, &x, &y, &cfg).unwrap();
    let f = net.forward_batch(&x).unwrap();
    let limit = eps * eps * cost.gamma_lower();
    for (j, t) in [y1, y2].into_iter().enumerate() {
        let c = (f.data()[j] - t).powi(2);
        check(c <= limit, format!("point {j}: cost {c} above {limit}"))?;
    }
    let grid: Vec<f64> = (0..=10_000).map(|k| k as f64 * 1e-4).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = grid.windows(2).map(|w| (vec![w[0]], vec![w[1]])).collect();
    let emp = empirical_lipschitz(&net, &pairs, false).unwrap();
    let lower = curvlab::distributions::lipschitz_lower_bound(&[y1], &[y2], &[x1], &[x2], eps).unwrap();
    check(emp >= lower, format!("empirical {emp} below {lower}"))?;
    Ok(format!("empirical {emp:.4} ≥ bound {lower:.4}"))
}

/// Counts trials in which `metric` moves strictly in the given direction
/// across the sweep.
fn monotone_trials(csv: &Csv, metric: &str, decreasing: bool) -> usize {
    csv.finals_by_trial(metric)
        .values()
        .filter(|v| {
            v.windows(2)
                .all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] })
        })
        .count()
}

fn run_config(name: &str) -> Csv {
    let cfg = load_config(name);
    let (_, text) = render(&cfg, 0).unwrap();
    Csv::parse(&text)
}

fn label_smoothing() -> Outcome {
    let csv = run_config("label_smoothing.json");
    let jac = monotone_trials(&csv, "jacobian_max", true);
    let sharp = monotone_trials(&csv, "sharpness", true);
    check(jac >= 4 && sharp >= 4, format!("jacobian {jac}/5, sharpness {sharp}/5"))?;
    Ok(format!("jacobian decreasing {jac}/5, sharpness decreasing {sharp}/5"))
}

fn input_scaling() -> Outcome {
    let csv = run_config("input_scaling.json");
    let jac = monotone_trials(&csv, "jacobian_max", true);
    let feat = monotone_trials(&csv, "feature_norm_1", false);
    check(jac >= 4 && feat >= 4, format!("jacobian {jac}/5, feature norm {feat}/5"))?;
    Ok(format!("jacobian decreasing {jac}/5, feature norm increasing {feat}/5"))
}

fn regression_frequency() -> Outcome {
    let csv = run_config("regression_frequency.json");
    let cell = |act: &str, init: &str, metric: &str| -> Vec<f64> {
        csv.rows_of("final")
            .filter(|r| csv.text(r, "activation") == act && csv.text(r, "init") == init)
            .map(|r| csv.float(r, metric))
            .collect()
    };
    let mut parts = Vec::new();
    for act in ["gaussian", "relu"] {
        let (hi, lo) = (cell(act, "high", "jacobian_max"), cell(act, "low", "jacobian_max"));
        check(hi.len() == 10 && lo.len() == 10, format!("{act}: {} and {} trials", hi.len(), lo.len()))?;
        let (hj, lj) = (mean(&hi), mean(&lo));
        check(lj < hj, format!("{act}: low jacobian {lj} not below high {hj}"))?;
        let (hw, lw) = (mean(&cell(act, "high", "first_layer_norm")), mean(&cell(act, "low", "first_layer_norm")));
        let gap = (hw - lw).abs() / hw.max(lw);
        if act == "gaussian" {
            check(lw < hw && gap > 0.1, format!("gaussian weight norm gap {gap:.3} ({hw} vs {lw})"))?;
        } else {
            check(gap <= 0.1, format!("relu weight norm gap {gap:.3} ({hw} vs {lw})"))?;
        }
        parts.push(format!("{act}: jacobian {hj:.3} > {lj:.3}, weight-norm gap {:.1}%", 100.0 * gap));
    }
    Ok(parts.join("; "))
}

fn bound_evaluators() -> Outcome {
    let csv = run_config("bound_eval.json");
    let rows: Vec<&Vec<String>> = csv.rows_of("bound").collect();
    let mut pairs = 0;
    for a in &rows {
        for b in &rows {
            let same = csv.text(a, "eps") == csv.text(b, "eps") && csv.text(a, "delta") == csv.text(b, "delta");
            if same && csv.float(b, "N") == 2.0 * csv.float(a, "N") {
                let (p, p2) = (csv.float(a, "sample_max_bound"), csv.float(b, "sample_max_bound"));
                check((p2 - p * p).abs() <= 1e-12, format!("p(2N) {p2} vs p(N)² {}", p * p))?;
                pairs += 1;
            }
        }
    }
    check(pairs > 0, "no doubling pairs in the grid")?;

    let h = HProfile::new(1, 1.0);
    let base = GeneralisationInputs {
        n_samples: 10_000,
        eps: 0.1,
        delta: 0.5,
        max_jac: 1.0,
        jac_lip: 1.0,
        concentration_c: 1.0,
        cost_lip: 1.0,
    };
    // (1 − h(δ/L))ᴺ with h(t) = t, and the tail 2exp(−N C ε²/(‖c‖_Lip (M + δ)²))
    let hand = |n: f64, eps: f64, delta: f64, m: f64, lip: f64, c: f64, cl: f64| {
        1.0 - (1.0 - delta / lip).powf(n) - 2.0 * (-n * c / cl * eps * eps / ((m + delta) * (m + delta))).exp()
    };
    let tuples = [
        (base, 1.0 - 0.5f64.powf(1e4) - 2.0 * (-1e4 * 0.01 / 2.25f64).exp()),
        (
            GeneralisationInputs { n_samples: 500, eps: 0.3, delta: 0.2, max_jac: 2.0, jac_lip: 4.0, ..base },
            hand(500.0, 0.3, 0.2, 2.0, 4.0, 1.0, 1.0),
        ),
        (
            GeneralisationInputs {
                n_samples: 2000,
                eps: 0.25,
                delta: 0.1,
                max_jac: 0.5,
                jac_lip: 0.5,
                concentration_c: 2.0,
                cost_lip: 3.0,
            },
            hand(2000.0, 0.25, 0.1, 0.5, 0.5, 2.0, 3.0),
        ),
    ];
    for (inputs, expected) in &tuples {
        let got = generalisation_bound(inputs, &h);
        check((got - expected).abs() <= 1e-10, format!("{inputs:?}: {got} vs {expected}"))?;
    }
    Ok(format!("{pairs} doubling pairs exact, 3 hand values within 1e-10"))
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_curvlab");
    let runs = [
        ("sweep-smoothing", "label_smoothing.json"),
        ("sweep-scaling", "input_scaling.json"),
        ("regression-freq", "regression_frequency.json"),
        ("sweep-wd", "weight_decay.json"),
        ("bn-check", "bn_check.json"),
        ("bound-eval", "bound_eval.json"),
        ("maxineq-check", "maxineq_check.json"),
    ];
    for (sub, name) in runs {
        let cfg = load_config(name);
        let small = shrink(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        std::fs::write(&cfg_path, serde_json::to_string(&small).unwrap()).unwrap();
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "2"].into_iter().enumerate() {
            let out = dir.path().join(format!("out{k}"));
            let status = std::process::Command::new(exe)
                .args([sub, "--config"])
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .args(["--seed", "5", "--threads", threads])
                .output()
                .unwrap();
            check(status.status.success(), format!("{sub}: {}", String::from_utf8_lossy(&status.stderr)))?;
            outputs.push(std::fs::read(out.join(small.output_name())).unwrap());
        }
        check(outputs[0] == outputs[1], format!("{sub}: outputs differ"))?;
    }
    Ok("7 subcommands byte-identical across reruns".into())
}

/// A reduced copy of a shipped config, small enough to run twice per
/// subcommand.
fn shrink(cfg: &curvlab_harness::ExperimentConfig) -> curvlab_harness::ExperimentConfig {
    let mut c = cfg.clone();
    c.trials = c.trials.min(2);
    if let Some(t) = &mut c.train {
        t.max_steps = t.max_steps.min(30);
        t.log_every = 10;
    }
    if let Some(r) = &mut c.regression {
        r.gaussian_steps = 200;
        r.relu_steps = 200;
        r.pretrain_max_steps = 200;
    }
    if let Some(m) = &mut c.mc {
        m.reference = 2000;
        m.trials = 20_000;
    }
    if let Some(b) = &mut c.bound {
        b.reference = 200;
    }
    if c.experiment == curvlab_harness::ExperimentKind::BnCheck {
        c.sweep.truncate(4);
    }
    c
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 13] = [
        ("autodiff oracle suite", autodiff_oracles, Duration::from_secs(60)),
        ("hessian decomposition", hessian_decomposition, Duration::from_secs(60)),
        ("gauss-newton isospectrality", isospectrality, Duration::from_secs(120)),
        ("sharpness oracle", sharpness_oracle, Duration::from_secs(120)),
        ("batch-norm gap decay", bn_decay, Duration::from_secs(60)),
        ("lipschitz maximum inequality", max_inequality, Duration::from_secs(120)),
        ("sample maximum coverage", sample_max_coverage, Duration::from_secs(600)),
        ("two-point lipschitz bound", two_point_lipschitz, Duration::from_secs(60)),
        ("label-smoothing ordering", label_smoothing, Duration::from_secs(600)),
        ("input-scaling dissociation", input_scaling, Duration::from_secs(600)),
        ("regression-frequency direction", regression_frequency, Duration::from_secs(900)),
        ("bound evaluators", bound_evaluators, Duration::from_secs(1)),
        ("cli determinism", determinism, Duration::from_secs(600)),
    ];
    // CURVLAB_CRITERIA=1,5,12 runs a subset
    let only: Option<Vec<usize>> = std::env::var("CURVLAB_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (k, (name, run, budget)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; over budget ({took:.1?} > {budget:?})")),
            r => r,
        };
        match &result {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({took:.1?}): {detail}", k + 1),
            Err(detail) => {
                println!("criterion {:>2} FAIL {name} ({took:.1?}): {detail}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
