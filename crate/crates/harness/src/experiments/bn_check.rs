//! Train/eval batch-norm Jacobian gap sweep and a cross-module check.

use curvlab::bn::{bn_gap_sweep, bn_jacobian_dense, BnBatchState};
use curvlab::rng::{derive_seed, seeded, uniform_vec};
use curvlab::spectral::dense_input_jacobians;
use curvlab::{BnMode, Layer, LayeredNetwork, Tensor};

use crate::config::ExperimentConfig;
use crate::error::{bad, Result};
use crate::table::{Cell, Table};

/// Max-abs difference between the eval-mode Jacobian assembled from the
/// network's per-column input Jacobians and the dense batch-norm path.
pub fn eval_jacobian_crosscheck(d: usize, n: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut layer = Layer::batch_norm(d, BnMode::Eval);
    layer.running_mean = uniform_vec(&mut rng, d, -1.0, 1.0);
    layer.running_var = uniform_vec(&mut rng, d, 0.2, 2.0);
    let x = Tensor::new(vec![d, n], uniform_vec(&mut rng, d * n, -1.0, 1.0))?;
    let state = BnBatchState::with_stats(x.clone(), layer.running_mean.clone(), layer.running_var.clone(), layer.bn_eps)?;
    let net = LayeredNetwork::new(vec![layer])?;
    let per_column = dense_input_jacobians(&net, &x, false)?;
    let dense = bn_jacobian_dense(&state, BnMode::Eval)?.to_dense();
    let mut diff: f64 = 0.0;
    for r in 0..d * n {
        for c in 0..d * n {
            let (i, j, k, l) = (r / n, r % n, c / n, c % n);
            let via_net = if j == l { per_column[j][(i, k)] } else { 0.0 };
            diff = diff.max((via_net - dense[(r, c)]).abs());
        }
    }
    Ok(diff)
}

/// Rows `point` (one per N, the fitted slope on the last) and one
/// `crosscheck` row.
pub fn run_bn_check(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let spec = cfg.bn.clone().unwrap_or_default();
    let ns: Vec<usize> = cfg.sweep.iter().map(|&v| v as usize).collect();
    if cfg.sweep.iter().zip(&ns).any(|(&v, &n)| n as f64 != v || n < 2) {
        return bad("bn-check sweep values must be integers ≥ 2");
    }
    let sweep = bn_gap_sweep(spec.d, &ns, seed)?;
    let mut t = Table::new(["row_type", "N", "gap", "spectral_gap", "slope", "crosscheck_diff"]);
    for (k, p) in sweep.points.iter().enumerate() {
        let slope = if k + 1 == sweep.points.len() {
            Cell::Float(sweep.fitted_slope)
        } else {
            Cell::Empty
        };
        t.push(vec![Cell::text("point"), p.n.into(), p.gap.into(), p.spectral_gap.into(), slope, Cell::Empty]);
    }
    let diff = eval_jacobian_crosscheck(spec.d, spec.crosscheck_n, derive_seed(seed, u64::MAX))?;
    t.push(vec![
        Cell::text("crosscheck"),
        spec.crosscheck_n.into(),
        Cell::Empty,
        Cell::Empty,
        Cell::Empty,
        diff.into(),
    ]);
    Ok(t)
}
