//! Coordinate regression from high- and low-frequency initialisations.

use curvlab::rng::derive_seed;
use curvlab::spectral::{jacobian_norms, sharpness, singular_norm, LinearOperator, LossSetup, PowerOptions};
use curvlab::cost::loss_and_grad;
use curvlab::trainer::{train, TrainConfig};
use curvlab::{CostSpec, LayerKind, LayeredNetwork, Tensor};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, RegressionSpec};
use crate::dataset::SyntheticDataset;
use crate::error::{bad, HarnessError, Result};
use crate::table::{mean_std, Cell, Table};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    High,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct CellSpec {
    activation: LayerKind,
    init: Init,
    /// Pretraining frequency of a high-frequency ReLU cell.
    frequency: Option<f64>,
}

struct Outcome {
    loss: f64,
    jacobian_max: f64,
    sharpness: f64,
    first_layer_norm: f64,
    pretrain_steps: Option<usize>,
    pretrain_loss: Option<f64>,
}

fn activation_name(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Gaussian => "gaussian",
        LayerKind::Relu => "relu",
        LayerKind::Tanh => "tanh",
        _ => "smooth-leaky-relu",
    }
}

fn cells(spec: &RegressionSpec, freqs: &[f64]) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for &activation in &spec.activations {
        match activation {
            LayerKind::Relu => {
                for &f in freqs {
                    out.push(CellSpec { activation, init: Init::High, frequency: Some(f) });
                }
            }
            _ => out.push(CellSpec { activation, init: Init::High, frequency: None }),
        }
        out.push(CellSpec { activation, init: Init::Low, frequency: None });
    }
    out
}

fn scale_first_layer(net: &mut LayeredNetwork, c: f64) -> Result<()> {
    let r = net.param_range(0);
    let mut p = net.params().clone();
    for v in &mut p.data_mut()[r] {
        *v *= c;
    }
    net.set_params(p)?;
    Ok(())
}

/// Largest singular value of the first weight matrix.
pub fn first_layer_norm(net: &LayeredNetwork) -> Result<f64> {
    let w = net.weight(0)?;
    let op = LinearOperator::from_dense(w.rows(), w.cols(), w.into_data())?;
    let opts = PowerOptions { tol: 1e-12, max_iter: 10_000, seed: 0 };
    Ok(singular_norm(&op, &opts)?.value)
}

/// Adam until the loss reaches `pretrain_loss`; returns the step count and
/// the last loss seen.
fn adam_fit(
    net: &mut LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    spec: &RegressionSpec,
) -> Result<(usize, f64)> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let n = net.params().len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut loss = f64::NAN;
    for step in 0..spec.pretrain_max_steps {
        let (l, g) = loss_and_grad(net, cost, x, y)?;
        loss = l;
        if !l.is_finite() {
            return bad(format!("pretraining diverged at step {step}"));
        }
        if l <= spec.pretrain_loss {
            return Ok((step, l));
        }
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - B1.powi(t), 1.0 - B2.powi(t));
        let mut p = net.params().clone();
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = B1 * m[i] + (1.0 - B1) * gi;
            v[i] = B2 * v[i] + (1.0 - B2) * gi * gi;
            *w -= spec.pretrain_learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
        net.set_params(p)?;
    }
    Ok((spec.pretrain_max_steps, loss))
}

fn run_cell(
    spec: &RegressionSpec,
    cell: CellSpec,
    ds: &SyntheticDataset,
    trial_seed: u64,
) -> Result<Outcome> {
    let w = spec.width;
    let mut net = LayeredNetwork::mlp(&[1, w, w, w, 1], cell.activation, trial_seed)?;
    let cost = CostSpec::square();
    let (mut pre_steps, mut pre_loss) = (None, None);
    match (cell.activation, cell.init) {
        (LayerKind::Relu, Init::High) => {
            let f = cell.frequency.expect("high-frequency ReLU cells carry a frequency");
            let p = spec.pretrain_points;
            let px = Tensor::matrix(1, p, (0..p).map(|i| (i as f64 + 0.5) / p as f64).collect())?;
            let py = px.map(|x| (f * std::f64::consts::PI * x).sin());
            let (steps, loss) = adam_fit(&mut net, &cost, &px, &py, spec)?;
            pre_steps = Some(steps);
            pre_loss = Some(loss);
        }
        (LayerKind::Relu, Init::Low) => {}
        (_, Init::High) => scale_first_layer(&mut net, spec.gaussian_high_scale)?,
        (_, Init::Low) => scale_first_layer(&mut net, spec.gaussian_low_scale)?,
    }
    let (steps, lr) = if cell.activation == LayerKind::Relu {
        (spec.relu_steps, spec.learning_rate)
    } else {
        (spec.gaussian_steps, spec.gaussian_learning_rate.unwrap_or(spec.learning_rate))
    };
    let cfg = TrainConfig {
        momentum: spec.momentum,
        log_every: steps.max(1),
        ..TrainConfig::gd(lr, steps)
    };
    let trace = train(&mut net, &cost, &ds.x, &ds.y, &cfg)?;
    let opts = PowerOptions::default();
    Ok(Outcome {
        loss: trace.last().loss,
        jacobian_max: jacobian_norms(&net, &ds.x, false, &opts)?.max,
        sharpness: sharpness(&LossSetup::new(&net, &cost, &ds.x, &ds.y), &opts)?.value,
        first_layer_norm: first_layer_norm(&net)?,
        pretrain_steps: pre_steps,
        pretrain_loss: pre_loss,
    })
}

const METRICS: [&str; 4] = ["loss", "jacobian_max", "sharpness", "first_layer_norm"];

/// Rows `final` per (cell, trial), `failed` for diverged runs and `summary`
/// (mean and sample std per cell).
pub fn run_regression_frequency(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let spec = cfg.regression.clone().unwrap_or_default();
    let ds = SyntheticDataset::generate(cfg.dataset()?)?;
    if ds.classes != 0 || ds.x.rows() != 1 {
        return bad("regression-frequency needs 1-D regression points");
    }
    if spec.width == 0 || spec.activations.is_empty() {
        return bad("regression needs a positive width and at least one activation");
    }
    let cells = cells(&spec, &cfg.sweep);
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<std::result::Result<Outcome, (usize, f64)>> = tasks
        .par_iter()
        .map(|&(c, t)| match run_cell(&spec, cells[c], &ds, derive_seed(seed, t as u64)) {
            Ok(o) => Ok(Ok(o)),
            Err(HarnessError::Core(curvlab::Error::Diverged { step, loss })) => Ok(Err((step, loss))),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut header = vec!["row_type", "activation", "init", "frequency", "trial"];
    header.extend(METRICS);
    header.extend(["pretrain_steps", "pretrain_loss", "diverged_at", "stat"]);
    let mut table = Table::new(header);
    for (c, cell) in cells.iter().enumerate() {
        let lead = |kind: &str, trial: Cell| {
            vec![
                Cell::text(kind),
                Cell::text(activation_name(cell.activation)),
                Cell::text(if cell.init == Init::High { "high" } else { "low" }),
                cell.frequency.into(),
                trial,
            ]
        };
        let mut finals: Vec<[f64; 4]> = Vec::new();
        for t in 0..cfg.trials {
            let mut row = lead("", t.into());
            match &results[c * cfg.trials + t] {
                Ok(o) => {
                    row[0] = Cell::text("final");
                    let m = [o.loss, o.jacobian_max, o.sharpness, o.first_layer_norm];
                    row.extend(m.iter().map(|&v| Cell::Float(v)));
                    row.push(o.pretrain_steps.map_or(Cell::Empty, Cell::from));
                    row.push(o.pretrain_loss.into());
                    row.push(Cell::Empty);
                    finals.push(m);
                }
                Err((step, loss)) => {
                    row[0] = Cell::text("failed");
                    row.push(Cell::Float(*loss));
                    row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty]);
                    row.push((*step).into());
                }
            }
            row.push(Cell::Empty);
            table.push(row);
        }
        if finals.is_empty() {
            continue;
        }
        for (stat, pick) in [("mean", 0), ("std", 1)] {
            let mut row = lead("summary", Cell::Empty);
            for m in 0..METRICS.len() {
                let xs: Vec<f64> = finals.iter().map(|f| f[m]).collect();
                let ms = mean_std(&xs);
                row.push(Cell::Float(if pick == 0 { ms.0 } else { ms.1 }));
            }
            row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::text(stat)]);
            table.push(row);
        }
    }
    Ok(table)
}
