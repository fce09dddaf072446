//! One function per experiment kind. Each is a pure function of the config
//! and seed and returns the table that becomes the CSV.

mod bn_check;
mod bound_eval;
mod maxineq;
mod regression;
mod sweeps;

pub use bn_check::run_bn_check;
pub use bound_eval::run_bound_eval;
pub use maxineq::run_max_ineq_check;
pub use regression::run_regression_frequency;
pub use sweeps::{run_input_scaling_sweep, run_label_smoothing_sweep, run_weight_decay_sweep};

use curvlab::trainer::{TrainRecord, TrainTrace};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::table::{mean_std, Cell, Table};

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::LabelSmoothingSweep => run_label_smoothing_sweep(cfg, seed),
        ExperimentKind::InputScalingSweep => run_input_scaling_sweep(cfg, seed),
        ExperimentKind::RegressionFrequency => run_regression_frequency(cfg, seed),
        ExperimentKind::WeightDecaySweep => run_weight_decay_sweep(cfg, seed),
        ExperimentKind::BnCheck => run_bn_check(cfg, seed),
        ExperimentKind::BoundEval => run_bound_eval(cfg, seed),
        ExperimentKind::MaxIneqCheck => run_max_ineq_check(cfg, seed),
    }
}

/// A finished training run plus per-experiment final quantities.
pub(crate) struct RunOutcome {
    pub trace: TrainTrace,
    pub extras: Vec<f64>,
}

/// Failed runs carry the step and loss at which training diverged.
pub(crate) type TaskResult = std::result::Result<RunOutcome, (usize, f64)>;

/// Maps divergence to a recorded failure and propagates any other error.
pub(crate) fn catch_divergence(r: Result<RunOutcome>) -> Result<TaskResult> {
    match r {
        Ok(o) => Ok(Ok(o)),
        Err(crate::HarnessError::Core(curvlab::Error::Diverged { step, loss })) => Ok(Err((step, loss))),
        Err(e) => Err(e),
    }
}

fn metric_cells(r: &TrainRecord, n_features: usize) -> Vec<Cell> {
    let mut cells = vec![r.loss.into(), r.sharpness.into(), r.jacobian_max.into(), r.gn_norm.into()];
    for k in 0..n_features {
        cells.push(r.feature_norms.as_ref().and_then(|f| f.get(k).copied()).into());
    }
    cells
}

fn as_f64(c: &Cell) -> Option<f64> {
    match c {
        Cell::Float(v) => Some(*v),
        _ => None,
    }
}

/// Rows `step` (every logged record), `final` (last record plus extras),
/// `failed` (diverged runs) and `summary` (mean and sample std across trials
/// of the final values, and of each trace metric's peak, per sweep value).
pub(crate) fn trace_table(
    param: &str,
    values: &[f64],
    outcomes: &[Vec<TaskResult>],
    n_features: usize,
    extras: &[String],
) -> Table {
    let mut header: Vec<String> = ["row_type", param, "trial", "step", "loss", "sharpness", "jacobian_max", "gn_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n_features).map(|k| format!("feature_norm_{k}")));
    header.extend(extras.iter().cloned());
    header.push("stat".into());
    let width = header.len();
    let metrics = 4 + n_features;
    let mut t = Table::new(header);
    for (v, per_trial) in values.iter().zip(outcomes) {
        let mut finals: Vec<Vec<Cell>> = Vec::new();
        let mut peaks: Vec<Vec<Cell>> = Vec::new();
        for (trial, res) in per_trial.iter().enumerate() {
            let lead = |kind: &str, step: Cell| vec![Cell::text(kind), Cell::Float(*v), trial.into(), step];
            match res {
                Ok(o) => {
                    for r in &o.trace.records {
                        let mut row = lead("step", r.step.into());
                        row.extend(metric_cells(r, n_features));
                        row.resize(width, Cell::Empty);
                        t.push(row);
                    }
                    let last = o.trace.last();
                    let mut body = metric_cells(last, n_features);
                    body.extend(o.extras.iter().map(|&x| Cell::Float(x)));
                    let mut row = lead("final", last.step.into());
                    row.extend(body.iter().cloned());
                    row.push(Cell::Empty);
                    t.push(row);
                    finals.push(body);
                    let peak: Vec<Cell> = (0..metrics)
                        .map(|m| {
                            let vals: Vec<f64> = o
                                .trace
                                .records
                                .iter()
                                .filter_map(|r| as_f64(&metric_cells(r, n_features)[m]))
                                .collect();
                            if vals.is_empty() {
                                Cell::Empty
                            } else {
                                Cell::Float(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                            }
                        })
                        .collect();
                    peaks.push(peak);
                }
                Err((step, loss)) => {
                    let mut row = lead("failed", (*step).into());
                    row.push(Cell::Float(*loss));
                    row.resize(width, Cell::Empty);
                    t.push(row);
                }
            }
        }
        if finals.is_empty() {
            continue;
        }
        for (stat, source) in [("final", &finals), ("peak", &peaks)] {
            let cols = source[0].len();
            let column = |c: usize| -> Vec<f64> { source.iter().filter_map(|r| as_f64(&r[c])).collect() };
            for (suffix, pick) in [("mean", 0usize), ("std", 1)] {
                let mut row = vec![Cell::text("summary"), Cell::Float(*v), Cell::Empty, Cell::Empty];
                for c in 0..cols {
                    let xs = column(c);
                    row.push(if xs.len() == source.len() {
                        let ms = mean_std(&xs);
                        Cell::Float(if pick == 0 { ms.0 } else { ms.1 })
                    } else {
                        Cell::Empty
                    });
                }
                row.resize(width - 1, Cell::Empty);
                row.push(Cell::text(format!("{stat}_{suffix}")));
                t.push(row);
            }
        }
    }
    t
}
