//! Training sweeps on the synthetic classification task.

use curvlab::cost::loss;
use curvlab::rng::derive_seed;
use curvlab::trainer::{train, TrainConfig};
use curvlab::{CostKind, CostSpec, LayeredNetwork};
use rayon::prelude::*;

use super::{catch_divergence, trace_table, RunOutcome, TaskResult};
use crate::config::ExperimentConfig;
use crate::dataset::SyntheticDataset;
use crate::error::{bad, Result};
use crate::table::Table;

fn task_grid<F>(values: &[f64], trials: usize, f: F) -> Result<Vec<Vec<TaskResult>>>
where
    F: Fn(f64, usize) -> Result<RunOutcome> + Sync,
{
    let tasks: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..trials).map(move |t| (v, t)))
        .collect();
    let flat: Vec<TaskResult> = tasks
        .par_iter()
        .map(|&(v, t)| catch_divergence(f(values[v], t)))
        .collect::<Result<_>>()?;
    let mut it = flat.into_iter();
    Ok((0..values.len())
        .map(|_| it.by_ref().take(trials).collect())
        .collect())
}

/// The trial's network and train config: the initialisation and probe depend
/// on the trial only, so runs at different sweep values are paired.
fn trial_setup(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    seed: u64,
    trial: usize,
) -> Result<(LayeredNetwork, TrainConfig)> {
    let trial_seed = derive_seed(seed, trial as u64);
    let net = cfg.network()?.build(ds.x.rows(), ds.classes, trial_seed)?;
    let mut train_cfg = cfg.train()?.clone();
    train_cfg.seed = trial_seed;
    train_cfg.metrics.sharpness = true;
    train_cfg.metrics.jacobian_max = true;
    Ok((net, train_cfg))
}

fn classification(cfg: &ExperimentConfig) -> Result<SyntheticDataset> {
    let ds = SyntheticDataset::generate(cfg.dataset()?)?;
    if ds.classes == 0 {
        return bad("this experiment needs a classification dataset");
    }
    Ok(ds)
}

/// With `train.stop_accuracy` set, the run at the first sweep value (the
/// unsmoothed one by convention) trains to that accuracy, and its step count
/// becomes the horizon for the other values of the same trial.
pub fn run_label_smoothing_sweep(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let ds = classification(cfg)?;
    let base = cfg.cost()?;
    if base.kind != CostKind::CrossEntropy || !base.subtract_label_entropy {
        return bad("label smoothing sweep needs cross-entropy with label entropy subtracted");
    }
    if cfg.sweep.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return bad("label smoothing values must lie in [0, 1]");
    }
    let run = |alpha: f64, trial: usize, horizon: Option<usize>| -> Result<RunOutcome> {
        let (mut net, mut train_cfg) = trial_setup(cfg, &ds, seed, trial)?;
        if let Some(h) = horizon {
            train_cfg.max_steps = h;
            train_cfg.stop_accuracy = None;
        }
        let cost = CostSpec {
            label_smoothing: alpha,
            ..base
        };
        let y = ds.smoothed(alpha)?;
        let trace = train(&mut net, &cost, &ds.x, &y, &train_cfg)?;
        Ok(RunOutcome { trace, extras: vec![] })
    };
    let outcomes = if cfg.train()?.stop_accuracy.is_none() {
        task_grid(&cfg.sweep, cfg.trials, |alpha, trial| run(alpha, trial, None))?
    } else {
        let per_trial: Vec<Vec<TaskResult>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let first = catch_divergence(run(cfg.sweep[0], trial, None))?;
                let horizon = match &first {
                    Ok(o) => o.trace.steps,
                    Err((step, _)) => *step,
                };
                let rest: Vec<TaskResult> = cfg.sweep[1..]
                    .par_iter()
                    .map(|&alpha| catch_divergence(run(alpha, trial, Some(horizon))))
                    .collect::<Result<_>>()?;
                Ok(std::iter::once(first).chain(rest).collect())
            })
            .collect::<Result<_>>()?;
        (0..cfg.sweep.len())
            .map(|v| per_trial.iter().map(|t| clone_result(&t[v])).collect())
            .collect()
    };
    Ok(trace_table("alpha", &cfg.sweep, &outcomes, 0, &[]))
}

fn clone_result(r: &TaskResult) -> TaskResult {
    match r {
        Ok(o) => Ok(RunOutcome {
            trace: o.trace.clone(),
            extras: o.extras.clone(),
        }),
        Err(e) => Err(*e),
    }
}

pub fn run_input_scaling_sweep(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let ds = classification(cfg)?;
    let net_spec = cfg.network()?;
    if net_spec.batch_norm.is_some() {
        return bad("input scaling sweep needs a network without batch norm");
    }
    if cfg.sweep.iter().any(|&s| s <= 0.0) {
        return bad("input scales must be positive");
    }
    let cost = cfg.cost()?;
    let y = ds.smoothed(cost.label_smoothing)?;
    let n_features = net_spec.hidden.len();
    let outcomes = task_grid(&cfg.sweep, cfg.trials, |s, trial| {
        let (mut net, mut train_cfg) = trial_setup(cfg, &ds, seed, trial)?;
        train_cfg.metrics.feature_norms = true;
        let trace = train(&mut net, &cost, &ds.x.scaled(s), &y, &train_cfg)?;
        Ok(RunOutcome { trace, extras: vec![] })
    })?;
    Ok(trace_table("scale", &cfg.sweep, &outcomes, n_features, &[]))
}

fn frobenius(net: &LayeredNetwork) -> Result<Vec<f64>> {
    net.linear_layers()
        .into_iter()
        .map(|l| Ok(net.weight(l)?.norm()))
        .collect()
}

pub fn run_weight_decay_sweep(cfg: &ExperimentConfig, seed: u64) -> Result<Table> {
    let ds = classification(cfg)?;
    if ds.holdout_x.cols() == 0 {
        return bad("weight decay sweep needs a held-out split");
    }
    let cost = cfg.cost()?;
    if cost.kind != CostKind::CrossEntropy {
        return bad("weight decay sweep uses cross-entropy");
    }
    if cfg.sweep.iter().any(|&w| w < 0.0) {
        return bad("weight decay must be non-negative");
    }
    let y = ds.smoothed(cost.label_smoothing)?;
    let held_y = ds.holdout_smoothed(cost.label_smoothing)?;
    let n_linear = cfg.network()?.hidden.len() + 1;
    let outcomes = task_grid(&cfg.sweep, cfg.trials, |wd, trial| {
        let (mut net, mut train_cfg) = trial_setup(cfg, &ds, seed, trial)?;
        train_cfg.weight_decay = wd;
        let trace = train(&mut net, &cost, &ds.x, &y, &train_cfg)?;
        let train_loss = trace.last().loss;
        let held = loss(&net, &cost, &ds.holdout_x, &held_y)?;
        let mut extras = vec![held, held - train_loss];
        let fro = frobenius(&net)?;
        let total = fro.iter().map(|f| f * f).sum::<f64>().sqrt();
        extras.extend(fro);
        extras.push(total);
        Ok(RunOutcome { trace, extras })
    })?;
    let mut names = vec!["heldout_loss".to_string(), "generalisation_gap".to_string()];
    names.extend((1..=n_linear).map(|k| format!("frobenius_{k}")));
    names.push("frobenius_total".into());
    Ok(trace_table("weight_decay", &cfg.sweep, &outcomes, 0, &names))
}
