//! Gradient descent with heavy-ball momentum and coupled weight decay,
//! full-batch (optionally averaged over ghost batches) or minibatch, with
//! curvature metrics logged along the way.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cost::{loss, loss_and_grad, CostSpec};
use crate::error::{Error, Result};
use crate::network::LayeredNetwork;
use crate::rng::{derive_seed, seeded};
use crate::spectral::{
    feature_norms, gauss_newton_norm, jacobian_norms, sharpness, GnMode, LossSetup, PowerOptions,
};
use crate::tensor::Tensor;

/// Loss growth factor over the initial loss treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Logged losses averaged by the stopping rule.
pub const STOP_WINDOW: usize = 10;

/// `"full"` or a minibatch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    #[default]
    #[serde(with = "full_tag")]
    Full,
    Mini(usize),
}

mod full_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("full")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "full" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected \"full\" or an integer, got {s:?}")))
        }
    }
}

/// Which metrics to log and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSchedule {
    pub sharpness: bool,
    pub jacobian_max: bool,
    pub gn_norm: bool,
    pub feature_norms: bool,
    /// Jacobian of the softmaxed model; defaults to true for cross-entropy.
    pub softmaxed: Option<bool>,
    /// Size of the fixed seeded probe subset the metrics are computed on.
    pub probe: usize,
    pub power: PowerOptions,
}

impl Default for MetricSchedule {
    fn default() -> Self {
        MetricSchedule {
            sharpness: false,
            jacobian_max: false,
            gn_norm: false,
            feature_norms: false,
            softmaxed: None,
            probe: 128,
            power: PowerOptions::default(),
        }
    }
}

impl MetricSchedule {
    pub fn all() -> Self {
        MetricSchedule {
            sharpness: true,
            jacobian_max: true,
            gn_norm: true,
            feature_norms: true,
            ..Default::default()
        }
    }

    fn any(&self) -> bool {
        self.sharpness || self.jacobian_max || self.gn_norm || self.feature_norms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default = "one")]
    pub ghost_batches: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub stop_loss: Option<f64>,
    /// Stop once the full-data accuracy (argmax of output against argmax of
    /// target) reaches this fraction; checked before every step.
    #[serde(default)]
    pub stop_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Record cadence in steps; the final step is always recorded.
    #[serde(default = "ten")]
    pub log_every: usize,
    #[serde(default)]
    pub metrics: MetricSchedule,
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

impl TrainConfig {
    pub fn gd(learning_rate: f64, max_steps: usize) -> Self {
        TrainConfig {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: BatchSize::Full,
            ghost_batches: 1,
            max_steps,
            stop_loss: None,
            stop_accuracy: None,
            seed: 0,
            log_every: 10,
            metrics: MetricSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if self.ghost_batches == 0 {
            return bad("ghost_batches must be at least 1");
        }
        if self.ghost_batches > 1 && self.batch_size != BatchSize::Full {
            return bad("ghost batches require full-batch mode");
        }
        if self.batch_size == BatchSize::Mini(0) {
            return bad("batch size must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        if self.stop_accuracy.is_some_and(|a| !(a > 0.0 && a <= 1.0)) {
            return bad("stop_accuracy must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Heavy-ball velocity buffer.
#[derive(Clone, Debug, Default)]
pub struct Optimizer {
    velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `g ← g + wd·θ; v ← μv + g; θ ← θ − lr·v`.
    pub fn apply(&mut self, net: &mut LayeredNetwork, grad: &Tensor, cfg: &TrainConfig) -> Result<()> {
        grad.ensure_finite("gradient")?;
        let theta = net.params().data();
        if self.velocity.len() != theta.len() {
            self.velocity = vec![0.0; theta.len()];
        }
        let mut next = theta.to_vec();
        for ((t, v), &g) in next.iter_mut().zip(&mut self.velocity).zip(grad.data()) {
            let g = g + cfg.weight_decay * *t;
            *v = cfg.momentum * *v + g;
            *t -= cfg.learning_rate * *v;
        }
        net.set_params(Tensor::vector(next))
    }
}

/// One update on the batch `(x, y)`; returns the loss before the step.
pub fn sgd_step(
    net: &mut LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    let (l, g) = loss_and_grad(net, cost, x, y)?;
    if !l.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    opt.apply(net, &g, cfg)?;
    Ok(l)
}

/// Contiguous column ranges of `n` split into `k` chunks of size `⌈n/k⌉`,
/// the last one possibly shorter.
pub fn ghost_ranges(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let size = n.div_ceil(k.max(1)).max(1);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Loss and gradient averaged over ghost batches, each weighted by its size
/// (so the result equals the full-batch one whenever columns do not interact).
pub fn ghosted_loss_and_grad(
    net: &LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    ghost_batches: usize,
) -> Result<(f64, Tensor)> {
    let n = x.cols();
    if ghost_batches <= 1 {
        return loss_and_grad(net, cost, x, y);
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; net.param_count()];
    for r in ghost_ranges(n, ghost_batches) {
        let idx: Vec<usize> = r.collect();
        let w = idx.len() as f64 / n as f64;
        let (l, g) = loss_and_grad(net, cost, &x.select_columns(&idx), &y.select_columns(&idx))?;
        total += w * l;
        for (a, b) in grad.iter_mut().zip(g.data()) {
            *a += w * b;
        }
    }
    Ok((total, Tensor::vector(grad)))
}

/// Full-batch step with the gradient averaged over `cfg.ghost_batches`.
pub fn full_batch_step_ghosted(
    net: &mut LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    let (l, g) = ghosted_loss_and_grad(net, cost, x, y, cfg.ghost_batches)?;
    if !l.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    opt.apply(net, &g, cfg)?;
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub sharpness: Option<f64>,
    pub jacobian_max: Option<f64>,
    pub gn_norm: Option<f64>,
    pub feature_norms: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    StopLoss,
    StopAccuracy,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    pub stop: StopReason,
    /// Number of updates performed.
    pub steps: usize,
}

impl TrainTrace {
    pub fn last(&self) -> &TrainRecord {
        self.records.last().expect("a trace has at least one record")
    }

    /// Column names, in order, for the metrics that were recorded.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "loss".to_string()];
        let r = &self.records[0];
        if r.sharpness.is_some() {
            h.push("sharpness".into());
        }
        if r.jacobian_max.is_some() {
            h.push("jacobian_max".into());
        }
        if r.gn_norm.is_some() {
            h.push("gn_norm".into());
        }
        if let Some(f) = &r.feature_norms {
            h.extend((1..=f.len()).map(|k| format!("feature_norm_{k}")));
        }
        h
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        for r in &self.records {
            let mut cells = vec![r.step.to_string(), format!("{:.16e}", r.loss)];
            for v in [r.sharpness, r.jacobian_max, r.gn_norm].into_iter().flatten() {
                cells.push(format!("{v:.16e}"));
            }
            if let Some(f) = &r.feature_norms {
                cells.extend(f.iter().map(|v| format!("{v:.16e}")));
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Fixed probe subset: `size` distinct columns drawn with `seed`, in
/// increasing order (all columns when `size ≥ N`).
pub fn probe_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let mut out = idx[..size].to_vec();
    out.sort_unstable();
    out
}

/// Metrics of the schedule at the current parameters on the probe batch.
pub fn measure(
    net: &LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    schedule: &MetricSchedule,
) -> Result<TrainRecord> {
    let setup = LossSetup::new(net, cost, x, y);
    let opts = &schedule.power;
    let sharp = if schedule.sharpness {
        Some(sharpness(&setup, opts)?.value)
    } else {
        None
    };
    let jac = if schedule.jacobian_max {
        let eval = net.eval_copy(x)?;
        let softmaxed = schedule.softmaxed.unwrap_or(cost.softmaxed());
        Some(jacobian_norms(&eval, x, softmaxed, opts)?.max)
    } else {
        None
    };
    let gn = if schedule.gn_norm {
        Some(gauss_newton_norm(&setup, GnMode::Conjugate, opts)?.value)
    } else {
        None
    };
    let feats = if schedule.feature_norms {
        Some(feature_norms(net, x, opts)?)
    } else {
        None
    };
    Ok(TrainRecord {
        step: 0,
        loss: loss(net, cost, x, y)?,
        sharpness: sharp,
        jacobian_max: jac,
        gn_norm: gn,
        feature_norms: feats,
    })
}

/// Trains until the mean of the last [`STOP_WINDOW`] recorded losses is at
/// most `stop_loss`, or for `max_steps` updates. Records are taken every
/// `log_every` steps (and at the end) with the full-data loss; requested
/// metrics use the probe subset. Aborts with [`Error::Diverged`] once a loss
/// exceeds [`DIVERGENCE_FACTOR`] times the initial one or is non-finite.
pub fn train(
    net: &mut LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    cost.validate()?;
    let n = x.cols();
    let probe = probe_indices(n, cfg.metrics.probe, derive_seed(cfg.seed, 0));
    let (px, py) = (x.select_columns(&probe), y.select_columns(&probe));
    let mut shuffle = seeded(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut opt = Optimizer::new();
    let mut records: Vec<TrainRecord> = Vec::new();
    let mut initial = f64::NAN;
    let mut step = 0;
    loop {
        let reached = match cfg.stop_accuracy {
            Some(target) => accuracy(net, x, y)? >= target,
            None => false,
        };
        let log_now = step % cfg.log_every == 0 || step == cfg.max_steps || reached;
        if log_now {
            let full = loss(net, cost, x, y)?;
            check_divergence(step, full, &mut initial)?;
            let mut rec = if cfg.metrics.any() {
                measure(net, cost, &px, &py, &cfg.metrics)?
            } else {
                TrainRecord {
                    step,
                    loss: full,
                    sharpness: None,
                    jacobian_max: None,
                    gn_norm: None,
                    feature_norms: None,
                }
            };
            rec.step = step;
            rec.loss = full;
            records.push(rec);
            if let Some(target) = cfg.stop_loss {
                let tail = &records[records.len().saturating_sub(STOP_WINDOW)..];
                let mean = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
                if mean <= target {
                    return Ok(TrainTrace {
                        records,
                        stop: StopReason::StopLoss,
                        steps: step,
                    });
                }
            }
        }
        if reached {
            return Ok(TrainTrace {
                records,
                stop: StopReason::StopAccuracy,
                steps: step,
            });
        }
        if step == cfg.max_steps {
            return Ok(TrainTrace {
                records,
                stop: StopReason::MaxSteps,
                steps: step,
            });
        }
        let l = match cfg.batch_size {
            BatchSize::Full => full_batch_step_ghosted(net, cost, x, y, cfg, &mut opt),
            BatchSize::Mini(b) => {
                if cursor + b > n {
                    order.shuffle(&mut shuffle);
                    cursor = 0;
                }
                let idx = &order[cursor..(cursor + b).min(n)];
                cursor += b;
                sgd_step(net, cost, &x.select_columns(idx), &y.select_columns(idx), cfg, &mut opt)
            }
        };
        let l = match l {
            Err(Error::NonFinite(_)) => f64::NAN,
            other => other?,
        };
        check_divergence(step, l, &mut initial)?;
        step += 1;
    }
}

fn argmax(col: &[f64]) -> usize {
    col.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fraction of columns whose output argmax matches the target argmax (first
/// index on ties).
pub fn accuracy(net: &LayeredNetwork, x: &Tensor, y: &Tensor) -> Result<f64> {
    let z = net.forward_batch(x)?;
    if z.shape() != y.shape() {
        return Err(Error::Shape(format!("outputs {:?} vs targets {:?}", z.shape(), y.shape())));
    }
    let n = z.cols();
    let hits = (0..n).filter(|&j| argmax(&z.column(j)) == argmax(&y.column(j))).count();
    Ok(hits as f64 / n as f64)
}

fn check_divergence(step: usize, l: f64, initial: &mut f64) -> Result<()> {
    if initial.is_nan() {
        *initial = l;
    }
    if !l.is_finite() || l > DIVERGENCE_FACTOR * initial.max(1e-12) {
        return Err(Error::Diverged { step, loss: l });
    }
    Ok(())
}
