//! Data distributions on which Lipschitz functions nearly attain their
//! supremum: the uniform hypercube and its pushforward by a smooth-leaky-ReLU
//! immersion. Also holds the `h`-profiles, Monte Carlo checks of the maximum
//! and concentration inequalities, and the closed-form probability bounds.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, LayerKind, LayeredNetwork};
use crate::rng::{derive_seed, seeded, uniform_vec};
use crate::spectral::dense_input_jacobians;
use crate::tensor::Tensor;

/// Smallest singular value a generator weight matrix may have.
pub const SINGULAR_FLOOR: f64 = 1e-3;
/// Latent pairs used for the generator Lipschitz estimate.
pub const GENERATOR_LIP_PAIRS: usize = 10_000;
/// Draws per parallel Monte Carlo task.
const MC_CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    Hypercube,
    Pushforward,
}

/// JSON form of a distribution. The generator uses the network layer format
/// with its parameters inlined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub latent_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Layer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_params: Option<Vec<f64>>,
    #[serde(rename = "concentration_C", default = "default_concentration")]
    pub concentration_c: f64,
    /// Seed for the generator Lipschitz estimate.
    #[serde(default)]
    pub seed: u64,
}

fn default_concentration() -> f64 {
    1.0
}

/// A validated distribution ready for sampling.
#[derive(Clone, Debug)]
pub struct Distribution {
    latent_dim: usize,
    generator: Option<LayeredNetwork>,
    generator_lip: f64,
    concentration_c: f64,
}

impl Distribution {
    pub fn hypercube(n: usize, concentration_c: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        check_concentration(concentration_c)?;
        Ok(Distribution {
            latent_dim: n,
            generator: None,
            generator_lip: 1.0,
            concentration_c,
        })
    }

    /// Pushforward of the uniform `[0,1]ⁿ` by `generator`; its Lipschitz
    /// norm on the cube is estimated from difference quotients.
    pub fn pushforward(generator: LayeredNetwork, concentration_c: f64, seed: u64) -> Result<Self> {
        check_generator(&generator)?;
        check_concentration(concentration_c)?;
        let lip = estimate_generator_lip(&generator, GENERATOR_LIP_PAIRS, seed)?;
        Ok(Distribution {
            latent_dim: generator.input_dim(),
            generator: Some(generator),
            generator_lip: lip,
            concentration_c,
        })
    }

    pub fn from_spec(spec: &DistributionSpec) -> Result<Self> {
        match spec.kind {
            DistributionKind::Hypercube => {
                if spec.generator.is_some() || spec.generator_params.is_some() {
                    return Err(Error::Config("hypercube takes no generator".into()));
                }
                Self::hypercube(spec.latent_dim, spec.concentration_c)
            }
            DistributionKind::Pushforward => {
                let (Some(layers), Some(params)) = (&spec.generator, &spec.generator_params) else {
                    return Err(Error::Config("pushforward needs generator and generator_params".into()));
                };
                let mut net = LayeredNetwork::new(layers.clone())?;
                net.set_params(Tensor::vector(params.clone()))?;
                if net.input_dim() != spec.latent_dim {
                    return Err(Error::Config(format!(
                        "latent_dim {} but generator input {}",
                        spec.latent_dim,
                        net.input_dim()
                    )));
                }
                Self::pushforward(net, spec.concentration_c, spec.seed)
            }
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.generator.as_ref().map_or(self.latent_dim, |g| g.output_dim())
    }

    pub fn generator(&self) -> Option<&LayeredNetwork> {
        self.generator.as_ref()
    }

    /// Empirical generator Lipschitz estimate (1 for the hypercube).
    pub fn generator_lip(&self) -> f64 {
        self.generator_lip
    }

    pub fn concentration_c(&self) -> f64 {
        self.concentration_c
    }

    pub fn profile(&self) -> HProfile {
        HProfile::new(self.latent_dim, self.generator_lip)
    }

    /// `N` i.i.d. draws as the columns of an `n_out × N` matrix.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        let z = hypercube_sample(self.latent_dim, n, seed);
        match &self.generator {
            None => Ok(z),
            Some(g) => g.forward_batch(&z),
        }
    }
}

fn check_concentration(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("concentration_C must be positive, got {c}")));
    }
    Ok(())
}

/// Uniform `[0,1]ⁿ` draws; column `j` consumes the generator's stream in order.
pub fn hypercube_sample(n: usize, count: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let cols = uniform_vec(&mut rng, n * count, 0.0, 1.0);
    Tensor::from_fn(&[n, count], |k| cols[(k % count) * n + k / count])
}

/// Immersion surrogate: linear and smooth-leaky-ReLU layers only, no layer
/// narrowing, and every weight matrix bounded away from singular.
pub fn check_generator(net: &LayeredNetwork) -> Result<()> {
    for (l, layer) in net.layers().iter().enumerate() {
        match layer.kind {
            LayerKind::SmoothLeakyRelu => {}
            LayerKind::Linear => {
                if layer.out_dim < layer.in_dim {
                    return Err(Error::DegenerateGenerator(format!(
                        "layer {l} maps {} to {} dims and cannot be injective",
                        layer.in_dim, layer.out_dim
                    )));
                }
                let w = net.weight(l)?;
                let m = DMatrix::from_row_slice(layer.out_dim, layer.in_dim, w.data());
                let smin = m.singular_values().iter().fold(f64::INFINITY, |a, &b| a.min(b));
                if smin < SINGULAR_FLOOR {
                    return Err(Error::DegenerateGenerator(format!(
                        "layer {l} smallest singular value {smin:e}"
                    )));
                }
            }
            other => {
                return Err(Error::DegenerateGenerator(format!(
                    "layer {l} has kind {other:?}"
                )))
            }
        }
    }
    Ok(())
}

/// Random generator `dims[0] → … → dims[last]` with smooth leaky ReLU
/// between layers, redrawn until it passes [`check_generator`].
pub fn random_generator(dims: &[usize], seed: u64) -> Result<LayeredNetwork> {
    for attempt in 0..1000 {
        let net = LayeredNetwork::mlp(dims, LayerKind::SmoothLeakyRelu, derive_seed(seed, attempt))?;
        match check_generator(&net) {
            Ok(()) => return Ok(net),
            Err(Error::DegenerateGenerator(msg)) if msg.contains("singular") => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateGenerator("no admissible draw in 1000 attempts".into()))
}

/// Max difference quotient over `pairs` latent pairs: half independent
/// uniform pairs, half pairs at distance `1e-4` to probe the local slope.
fn estimate_generator_lip(g: &LayeredNetwork, pairs: usize, seed: u64) -> Result<f64> {
    let n = g.input_dim();
    let half = (pairs / 2).max(1);
    let a = hypercube_sample(n, 2 * half, derive_seed(seed, 0));
    let far = hypercube_sample(n, half, derive_seed(seed, 1));
    let dirs = crate::rng::unit_gaussian(derive_seed(seed, 2), n * half);
    let mut b = a.clone();
    for j in 0..2 * half {
        for i in 0..n {
            let v = if j < half {
                far.at(i, j)
            } else {
                let k = (j - half) * n + i;
                // renormalise each direction block to length 1e-4
                let block = &dirs[(j - half) * n..(j - half + 1) * n];
                let bn = crate::tensor::norm(block);
                a.at(i, j) + 1e-4 * dirs[k] / bn
            };
            b.data_mut()[i * 2 * half + j] = v;
        }
    }
    let fa = g.forward_batch(&a)?;
    let fb = g.forward_batch(&b)?;
    let mut best: f64 = 0.0;
    for j in 0..2 * half {
        let dx = crate::tensor::norm(&sub(&a.column(j), &b.column(j)));
        if dx == 0.0 {
            continue;
        }
        best = best.max(crate::tensor::norm(&sub(&fa.column(j), &fb.column(j))) / dx);
    }
    Ok(best)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `Γ(n/2 + 1)` by the recursion `Γ(x+1) = xΓ(x)` from `Γ(1) = 1`, `Γ(½) = √π`.
pub fn gamma_half_integer_plus_one(n: usize) -> f64 {
    // Γ(n/2 + 1) = Π (n/2 − k) for k with n/2 − k > 0, times Γ(1) or Γ(½)
    let mut x = n as f64 / 2.0;
    let mut acc = 1.0;
    while x > 0.0 {
        acc *= x;
        x -= 1.0;
    }
    if n % 2 == 1 {
        acc * PI.sqrt()
    } else {
        acc
    }
}

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    PI.powf(n as f64 / 2.0) / gamma_half_integer_plus_one(n)
}

/// `h(t) = min(1, 2⁻ⁿ C_ball (t/s)ⁿ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HProfile {
    pub n: usize,
    pub ball_const: f64,
    pub scale: f64,
}

impl HProfile {
    pub fn new(n: usize, scale: f64) -> Self {
        HProfile {
            n,
            ball_const: unit_ball_volume(n),
            scale,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let r = t / self.scale;
        if !r.is_finite() {
            return 1.0;
        }
        (0.5f64.powi(self.n as i32) * self.ball_const * r.powi(self.n as i32)).min(1.0)
    }
}

/// A map evaluated on the columns of a batch.
pub trait VectorMap: Sync {
    fn eval(&self, x: &Tensor) -> Result<Tensor>;
}

/// Wraps a per-column closure `ℝⁿ → ℝᵐ`.
pub struct ColumnMap<F>(pub F);

impl<F> VectorMap for ColumnMap<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| (self.0)(&x.column(j))).collect();
        Tensor::from_columns(&cols)
    }
}

impl VectorMap for LayeredNetwork {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_batch(x)
    }
}

/// `x ↦ ‖Jf(x)‖₂` as a `1 × N` row, from exact dense Jacobians.
pub struct JacobianNormMap<'a> {
    pub net: &'a LayeredNetwork,
    pub softmaxed: bool,
}

impl VectorMap for JacobianNormMap<'_> {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let jac = dense_input_jacobians(self.net, x, self.softmaxed)?;
        let norms = jac
            .iter()
            .map(|m| m.singular_values().iter().fold(0.0, |a: f64, &b| a.max(b)))
            .collect();
        Tensor::matrix(1, x.cols(), norms)
    }
}

fn column_norms(t: &Tensor) -> Vec<f64> {
    (0..t.cols()).map(|j| crate::tensor::norm(&t.column(j))).collect()
}

/// Reference-sample and trial sizes for the Monte Carlo checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McOptions {
    pub reference: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            reference: 100_000,
            trials: 1_000_000,
            seed: 0,
        }
    }
}

/// Statistics of `g` on a reference sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// `max ‖g(x)‖₂`, the estimate of `‖g‖_∞`.
    pub sup: f64,
    /// Sample mean of `g`.
    pub mean: Vec<f64>,
    /// Difference-quotient Lipschitz estimate of `g`.
    pub lip: f64,
}

/// Estimates `‖g‖_∞`, `𝔼g` and `‖g‖_Lip` from `size` draws. The Lipschitz
/// estimate takes the larger of consecutive-pair quotients and quotients over
/// pairs at distance `1e-5`, both in the distribution's own space.
pub fn reference_stats(dist: &Distribution, g: &dyn VectorMap, size: usize, seed: u64) -> Result<Reference> {
    let x = dist.sample(size.max(2), seed)?;
    let gx = g.eval(&x)?;
    let norms = column_norms(&gx);
    let sup = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m = gx.rows();
    let n = gx.cols();
    let mean: Vec<f64> = (0..m)
        .map(|i| gx.data()[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let mut lip: f64 = 0.0;
    for j in 1..n {
        let dx = crate::tensor::norm(&sub(&x.column(j), &x.column(j - 1)));
        if dx > 0.0 {
            lip = lip.max(crate::tensor::norm(&sub(&gx.column(j), &gx.column(j - 1))) / dx);
        }
    }
    let local = n.min(10_000);
    let d = x.rows();
    let dirs = crate::rng::unit_gaussian(derive_seed(seed, 1), d * local);
    let mut y = x.select_columns(&(0..local).collect::<Vec<_>>());
    let base = y.clone();
    for j in 0..local {
        let block = &dirs[j * d..(j + 1) * d];
        let bn = crate::tensor::norm(block);
        for (i, &b) in block.iter().enumerate() {
            y.data_mut()[i * local + j] += 1e-5 * b / bn;
        }
    }
    let gb = g.eval(&base)?;
    let gy = g.eval(&y)?;
    for j in 0..local {
        let dx = crate::tensor::norm(&sub(&base.column(j), &y.column(j)));
        if dx > 0.0 {
            lip = lip.max(crate::tensor::norm(&sub(&gb.column(j), &gy.column(j))) / dx);
        }
    }
    Ok(Reference { sup, mean, lip })
}

/// Counts draws satisfying `pred(g(x))` over `trials` fresh draws, split into
/// parallel chunks with derived seeds; the sum is order-independent.
fn count_draws(
    dist: &Distribution,
    g: &dyn VectorMap,
    trials: usize,
    seed: u64,
    pred: &(dyn Fn(&[f64]) -> bool + Sync),
) -> Result<usize> {
    let chunks: Vec<(usize, usize)> = (0..trials)
        .step_by(MC_CHUNK)
        .enumerate()
        .map(|(k, s)| (k, (trials - s).min(MC_CHUNK)))
        .collect();
    let counts: Vec<usize> = chunks
        .par_iter()
        .map(|&(k, len)| {
            let x = dist.sample(len, derive_seed(seed, k as u64))?;
            let gx = g.eval(&x)?;
            Ok((0..len).filter(|&j| pred(&gx.column(j))).count())
        })
        .collect::<Result<_>>()?;
    Ok(counts.into_iter().sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub eps: f64,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub std_error: f64,
    /// The theoretical upper bound on `rate`.
    pub bound: f64,
    pub sup: f64,
    pub lip: f64,
    pub trials: usize,
}

fn std_error(rate: f64, trials: usize) -> f64 {
    (rate * (1.0 - rate) / trials as f64).sqrt()
}

/// Fraction of draws with `‖g(x)‖₂ ≤ ‖g‖_∞ − ε`, against the bound
/// `1 − h(ε/L̂)` (0 when `L̂ = 0`, since `g` is then constant).
pub fn max_inequality_violation_rate(
    dist: &Distribution,
    g: &dyn VectorMap,
    eps: f64,
    opts: &McOptions,
) -> Result<RateReport> {
    let r = reference_stats(dist, g, opts.reference, derive_seed(opts.seed, 0))?;
    max_inequality_rate_with(dist, g, eps, &r, opts)
}

/// As [`max_inequality_violation_rate`] with precomputed reference statistics.
pub fn max_inequality_rate_with(
    dist: &Distribution,
    g: &dyn VectorMap,
    eps: f64,
    r: &Reference,
    opts: &McOptions,
) -> Result<RateReport> {
    if opts.trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let level = r.sup - eps;
    let hits = count_draws(dist, g, opts.trials, derive_seed(opts.seed, 1), &|v| {
        crate::tensor::norm(v) <= level
    })?;
    let rate = hits as f64 / opts.trials as f64;
    let bound = if r.lip == 0.0 {
        0.0
    } else {
        1.0 - dist.profile().eval(eps / r.lip)
    };
    Ok(RateReport {
        eps,
        rate,
        std_error: std_error(rate, opts.trials),
        bound,
        sup: r.sup,
        lip: r.lip,
        trials: opts.trials,
    })
}

/// Fraction of draws with `‖g(x) − 𝔼g‖₂ ≥ ε`, against `2exp(−Cε²/L̂²)`.
pub fn concentration_violation_rate(
    dist: &Distribution,
    g: &dyn VectorMap,
    eps: f64,
    opts: &McOptions,
) -> Result<RateReport> {
    let r = reference_stats(dist, g, opts.reference, derive_seed(opts.seed, 0))?;
    concentration_rate_with(dist, g, eps, &r, opts)
}

pub fn concentration_rate_with(
    dist: &Distribution,
    g: &dyn VectorMap,
    eps: f64,
    r: &Reference,
    opts: &McOptions,
) -> Result<RateReport> {
    if opts.trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let mean = r.mean.clone();
    let hits = count_draws(dist, g, opts.trials, derive_seed(opts.seed, 2), &|v| {
        crate::tensor::norm(&sub(v, &mean)) >= eps
    })?;
    let rate = hits as f64 / opts.trials as f64;
    let bound = if r.lip == 0.0 {
        0.0
    } else {
        (2.0 * (-dist.concentration_c() * eps * eps / (r.lip * r.lip)).exp()).min(1.0)
    };
    Ok(RateReport {
        eps,
        rate,
        std_error: std_error(rate, opts.trials),
        bound,
        sup: r.sup,
        lip: r.lip,
        trials: opts.trials,
    })
}

/// Fraction of `repeats` independent `N`-samples whose sample maximum of
/// `‖g‖₂` falls short of `sup` by more than `eps`.
pub fn sample_max_shortfall_rate(
    dist: &Distribution,
    g: &dyn VectorMap,
    n_samples: usize,
    eps: f64,
    sup: f64,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 || repeats == 0 {
        return Err(Error::Config("sample size and repeats must be positive".into()));
    }
    let per_task = (MC_CHUNK / n_samples).max(1);
    let tasks: Vec<(usize, usize)> = (0..repeats)
        .step_by(per_task)
        .enumerate()
        .map(|(k, s)| (k, (repeats - s).min(per_task)))
        .collect();
    let counts: Vec<usize> = tasks
        .par_iter()
        .map(|&(k, reps)| {
            let x = dist.sample(reps * n_samples, derive_seed(seed, k as u64))?;
            let norms = column_norms(&g.eval(&x)?);
            Ok(norms
                .chunks(n_samples)
                .filter(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) < sup - eps)
                .count())
        })
        .collect::<Result<_>>()?;
    Ok(counts.into_iter().sum::<usize>() as f64 / repeats as f64)
}

/// `(1 − h(ε/‖Jf‖_Lip))ᴺ`, the chance that the sample maximum of the
/// Jacobian norm misses the supremum by more than `ε`.
pub fn thm_sample_max_bound(n_samples: usize, eps: f64, jac_lip: f64, profile: &HProfile) -> f64 {
    let t = if eps <= 0.0 { 0.0 } else { eps / jac_lip };
    (1.0 - profile.eval(t)).powf(n_samples as f64)
}

/// Inputs of the generalisation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralisationInputs {
    pub n_samples: usize,
    pub eps: f64,
    pub delta: f64,
    /// `maxᵢ ‖Jf(xᵢ)‖₂` over the sample.
    pub max_jac: f64,
    pub jac_lip: f64,
    pub concentration_c: f64,
    pub cost_lip: f64,
}

/// `1 − (1 − h(δ/‖Jf‖_Lip))ᴺ − 2exp(−N C' ε² / (maxᵢ‖Jf(xᵢ)‖₂ + δ)²)` with
/// `C' = C/‖c‖_Lip`, clamped below at 0.
pub fn generalisation_bound(p: &GeneralisationInputs, profile: &HProfile) -> f64 {
    let n = p.n_samples as f64;
    let miss = thm_sample_max_bound(p.n_samples, p.delta, p.jac_lip, profile);
    let c_prime = p.concentration_c / p.cost_lip;
    let spread = p.max_jac + p.delta;
    let tail = if p.eps.is_infinite() {
        0.0
    } else {
        2.0 * (-n * c_prime * p.eps * p.eps / (spread * spread)).exp()
    };
    (1.0 - miss - tail).max(0.0)
}

/// `max(0, (‖y₁ − y₂‖₂ − 2ε)/‖x₁ − x₂‖₂)`: any `f` fitting both targets to
/// within `ε` has at least this Lipschitz norm.
pub fn lipschitz_lower_bound(y1: &[f64], y2: &[f64], x1: &[f64], x2: &[f64], eps: f64) -> Result<f64> {
    if y1.len() != y2.len() || x1.len() != x2.len() {
        return Err(Error::Shape("mismatched pair lengths".into()));
    }
    let dx = crate::tensor::norm(&sub(x1, x2));
    if dx == 0.0 {
        return Err(Error::CoincidentPair);
    }
    let dy = crate::tensor::norm(&sub(y1, y2));
    Ok(((dy - 2.0 * eps) / dx).max(0.0))
}
