use serde::{Deserialize, Serialize};

use super::operator::{gram, LinearOperator};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, unit_gaussian};
use crate::tensor::{dot, norm};

/// Stopping rule for power iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerOptions {
    /// Relative change of the Rayleigh quotient between iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl PowerOptions {
    pub fn with_seed(self, seed: u64) -> Self {
        PowerOptions { seed, ..self }
    }

    pub fn with_tol(self, tol: f64) -> Self {
        PowerOptions { tol, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Last relative change of the Rayleigh quotient.
    pub residual: f64,
}

pub(crate) struct Dominant {
    pub rayleigh: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Plain power iteration on `A + shift·I` from a given start vector.
pub(crate) fn dominant(
    op: &LinearOperator<'_>,
    start: Vec<f64>,
    shift: f64,
    opts: &PowerOptions,
) -> Result<Dominant> {
    let mut v = start;
    let mut prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter.max(1) {
        let mut w = op.apply(&v)?;
        if shift != 0.0 {
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi += shift * vi;
            }
        }
        let lambda = dot(&v, &w);
        let wn = norm(&w);
        if !wn.is_finite() || !lambda.is_finite() {
            return Err(Error::NonFinite("power iteration".into()));
        }
        if wn == 0.0 {
            return Ok(Dominant {
                rayleigh: 0.0,
                vector: v,
                iterations: it,
                converged: true,
                residual: 0.0,
            });
        }
        if prev.is_finite() {
            let scale = lambda.abs().max(prev.abs());
            residual = if scale > 0.0 {
                (lambda - prev).abs() / scale
            } else {
                0.0
            };
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        if residual <= opts.tol {
            return Ok(Dominant {
                rayleigh: lambda,
                vector: v,
                iterations: it,
                converged: true,
                residual,
            });
        }
        prev = lambda;
    }
    Ok(Dominant {
        rayleigh: prev,
        vector: v,
        iterations: opts.max_iter,
        converged: false,
        residual,
    })
}

/// Largest algebraic eigenvalue of a symmetric operator.
///
/// A first run finds the eigenvalue of largest magnitude λ; a second run on
/// `A + |λ|·I` (all eigenvalues now non-negative) finds the top one, and the
/// shift is subtracted again. When λ is already positive the second run starts
/// from the first run's vector and usually stops after a couple of steps.
pub fn power_iteration(op: &LinearOperator<'_>, opts: &PowerOptions) -> Result<SpectralResult> {
    if !op.is_symmetric() {
        return Err(Error::Shape("power_iteration needs a symmetric operator".into()));
    }
    if op.dim_in() == 0 {
        return Err(Error::Shape("empty operator".into()));
    }
    let start = unit_gaussian(opts.seed, op.dim_in());
    let mag = dominant(op, start, 0.0, opts)?;
    let mu = mag.rayleigh.abs();
    if mu == 0.0 {
        return Ok(SpectralResult {
            value: 0.0,
            iterations: mag.iterations,
            converged: true,
            residual: 0.0,
        });
    }
    let start = if mag.rayleigh > 0.0 {
        mag.vector
    } else {
        unit_gaussian(derive_seed(opts.seed, 1), op.dim_in())
    };
    let shifted = dominant(op, start, mu, opts)?;
    Ok(SpectralResult {
        value: shifted.rayleigh - mu,
        iterations: mag.iterations + shifted.iterations,
        converged: shifted.converged,
        residual: shifted.residual,
    })
}

/// Eigenvalue of largest magnitude, reported as its absolute value.
pub fn magnitude_norm(op: &LinearOperator<'_>, opts: &PowerOptions) -> Result<SpectralResult> {
    if !op.is_symmetric() {
        return Err(Error::Shape("magnitude_norm needs a symmetric operator".into()));
    }
    let start = unit_gaussian(opts.seed, op.dim_in());
    let d = dominant(op, start, 0.0, opts)?;
    Ok(SpectralResult {
        value: d.rayleigh.abs(),
        iterations: d.iterations,
        converged: d.converged,
        residual: d.residual,
    })
}

/// Largest singular value via power iteration on `AᵀA`.
pub fn singular_norm(op: &LinearOperator<'_>, opts: &PowerOptions) -> Result<SpectralResult> {
    let g = gram(op)?;
    let start = unit_gaussian(opts.seed, op.dim_in());
    let d = dominant(&g, start, 0.0, opts)?;
    Ok(SpectralResult {
        value: d.rayleigh.max(0.0).sqrt(),
        iterations: d.iterations,
        converged: d.converged,
        residual: d.residual,
    })
}
