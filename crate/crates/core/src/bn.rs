//! Exact batch-norm Jacobians in train and eval mode and the `O(N⁻¹)` gap
//! between them.
//!
//! Both Jacobians are block diagonal over features: feature `i` of the output
//! only depends on feature `i` of the input. A [`BnJacobian`] stores the
//! `d` dense `N × N` blocks; [`BnJacobian::to_dense`] expands to the full
//! `dN × dN` matrix in row-major flattening (index `i·N + j`).

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BnMode, DEFAULT_BN_EPS};
use crate::rng::{derive_seed, seeded, uniform_vec};
use crate::spectral::{singular_norm, LinearOperator, PowerOptions};
use crate::tensor::Tensor;

/// Largest `d·N` for which dense Jacobians are assembled.
pub const DENSE_CAP: usize = 10_000;

/// A batch together with the statistics eval mode normalises by.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBatchState {
    pub x: Tensor,
    pub mean: Vec<f64>,
    /// Population variance (`N⁻¹` normalisation).
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BnBatchState {
    /// Stored statistics equal to the batch's own.
    pub fn from_batch(x: Tensor, eps: f64) -> Result<Self> {
        let (mean, var) = row_stats(&x)?;
        Self::with_stats(x, mean, var, eps)
    }

    pub fn with_stats(x: Tensor, mean: Vec<f64>, var: Vec<f64>, eps: f64) -> Result<Self> {
        if x.shape().len() != 2 || mean.len() != x.rows() || var.len() != x.rows() {
            return Err(Error::Shape(format!(
                "batch {:?} with {} means and {} variances",
                x.shape(),
                mean.len(),
                var.len()
            )));
        }
        if eps.is_nan() || eps <= 0.0 || var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("eps must be positive and variances non-negative".into()));
        }
        x.ensure_finite("batch norm input")?;
        Ok(BnBatchState { x, mean, var, eps })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.rows(), self.x.cols())
    }
}

/// Row means and population variances of a `d × N` matrix.
pub fn row_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.shape().len() != 2 || x.cols() == 0 {
        return Err(Error::Shape(format!("row statistics of {:?}", x.shape())));
    }
    let n = x.cols();
    let mut mean = Vec::with_capacity(x.rows());
    let mut var = Vec::with_capacity(x.rows());
    for row in x.data().chunks(n) {
        let m = row.iter().sum::<f64>() / n as f64;
        mean.push(m);
        var.push(row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64);
    }
    Ok((mean, var))
}

fn require_batch(state: &BnBatchState, mode: BnMode) -> Result<()> {
    if mode == BnMode::Train && state.x.cols() < 2 {
        return Err(Error::BatchTooSmall(state.x.cols()));
    }
    Ok(())
}

/// Train: `(X − 𝔼X)/(ε + σ²X)^{1/2}` with the batch's statistics.
/// Eval: the same formula with the stored statistics.
pub fn bn_forward(state: &BnBatchState, mode: BnMode) -> Result<Tensor> {
    require_batch(state, mode)?;
    let (mean, var) = match mode {
        BnMode::Train => row_stats(&state.x)?,
        BnMode::Eval => (state.mean.clone(), state.var.clone()),
    };
    let n = state.x.cols();
    Ok(Tensor::from_fn(state.x.shape(), |k| {
        let i = k / n;
        (state.x.data()[k] - mean[i]) / (state.eps + var[i]).sqrt()
    }))
}

/// Block-diagonal Jacobian: one `N × N` block per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct BnJacobian {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BnJacobian {
    pub fn dims(&self) -> (usize, usize) {
        (self.blocks.len(), self.blocks.first().map_or(0, |b| b.nrows()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (d, n) = self.dims();
        let mut m = DMatrix::zeros(d * n, d * n);
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((i * n, i * n), (n, n)).copy_from(b);
        }
        m
    }

    pub fn sub(&self, other: &BnJacobian) -> Result<BnJacobian> {
        if self.dims() != other.dims() {
            return Err(Error::Shape("Jacobian dimensions differ".into()));
        }
        Ok(BnJacobian {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect(),
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |a: f64, &v| a.max(v.abs()))
    }

    /// Spectral norm: the largest over blocks, each by power iteration.
    pub fn spectral_norm(&self, opts: &PowerOptions) -> Result<f64> {
        let mut best: f64 = 0.0;
        for b in &self.blocks {
            let n = b.nrows();
            let row_major: Vec<f64> = b.transpose().iter().cloned().collect();
            let op = LinearOperator::from_dense(n, n, row_major)?;
            best = best.max(singular_norm(&op, opts)?.value);
        }
        Ok(best)
    }
}

/// Exact Jacobian of [`bn_forward`].
///
/// Eval mode is the diagonal `(ε + σ²ᵢ)^{-1/2}`. Train mode is `Jv(m(X))·Jm`
/// with `m(X) = X − N⁻¹X1_{N×N}`, `v(Y) = (ε + N⁻¹‖Y‖²_row)^{-1/2}Y`, whose
/// row-`i` blocks are `∂mⱼ/∂xₗ = δⱼₗ − N⁻¹` and
/// `∂vⱼ/∂yₗ = s^{-1/2}δⱼₗ − N⁻¹ yⱼyₗ s^{-3/2}` with `s = ε + N⁻¹‖Yⁱ‖²`.
pub fn bn_jacobian_dense(state: &BnBatchState, mode: BnMode) -> Result<BnJacobian> {
    require_batch(state, mode)?;
    let (d, n) = state.dims();
    if d * n > DENSE_CAP {
        return Err(Error::SizeCap(d * n));
    }
    let nf = n as f64;
    let blocks = (0..d)
        .map(|i| match mode {
            BnMode::Eval => DMatrix::from_diagonal_element(n, n, 1.0 / (state.eps + state.var[i]).sqrt()),
            BnMode::Train => {
                let row = &state.x.data()[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f64>() / nf;
                let y: Vec<f64> = row.iter().map(|v| v - mean).collect();
                let s = state.eps + y.iter().map(|v| v * v).sum::<f64>() / nf;
                let jv = DMatrix::from_fn(n, n, |j, l| {
                    let diag = if j == l { s.powf(-0.5) } else { 0.0 };
                    diag - y[j] * y[l] / (nf * s.powf(1.5))
                });
                // Jv · Jm with Jm = I − 11ᵀ/N: subtract each row's mean.
                let row_means: Vec<f64> = (0..n).map(|j| jv.row(j).sum() / nf).collect();
                DMatrix::from_fn(n, n, |j, l| jv[(j, l)] - row_means[j])
            }
        })
        .collect();
    Ok(BnJacobian { blocks })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnGapPoint {
    pub n: usize,
    /// `max |J_T − J_V|` entrywise.
    pub gap: f64,
    /// `‖J_T − J_V‖₂`.
    pub spectral_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnSweep {
    pub d: usize,
    pub points: Vec<BnGapPoint>,
    /// Least-squares slope of `ln gap` against `ln N`.
    pub fitted_slope: f64,
}

/// For each `N`, draws `X` with i.i.d. uniform `[−1, 1]` entries (seed
/// `derive_seed(seed, k)` for the `k`-th size), freezes eval statistics to the
/// batch's own and measures the train/eval Jacobian gap.
pub fn bn_gap_sweep(d: usize, n_list: &[usize], seed: u64) -> Result<BnSweep> {
    if d == 0 || n_list.is_empty() {
        return Err(Error::Config("bn sweep needs d ≥ 1 and at least one N".into()));
    }
    let points: Vec<BnGapPoint> = n_list
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut rng = seeded(derive_seed(seed, k as u64));
            let x = Tensor::new(vec![d, n], uniform_vec(&mut rng, d * n, -1.0, 1.0))?;
            let state = BnBatchState::from_batch(x, DEFAULT_BN_EPS)?;
            let diff = bn_jacobian_dense(&state, BnMode::Train)?
                .sub(&bn_jacobian_dense(&state, BnMode::Eval)?)?;
            let opts = PowerOptions::default().with_seed(seed);
            Ok(BnGapPoint {
                n,
                gap: diff.max_abs(),
                spectral_gap: diff.spectral_norm(&opts)?,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.gap.ln()).collect();
    Ok(BnSweep {
        d,
        fitted_slope: fit_slope(&xs, &ys),
        points,
    })
}

/// Ordinary least-squares slope; NaN for fewer than two distinct abscissae.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

impl BnSweep {
    /// `N,gap,spectral_gap,fitted_slope`, the slope on the last row only.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "N,gap,spectral_gap,fitted_slope")?;
        for (k, p) in self.points.iter().enumerate() {
            let slope = if k + 1 == self.points.len() {
                format!("{:.16e}", self.fitted_slope)
            } else {
                String::new()
            };
            writeln!(w, "{},{:.16e},{:.16e},{}", p.n, p.gap, p.spectral_gap, slope)?;
        }
        Ok(())
    }
}
