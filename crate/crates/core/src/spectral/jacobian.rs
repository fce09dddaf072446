//! Input-output Jacobian norms and empirical Lipschitz estimates.
//!
//! For a columnwise network (every batch norm in eval mode) the Jacobian of
//! `X ↦ f(X)` is block diagonal with one block per sample, so one batched
//! jvp/vjp pair advances an independent power iteration in every column.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operator::LinearOperator;
use super::power::{singular_norm, PowerOptions};
use crate::autodiff;
use crate::error::{Error, Result};
use crate::network::{InputMap, LayerKind, LayeredNetwork};
use crate::rng::{derive_seed, unit_gaussian};
use crate::tensor::{norm, Tensor};

/// Columns per batched power-iteration task.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianNorms {
    pub per_sample: Vec<f64>,
    pub max: f64,
    /// First index attaining `max`.
    pub argmax: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn require_columnwise(net: &LayeredNetwork) -> Result<()> {
    if net.has_train_bn() {
        return Err(Error::TrainModeBatchNorm);
    }
    Ok(())
}

/// Per-sample spectral norms `‖Jf(x_j)‖₂` of the (optionally softmaxed) model.
/// Column `j` starts from a unit vector seeded by `derive_seed(seed, j)`.
pub fn jacobian_norms(
    net: &LayeredNetwork,
    x: &Tensor,
    softmaxed: bool,
    opts: &PowerOptions,
) -> Result<JacobianNorms> {
    require_columnwise(net)?;
    if x.shape().len() != 2 || x.rows() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input {:?} for a network expecting {} rows",
            x.shape(),
            net.input_dim()
        )));
    }
    let n = x.cols();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(Vec<f64>, bool, usize)> = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + CHUNK).min(n)).collect();
            block_power(net, &x.select_columns(&idx), &idx, softmaxed, opts)
        })
        .collect::<Result<_>>()?;
    let mut per_sample = Vec::with_capacity(n);
    let mut converged = true;
    let mut iterations = 0;
    for (v, c, it) in parts {
        per_sample.extend(v);
        converged &= c;
        iterations = iterations.max(it);
    }
    let (argmax, max) = per_sample
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    Ok(JacobianNorms {
        per_sample,
        max,
        argmax,
        converged,
        iterations,
    })
}

fn block_power(
    net: &LayeredNetwork,
    x: &Tensor,
    global_idx: &[usize],
    softmaxed: bool,
    opts: &PowerOptions,
) -> Result<(Vec<f64>, bool, usize)> {
    let (d, n) = (x.rows(), x.cols());
    let map = InputMap { net, softmaxed };
    let cols: Vec<Vec<f64>> = global_idx
        .iter()
        .map(|&j| unit_gaussian(derive_seed(opts.seed, j as u64), d))
        .collect();
    let mut v = Tensor::from_columns(&cols)?;
    let mut lambda = vec![f64::NAN; n];
    let mut done = vec![false; n];
    for it in 1..=opts.max_iter.max(1) {
        let jv = autodiff::jvp(&map, x, &v)?;
        let jtjv = autodiff::vjp(&map, x, &jv)?;
        let mut next = Tensor::zeros(&[d, n]);
        for j in 0..n {
            let vj = v.column(j);
            let wj = jtjv.column(j);
            let l: f64 = vj.iter().zip(&wj).map(|(a, b)| a * b).sum();
            let wn = norm(&wj);
            let change = if lambda[j].is_finite() {
                let scale = l.abs().max(lambda[j].abs());
                if scale > 0.0 {
                    (l - lambda[j]).abs() / scale
                } else {
                    0.0
                }
            } else if wn == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            done[j] = change <= opts.tol;
            lambda[j] = l;
            for i in 0..d {
                next.data_mut()[i * n + j] = if wn > 0.0 { wj[i] / wn } else { vj[i] };
            }
        }
        v = next;
        if done.iter().all(|&c| c) {
            return Ok((lambda.iter().map(|l| l.max(0.0).sqrt()).collect(), true, it));
        }
    }
    Ok((
        lambda.iter().map(|l| l.max(0.0).sqrt()).collect(),
        false,
        opts.max_iter,
    ))
}

/// Dense `d_L × d₀` Jacobian at every column of `x`, assembled from `d₀`
/// batched jvps along the coordinate directions.
pub fn dense_input_jacobians(
    net: &LayeredNetwork,
    x: &Tensor,
    softmaxed: bool,
) -> Result<Vec<DMatrix<f64>>> {
    require_columnwise(net)?;
    let (d, n) = (x.rows(), x.cols());
    let out = net.output_dim();
    let map = InputMap { net, softmaxed };
    let mut jac = vec![DMatrix::zeros(out, d); n];
    for k in 0..d {
        let e = Tensor::from_fn(&[d, n], |idx| if idx / n == k { 1.0 } else { 0.0 });
        let col = autodiff::jvp(&map, x, &e)?;
        for (j, m) in jac.iter_mut().enumerate() {
            for i in 0..out {
                m[(i, k)] = col.at(i, j);
            }
        }
    }
    Ok(jac)
}

fn spectral(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
}

fn pair_matrix(pairs: &[(Vec<f64>, Vec<f64>)], d: usize) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::Shape("no sample pairs".into()));
    }
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        if x.len() != d || y.len() != d {
            return Err(Error::Shape(format!("pair of dims {}/{} for input dim {d}", x.len(), y.len())));
        }
        if x == y {
            return Err(Error::CoincidentPair);
        }
        a.push(x.clone());
        b.push(y.clone());
    }
    Ok((Tensor::from_columns(&a)?, Tensor::from_columns(&b)?))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn output_of(net: &LayeredNetwork, x: &Tensor, softmaxed: bool) -> Result<Tensor> {
    autodiff::evaluate(&InputMap { net, softmaxed }, x)
}

/// `max ‖f(x) − f(x')‖₂ / ‖x − x'‖₂` over the pairs; a lower bound on the
/// Lipschitz norm of `f` on any set containing them.
pub fn empirical_lipschitz(
    net: &LayeredNetwork,
    pairs: &[(Vec<f64>, Vec<f64>)],
    softmaxed: bool,
) -> Result<f64> {
    require_columnwise(net)?;
    let (a, b) = pair_matrix(pairs, net.input_dim())?;
    let fa = output_of(net, &a, softmaxed)?;
    let fb = output_of(net, &b, softmaxed)?;
    Ok((0..pairs.len())
        .map(|j| distance(&fa.column(j), &fb.column(j)) / distance(&pairs[j].0, &pairs[j].1))
        .fold(0.0, f64::max))
}

/// `max ‖Jf(x) − Jf(x')‖₂ / ‖x − x'‖₂` over the pairs, with exact dense
/// Jacobians; a lower estimate of the Jacobian's Lipschitz norm.
pub fn jacobian_lipschitz_estimate(
    net: &LayeredNetwork,
    pairs: &[(Vec<f64>, Vec<f64>)],
    softmaxed: bool,
) -> Result<f64> {
    let (a, b) = pair_matrix(pairs, net.input_dim())?;
    let ja = dense_input_jacobians(net, &a, softmaxed)?;
    let jb = dense_input_jacobians(net, &b, softmaxed)?;
    Ok((0..pairs.len())
        .map(|j| spectral(&(&ja[j] - &jb[j])) / distance(&pairs[j].0, &pairs[j].1))
        .fold(0.0, f64::max))
}

/// Spectral norms `‖f_{l−1}(X)‖₂` of the feature matrices entering every linear
/// layer after the first, in layer order ("layer 1 features" first).
pub fn feature_norms(net: &LayeredNetwork, x: &Tensor, opts: &PowerOptions) -> Result<Vec<f64>> {
    let acts = net.activations(x)?;
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate().skip(1) {
        if layer.kind != LayerKind::Linear {
            continue;
        }
        let f = &acts[l];
        let op = LinearOperator::from_dense(f.rows(), f.cols(), f.data().to_vec())?;
        out.push(singular_norm(&op, opts)?.value);
    }
    Ok(out)
}
