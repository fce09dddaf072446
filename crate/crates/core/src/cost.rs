//! Cost functions `c`, the averaged loss `γ_Y(Z) = N⁻¹ Σ c(Z_i, Y_i)` and
//! `ℓ = γ_Y ∘ F_X`, plus the square root of `D²γ_Y`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, Program, Unary, Var};
use crate::error::{Error, Result};
use crate::network::{LayeredNetwork, ParamMap};
use crate::rng::seeded;
use crate::spectral::LinearOperator;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `c(z, y) = ‖z − y‖²`
    Square,
    /// `c(z, y) = −Σ_k y_k log softmax(z)_k`
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kind: CostKind,
    #[serde(default)]
    pub label_smoothing: f64,
    #[serde(default)]
    pub subtract_label_entropy: bool,
}

impl CostSpec {
    pub fn square() -> Self {
        CostSpec {
            kind: CostKind::Square,
            label_smoothing: 0.0,
            subtract_label_entropy: false,
        }
    }

    pub fn cross_entropy(label_smoothing: f64, subtract_label_entropy: bool) -> Self {
        CostSpec {
            kind: CostKind::CrossEntropy,
            label_smoothing,
            subtract_label_entropy,
        }
    }

    /// `γ` with `c(z₁, z₂) ≥ γ‖z₁ − z₂‖²`; for cross-entropy the bound is on
    /// softmax outputs with the label entropy subtracted (Pinsker).
    pub fn gamma_lower(&self) -> f64 {
        match self.kind {
            CostKind::Square => 1.0,
            CostKind::CrossEntropy => 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1]",
                self.label_smoothing
            )));
        }
        if self.kind == CostKind::Square && self.subtract_label_entropy {
            return Err(Error::Config(
                "label entropy subtraction only applies to cross-entropy".into(),
            ));
        }
        Ok(())
    }

    /// Whether model Jacobians should be measured after softmax.
    pub fn softmaxed(&self) -> bool {
        self.kind == CostKind::CrossEntropy
    }
}

/// Targets `(1 − α)·onehot + α/d`, one column per label.
pub fn smoothed_targets(labels: &[usize], classes: usize, alpha: f64) -> Result<Tensor> {
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::Shape(format!("label {bad} with {classes} classes")));
    }
    let n = labels.len();
    let off = alpha / classes as f64;
    Ok(Tensor::from_fn(&[classes, n], |k| {
        let (i, j) = (k / n, k % n);
        if labels[j] == i {
            (1.0 - alpha) + off
        } else {
            off
        }
    }))
}

fn entropy(col: &[f64]) -> f64 {
    -col.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `N⁻¹ Σ_i H(Y_i)`.
pub fn mean_label_entropy(y: &Tensor) -> f64 {
    let n = y.cols();
    (0..n).map(|j| entropy(&y.column(j))).sum::<f64>() / n as f64
}

fn check_targets(z: &Tensor, y: &Tensor) -> Result<()> {
    if z.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?} vs targets {:?}",
            z.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Records `γ_Y(Z)` on top of an output node.
pub fn build_gamma<S: Scalar>(g: &mut Graph<S>, cost: &CostSpec, z: Var, y: &Tensor) -> Result<Var> {
    let zs = g.value(z).shape().to_vec();
    if zs != y.shape() {
        return Err(Error::Shape(format!(
            "outputs {zs:?} vs targets {:?}",
            y.shape()
        )));
    }
    let n = y.cols() as f64;
    let yv = g.constant(y);
    match cost.kind {
        CostKind::Square => {
            let d = g.sub(z, yv)?;
            let sq = g.unary(d, Unary::Square);
            let s = g.sum(sq);
            Ok(g.scale(s, 1.0 / n))
        }
        CostKind::CrossEntropy => {
            let ls = g.log_softmax_cols(z);
            let prod = g.mul(ls, yv)?;
            let s = g.sum(prod);
            let ce = g.scale(s, -1.0 / n);
            Ok(if cost.subtract_label_entropy {
                g.add_scalar(ce, -mean_label_entropy(y))
            } else {
                ce
            })
        }
    }
}

/// `θ ↦ ℓ(θ)`.
#[derive(Clone)]
pub struct LossProgram<'a> {
    pub net: &'a LayeredNetwork,
    pub cost: &'a CostSpec,
    pub x: &'a Tensor,
    pub y: &'a Tensor,
}

impl Program for LossProgram<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, theta: Var) -> Result<Var> {
        let z = ParamMap {
            net: self.net,
            x: self.x,
        }
        .build(g, theta)?;
        build_gamma(g, self.cost, z, self.y)
    }
}

/// `Z ↦ γ_Y(Z)`.
#[derive(Clone)]
pub struct GammaProgram<'a> {
    pub cost: &'a CostSpec,
    pub y: &'a Tensor,
}

impl Program for GammaProgram<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, z: Var) -> Result<Var> {
        build_gamma(g, self.cost, z, self.y)
    }
}

pub fn loss(net: &LayeredNetwork, cost: &CostSpec, x: &Tensor, y: &Tensor) -> Result<f64> {
    let z = net.forward_batch(x)?;
    check_targets(&z, y)?;
    let p = LossProgram { net, cost, x, y };
    let v = autodiff::evaluate(&p, net.params())?;
    Ok(v.data()[0])
}

pub fn loss_and_grad(
    net: &LayeredNetwork,
    cost: &CostSpec,
    x: &Tensor,
    y: &Tensor,
) -> Result<(f64, Tensor)> {
    autodiff::value_and_grad(&LossProgram { net, cost, x, y }, net.params())
}

/// Per-column `s_j·(diag p − ppᵀ)/N` blocks for cross-entropy, with `s_j` the
/// target column sum.
fn ce_blocks(z: &Tensor, y: &Tensor) -> Vec<DMatrix<f64>> {
    let (d, n) = (z.rows(), z.cols());
    let p = autodiff::softmax_columns(z);
    (0..n)
        .map(|j| {
            let pc = p.column(j);
            let s: f64 = y.column(j).iter().sum();
            DMatrix::from_fn(d, d, |a, b| {
                let diag = if a == b { pc[a] } else { 0.0 };
                s * (diag - pc[a] * pc[b]) / n as f64
            })
        })
        .collect()
}

fn blockwise<'a>(d: usize, n: usize, blocks: Vec<DMatrix<f64>>) -> LinearOperator<'a> {
    LinearOperator::symmetric(d * n, move |u| {
        let mut out = vec![0.0; d * n];
        let mut col = nalgebra::DVector::zeros(d);
        for (j, b) in blocks.iter().enumerate() {
            for i in 0..d {
                col[i] = u[i * n + j];
            }
            let r = b * &col;
            for i in 0..d {
                out[i * n + j] = r[i];
            }
        }
        Ok(out)
    })
}

/// `D²γ_Y` at `Z` as an operator on row-major `d×N` matrices.
pub fn cost_hessian(cost: &CostSpec, z: &Tensor, y: &Tensor) -> Result<LinearOperator<'static>> {
    check_targets(z, y)?;
    let (d, n) = (z.rows(), z.cols());
    Ok(match cost.kind {
        CostKind::Square => {
            let k = 2.0 / n as f64;
            LinearOperator::symmetric(d * n, move |u| Ok(u.iter().map(|x| k * x).collect()))
        }
        CostKind::CrossEntropy => blockwise(d, n, ce_blocks(z, y)),
    })
}

/// `C = (D²γ_Y)^{1/2}` at `Z`, the symmetric PSD square root.
pub fn cost_hessian_factor(cost: &CostSpec, z: &Tensor, y: &Tensor) -> Result<LinearOperator<'static>> {
    check_targets(z, y)?;
    let (d, n) = (z.rows(), z.cols());
    match cost.kind {
        CostKind::Square => {
            let k = (2.0 / n as f64).sqrt();
            Ok(LinearOperator::symmetric(d * n, move |u| {
                Ok(u.iter().map(|x| k * x).collect())
            }))
        }
        CostKind::CrossEntropy => {
            let mut roots = Vec::with_capacity(n);
            for m in ce_blocks(z, y) {
                let eig = SymmetricEigen::new(m);
                let mut vals = eig.eigenvalues.clone();
                for v in vals.iter_mut() {
                    if *v < -1e-10 {
                        return Err(Error::NotPsd(*v));
                    }
                    *v = v.max(0.0).sqrt();
                }
                let q = &eig.eigenvectors;
                roots.push(q * DMatrix::from_diagonal(&vals) * q.transpose());
            }
            Ok(blockwise(d, n, roots))
        }
    }
}

/// `Dγ_Y` at `Z`, shaped like `Z`.
pub fn cost_gradient(cost: &CostSpec, z: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_targets(z, y)?;
    autodiff::grad(&GammaProgram { cost, y }, z)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Smallest sampled ratio `c(z₁, z₂)/‖z₁ − z₂‖²`. Cross-entropy pairs are
/// points of the probability simplex (dimensions 2 to 8) and `c` is the
/// entropy-subtracted cross-entropy, i.e. the KL divergence. Pairs with an
/// infinite divergence satisfy the bound trivially and are skipped.
pub fn quadratic_lower_bound_check(cost: &CostSpec, trials: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let dims = [2usize, 3, 4, 8];
    let mut worst = f64::INFINITY;
    for t in 0..trials {
        let d = dims[t % dims.len()];
        let ratio = match cost.kind {
            CostKind::Square => {
                let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                if sq == 0.0 {
                    continue;
                }
                let y = Tensor::matrix(d, 1, b).expect("column shape");
                let z = Tensor::matrix(d, 1, a).expect("column shape");
                let c = autodiff::evaluate(&GammaProgram { cost, y: &y }, &z).expect("square cost evaluates");
                c.data()[0] / sq
            }
            CostKind::CrossEntropy => {
                let mut simplex = || {
                    let e: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|x| x / s).collect::<Vec<f64>>()
                };
                let target = simplex();
                let model = simplex();
                let sq: f64 = target.iter().zip(&model).map(|(x, y)| (x - y).powi(2)).sum();
                if sq == 0.0 {
                    continue;
                }
                let c = kl(&target, &model);
                if !c.is_finite() {
                    continue;
                }
                c / sq
            }
        };
        worst = worst.min(ratio);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;

    fn identity_net(d: usize) -> LayeredNetwork {
        let mut net = LayeredNetwork::new(vec![Layer::linear(d, d)]).unwrap();
        let mut p = vec![0.0; d * d + d];
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        net.set_params(Tensor::vector(p)).unwrap();
        net
    }

    #[test]
    fn square_loss_zero_at_targets() {
        let net = identity_net(2);
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(loss(&net, &CostSpec::square(), &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let net = identity_net(2);
        let z = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        let y = Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap();
        let l = loss(&net, &CostSpec::cross_entropy(0.0, true), &z, &y).unwrap();
        assert!(l.abs() < 1e-15);
        let z = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let y = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let l = loss(&net, &CostSpec::cross_entropy(0.0, false), &z, &y).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch() {
        let net = identity_net(2);
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            loss(&net, &CostSpec::square(), &x, &Tensor::zeros(&[2, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn smoothed_columns_sum_to_one() {
        let labels = [0, 3, 1, 2, 2];
        for alpha in [0.0, 0.5, 0.75] {
            let y = smoothed_targets(&labels, 4, alpha).unwrap();
            for j in 0..labels.len() {
                assert_eq!(y.column(j).iter().sum::<f64>(), 1.0);
            }
        }
        assert!(smoothed_targets(&[4], 4, 0.0).is_err());
    }

    #[test]
    fn factor_examples() {
        let z = Tensor::zeros(&[3, 1]);
        let c = cost_hessian_factor(&CostSpec::square(), &z, &z).unwrap();
        let r = c.apply(&[1.0, -2.0, 0.5]).unwrap();
        let s = 2f64.sqrt();
        assert_eq!(r, vec![s, -2.0 * s, 0.5 * s]);
        // saturated softmax: diag(p) − ppᵀ = 0
        let z = Tensor::matrix(2, 1, vec![1000.0, 0.0]).unwrap();
        let y = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let c = cost_hessian_factor(&CostSpec::cross_entropy(0.0, false), &z, &y).unwrap();
        let r = c.apply(&[1.0, 1.0]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lower_bound_constants() {
        assert_eq!(quadratic_lower_bound_check(&CostSpec::square(), 100, 1), 1.0);
        let w = quadratic_lower_bound_check(&CostSpec::cross_entropy(0.0, true), 100_000, 2);
        assert!(w >= 0.5, "{w}");
        assert!(w.is_finite());
    }

    #[test]
    fn corner_pair_has_infinite_divergence() {
        let c = kl(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(c.is_infinite());
    }

    #[test]
    fn entropy_subtracted_loss_is_non_negative() {
        let mut rng = seeded(9);
        let net = identity_net(3);
        let cost = CostSpec::cross_entropy(0.0, true);
        for _ in 0..200 {
            let z = Tensor::from_fn(&[3, 4], |_| rng.random_range(-5.0..5.0));
            let mut y = Tensor::from_fn(&[3, 4], |_| rng.random::<f64>());
            for j in 0..4 {
                let s: f64 = y.column(j).iter().sum();
                for i in 0..3 {
                    y.data_mut()[i * 4 + j] /= s;
                }
            }
            assert!(loss(&net, &cost, &z, &y).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn validation() {
        assert!(CostSpec::cross_entropy(1.5, true).validate().is_err());
        let mut s = CostSpec::square();
        s.subtract_label_entropy = true;
        assert!(s.validate().is_err());
        assert_eq!(CostSpec::square().gamma_lower(), 1.0);
        assert_eq!(CostSpec::cross_entropy(0.0, true).gamma_lower(), 0.5);
    }
}
