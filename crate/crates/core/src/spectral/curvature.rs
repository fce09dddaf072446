//! Loss-Hessian sharpness and its split into the Gauss-Newton term
//! `DF_Xᵀ D²γ_Y DF_X` and the residual term `Dγ_Y · D²F_X`.

use serde::{Deserialize, Serialize};

use super::operator::LinearOperator;
use super::power::{magnitude_norm, power_iteration, PowerOptions, SpectralResult};
use crate::autodiff::{self, Graph, Program, Var};
use crate::cost::{cost_gradient, cost_hessian, cost_hessian_factor, CostSpec, LossProgram};
use crate::error::Result;
use crate::network::{LayeredNetwork, ParamMap};
use crate::tensor::{Scalar, Tensor};

/// Which side of `AᵀA` / `AAᵀ` the Gauss-Newton norm is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnMode {
    /// Parameter space: `v ↦ DF_Xᵀ C² DF_X v`.
    Primal,
    /// Output space: `u ↦ C DF_X DF_Xᵀ C u` (tangent-kernel conjugate).
    Conjugate,
}

/// Network, cost and data at the current parameters.
#[derive(Clone, Copy)]
pub struct LossSetup<'a> {
    pub net: &'a LayeredNetwork,
    pub cost: &'a CostSpec,
    pub x: &'a Tensor,
    pub y: &'a Tensor,
}

impl<'a> LossSetup<'a> {
    pub fn new(net: &'a LayeredNetwork, cost: &'a CostSpec, x: &'a Tensor, y: &'a Tensor) -> Self {
        LossSetup { net, cost, x, y }
    }

    fn loss_program(&self) -> LossProgram<'a> {
        LossProgram {
            net: self.net,
            cost: self.cost,
            x: self.x,
            y: self.y,
        }
    }

    fn param_map(&self) -> ParamMap<'a> {
        ParamMap {
            net: self.net,
            x: self.x,
        }
    }

    /// `v ↦ D²ℓ·v`.
    pub fn hessian(&self) -> LinearOperator<'a> {
        let program = self.loss_program();
        let theta = self.net.params().clone();
        LinearOperator::symmetric(theta.len(), move |v| {
            Ok(autodiff::hvp(&program, &theta, &Tensor::vector(v.to_vec()))?.into_data())
        })
    }

    /// `DF_X` as an operator from parameters to row-major `d_L × N` outputs.
    pub fn output_jacobian(&self) -> Result<LinearOperator<'a>> {
        let map = self.param_map();
        let map2 = map;
        let theta = self.net.params().clone();
        let theta2 = theta.clone();
        let z = self.net.forward_batch(self.x)?;
        let shape = z.shape().to_vec();
        Ok(LinearOperator::general(
            theta.len(),
            z.len(),
            move |v| Ok(autodiff::jvp(&map, &theta, &Tensor::vector(v.to_vec()))?.into_data()),
            move |u| {
                let u = Tensor::new(shape.clone(), u.to_vec())?;
                Ok(autodiff::vjp(&map2, &theta2, &u)?.into_data())
            },
        ))
    }

    /// Gauss-Newton operator in the requested space.
    pub fn gauss_newton(&self, mode: GnMode) -> Result<LinearOperator<'a>> {
        let z = self.net.forward_batch(self.x)?;
        let jac = self.output_jacobian()?;
        match mode {
            GnMode::Primal => {
                let h = cost_hessian(self.cost, &z, self.y)?;
                Ok(LinearOperator::symmetric(jac.dim_in(), move |v| {
                    let jv = jac.apply(v)?;
                    let hjv = h.apply(&jv)?;
                    jac.apply_adjoint(&hjv)
                }))
            }
            GnMode::Conjugate => {
                let c = cost_hessian_factor(self.cost, &z, self.y)?;
                Ok(LinearOperator::symmetric(jac.dim_out(), move |u| {
                    let cu = c.apply(u)?;
                    let jt = jac.apply_adjoint(&cu)?;
                    let jjt = jac.apply(&jt)?;
                    c.apply(&jjt)
                }))
            }
        }
    }

    /// `Dγ_Y · D²F_X` in parameter space, computed directly as the Hessian of
    /// `θ ↦ ⟨G, F_X(θ)⟩` with `G = Dγ_Y(F_X(θ₀))` held fixed.
    pub fn residual(&self) -> Result<LinearOperator<'a>> {
        let z = self.net.forward_batch(self.x)?;
        let gradient = cost_gradient(self.cost, &z, self.y)?;
        let program = Contracted {
            map: self.param_map(),
            weights: gradient,
        };
        let theta = self.net.params().clone();
        Ok(LinearOperator::symmetric(theta.len(), move |v| {
            Ok(autodiff::hvp(&program, &theta, &Tensor::vector(v.to_vec()))?.into_data())
        }))
    }
}

/// `θ ↦ ⟨W, F_X(θ)⟩` for a constant weight matrix `W`.
struct Contracted<'a> {
    map: ParamMap<'a>,
    weights: Tensor,
}

impl Program for Contracted<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, theta: Var) -> Result<Var> {
        let z = self.map.build(g, theta)?;
        let w = g.constant(&self.weights);
        let p = g.mul(z, w)?;
        Ok(g.sum(p))
    }
}

/// Largest eigenvalue of `D²ℓ`.
pub fn sharpness(setup: &LossSetup<'_>, opts: &PowerOptions) -> Result<SpectralResult> {
    crate::cost::loss(setup.net, setup.cost, setup.x, setup.y)?;
    power_iteration(&setup.hessian(), opts)
}

/// Largest eigenvalue of the Gauss-Newton matrix.
pub fn gauss_newton_norm(
    setup: &LossSetup<'_>,
    mode: GnMode,
    opts: &PowerOptions,
) -> Result<SpectralResult> {
    // PSD in both modes, so the largest-magnitude eigenvalue is the top one.
    magnitude_norm(&setup.gauss_newton(mode)?, opts)
}

/// Spectral norm (largest |eigenvalue|) of the residual term.
pub fn residual_term_norm(setup: &LossSetup<'_>, opts: &PowerOptions) -> Result<SpectralResult> {
    magnitude_norm(&setup.residual()?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Layer, LayerKind};

    fn scalar_model(w: f64) -> LayeredNetwork {
        let mut net = LayeredNetwork::new(vec![Layer::linear(1, 1)]).unwrap();
        net.set_params(Tensor::vector(vec![w, 0.0])).unwrap();
        net
    }

    fn tight() -> PowerOptions {
        PowerOptions::default().with_tol(1e-12)
    }

    #[test]
    fn one_parameter_linear_model() {
        // f(x) = wx + b, X=[1], Y=[0]: ℓ = (w+b)², Hessian [[2,2],[2,2]], top 4;
        // the weight block alone is ∂²ℓ/∂w² = 2.
        let net = scalar_model(0.7);
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let y = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let cost = CostSpec::square();
        let s = LossSetup::new(&net, &cost, &x, &y);
        let h = s.hessian().to_dense().unwrap();
        assert!((h[0] - 2.0).abs() < 1e-14);
        let top = sharpness(&s, &tight()).unwrap().value;
        assert!((top - 4.0).abs() < 1e-9);
        for mode in [GnMode::Primal, GnMode::Conjugate] {
            let gn = gauss_newton_norm(&s, mode, &tight()).unwrap().value;
            assert!((gn - 4.0).abs() < 1e-9, "{mode:?} {gn}");
        }
        assert!(residual_term_norm(&s, &tight()).unwrap().value.abs() < 1e-14);
    }

    #[test]
    fn scaling_the_loss_scales_sharpness() {
        let net = LayeredNetwork::mlp(&[3, 2], LayerKind::Tanh, 1).unwrap();
        let x = Tensor::from_fn(&[3, 5], |k| (k as f64).cos());
        let y = Tensor::from_fn(&[2, 5], |k| (k as f64).sin());
        let cost = CostSpec::square();
        let base = sharpness(&LossSetup::new(&net, &cost, &x, &y), &tight()).unwrap().value;
        struct Tripled<'a>(LossProgram<'a>);
        impl Program for Tripled<'_> {
            fn build<S: Scalar>(&self, g: &mut Graph<S>, t: Var) -> Result<Var> {
                let l = self.0.build(g, t)?;
                Ok(g.scale(l, 3.0))
            }
        }
        let p = Tripled(LossProgram {
            net: &net,
            cost: &cost,
            x: &x,
            y: &y,
        });
        let theta = net.params().clone();
        let op = LinearOperator::symmetric(theta.len(), |v| {
            Ok(autodiff::hvp(&p, &theta, &Tensor::vector(v.to_vec()))?.into_data())
        });
        let tripled = power_iteration(&op, &tight()).unwrap().value;
        assert!((tripled - 3.0 * base).abs() < 1e-8 * base.abs().max(1.0));
    }

    #[test]
    fn single_parameter_quadratic() {
        // ℓ(w) = w² from f(x) = wx, X = [1], Y = [0]
        struct WSquared;
        impl Program for WSquared {
            fn build<S: Scalar>(&self, g: &mut Graph<S>, w: Var) -> Result<Var> {
                let sq = g.unary(w, crate::autodiff::Unary::Square);
                Ok(g.sum(sq))
            }
        }
        let theta = Tensor::vector(vec![0.3]);
        let op = LinearOperator::symmetric(1, |v| {
            Ok(autodiff::hvp(&WSquared, &theta, &Tensor::vector(v.to_vec()))?.into_data())
        });
        assert_eq!(power_iteration(&op, &tight()).unwrap().value, 2.0);
    }

    #[test]
    fn residual_vanishes_at_interpolation() {
        let net = LayeredNetwork::mlp(&[2, 4, 1], LayerKind::Tanh, 3).unwrap();
        let x = Tensor::from_fn(&[2, 6], |k| (k as f64 * 0.7).sin());
        let y = net.forward_batch(&x).unwrap();
        let cost = CostSpec::square();
        let s = LossSetup::new(&net, &cost, &x, &y);
        assert_eq!(residual_term_norm(&s, &tight()).unwrap().value, 0.0);
    }

    #[test]
    fn saturated_cross_entropy_has_vanishing_gauss_newton() {
        let mut net = LayeredNetwork::new(vec![Layer::linear(2, 2)]).unwrap();
        net.set_params(Tensor::vector(vec![60.0, 0.0, 0.0, 60.0, 0.0, 0.0]))
            .unwrap();
        let x = Tensor::identity(2);
        let y = Tensor::identity(2);
        let cost = CostSpec::cross_entropy(0.0, true);
        let s = LossSetup::new(&net, &cost, &x, &y);
        let gn = gauss_newton_norm(&s, GnMode::Conjugate, &tight()).unwrap().value;
        assert!(gn < 1e-20, "{gn}");
    }
}
