//! Reverse-mode differentiation over a recorded graph.
//!
//! A [`Program`] describes how to build its graph for any [`Scalar`]. Building
//! it with `f64` and running [`Graph::backward`] gives gradients and
//! vector-Jacobian products; building it with [`Dual`] inputs gives
//! Jacobian-vector products; doing both at once (forward-over-reverse) gives
//! exact Hessian-vector products.

mod graph;

pub use graph::{softmax_columns, Adjoints, Graph, Unary, Var, SLR_ALPHA, SLR_EPS};

use crate::error::{Error, Result};
use crate::tensor::{Dual, Scalar, Tensor};

/// A differentiable map from one tensor to another, generic over the scalar
/// it is evaluated with.
pub trait Program {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, input: Var) -> Result<Var>;
}

impl<P: Program + ?Sized> Program for &P {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, input: Var) -> Result<Var> {
        (**self).build(g, input)
    }
}

/// Plain evaluation.
pub fn evaluate<P: Program + ?Sized>(p: &P, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::<f64>::new();
    let input = g.leaf(x.clone());
    let out = p.build(&mut g, input)?;
    let y = g.value(out).clone();
    y.ensure_finite("evaluate")?;
    Ok(y)
}

/// Gradient of a scalar-valued program.
pub fn grad<P: Program + ?Sized>(f: &P, theta: &Tensor) -> Result<Tensor> {
    Ok(value_and_grad(f, theta)?.1)
}

/// Value and gradient of a scalar-valued program in one pass.
pub fn value_and_grad<P: Program + ?Sized>(f: &P, theta: &Tensor) -> Result<(f64, Tensor)> {
    theta.ensure_finite("grad input")?;
    let mut g = Graph::<f64>::new();
    let input = g.leaf(theta.clone());
    let out = f.build(&mut g, input)?;
    let y = g.value(out);
    if y.len() != 1 {
        return Err(Error::NonScalar(y.shape().to_vec()));
    }
    let value = y.data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let seed = Tensor::from_fn(y.shape(), |_| 1.0);
    let adj = g.backward(out, seed)?;
    let gr = adj.get(input, &g);
    gr.ensure_finite("gradient")?;
    Ok((value, gr))
}

/// `uᵀ·Jg(x)`, shaped like `x`.
pub fn vjp<P: Program + ?Sized>(gp: &P, x: &Tensor, u: &Tensor) -> Result<Tensor> {
    x.ensure_finite("vjp input")?;
    let mut g = Graph::<f64>::new();
    let input = g.leaf(x.clone());
    let out = gp.build(&mut g, input)?;
    if g.value(out).shape() != u.shape() {
        return Err(Error::Shape(format!(
            "vjp cotangent {:?} vs output {:?}",
            u.shape(),
            g.value(out).shape()
        )));
    }
    let adj = g.backward(out, u.clone())?;
    let r = adj.get(input, &g);
    r.ensure_finite("vjp")?;
    Ok(r)
}

/// `Jg(x)·v`, shaped like `g(x)`.
pub fn jvp<P: Program + ?Sized>(gp: &P, x: &Tensor, v: &Tensor) -> Result<Tensor> {
    Ok(value_and_jvp(gp, x, v)?.1)
}

/// `(g(x), Jg(x)·v)` from one forward pass with dual numbers.
pub fn value_and_jvp<P: Program + ?Sized>(gp: &P, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if x.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "jvp tangent {:?} vs input {:?}",
            v.shape(),
            x.shape()
        )));
    }
    x.ensure_finite("jvp input")?;
    let mut g = Graph::<Dual>::new();
    let dual = Tensor::from_fn(x.shape(), |k| Dual::new(x.data()[k], v.data()[k]));
    let input = g.leaf(dual);
    let out = gp.build(&mut g, input)?;
    let y = g.value(out);
    let value = y.map(|d| d.re);
    let tangent = y.map(|d| d.eps);
    value.ensure_finite("jvp value")?;
    tangent.ensure_finite("jvp")?;
    Ok((value, tangent))
}

/// `D²f(θ)·v` by forward-over-reverse: the reverse pass runs on dual numbers
/// seeded with tangent `v`, so the tangent part of the gradient is `Hv`.
pub fn hvp<P: Program + ?Sized>(f: &P, theta: &Tensor, v: &Tensor) -> Result<Tensor> {
    Ok(grad_and_hvp(f, theta, v)?.1)
}

/// `(∇f(θ), D²f(θ)·v)`.
pub fn grad_and_hvp<P: Program + ?Sized>(f: &P, theta: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    if theta.shape() != v.shape() {
        return Err(Error::Shape(format!(
            "hvp direction {:?} vs parameters {:?}",
            v.shape(),
            theta.shape()
        )));
    }
    theta.ensure_finite("hvp input")?;
    let mut g = Graph::<Dual>::new();
    let dual = Tensor::from_fn(theta.shape(), |k| Dual::new(theta.data()[k], v.data()[k]));
    let input = g.leaf(dual);
    let out = f.build(&mut g, input)?;
    let y = g.value(out);
    if y.len() != 1 {
        return Err(Error::NonScalar(y.shape().to_vec()));
    }
    let seed = Tensor::from_fn(y.shape(), |_| Dual::new(1.0, 0.0));
    let adj = g.backward(out, seed)?;
    let gr = adj.get(input, &g);
    let (grad, hv) = (gr.map(|d| d.re), gr.map(|d| d.eps));
    hv.ensure_finite("hvp")?;
    Ok((grad, hv))
}
