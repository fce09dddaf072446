//! Curvature and sensitivity machinery for small, fully self-contained
//! neural networks: loss-Hessian sharpness, Gauss-Newton norms, input-output
//! Jacobian norms, Lipschitz-concentration bounds and batch-norm Jacobians.

pub mod autodiff;
pub mod bn;
pub mod cost;
pub mod distributions;
pub mod error;
pub mod network;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use cost::{CostKind, CostSpec};
pub use error::{Error, Result};
pub use network::{BnMode, Layer, LayerKind, LayeredNetwork};
pub use tensor::{Dual, Scalar, Tensor};
