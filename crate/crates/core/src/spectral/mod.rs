//! Matrix-free operators, power iteration and the curvature estimators built on them.

mod curvature;
mod jacobian;
mod operator;
mod power;

pub use curvature::{gauss_newton_norm, residual_term_norm, sharpness, GnMode, LossSetup};
pub use jacobian::{
    dense_input_jacobians, empirical_lipschitz, feature_norms, jacobian_lipschitz_estimate,
    jacobian_norms, JacobianNorms,
};
pub use operator::{gram, LinearOperator};
pub use power::{magnitude_norm, power_iteration, singular_norm, PowerOptions, SpectralResult};
