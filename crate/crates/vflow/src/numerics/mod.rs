//! Numeric plumbing: stable scalar primitives, a minimal tensor, the
//! deterministic RNG, small dense linear algebra, and the independent
//! oracles (finite differences, numeric Jacobian log-dets, quadrature)
//! that the analytic code is tested against.

pub(crate) mod linalg;
mod oracle;
mod rng;
mod stable;
mod tensor;

pub use linalg::{lu_factor, Lu};
pub use oracle::{finite_diff_gradient, numeric_jacobian, numeric_jacobian_logdet, quadrature_1d};
pub use rng::{Rng, RngState, RNG_ALGORITHM};
pub use stable::{
    log_normal_pdf, log_sigmoid, logit, logsumexp, rel_err, sigmoid, sigmoid_prime, softplus,
};
pub use tensor::Tensor;
