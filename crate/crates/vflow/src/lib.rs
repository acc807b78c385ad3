//! Density estimation with augmented normalizing flows.
//!
//! The library models a D_X-dimensional data distribution by pairing x with a
//! learned auxiliary variable z in R^{D_Z}: a joint flow p(x, z) and a
//! conditional flow q(z|x) are trained together on the evidence lower bound
//!
//!   log p(x) >= E_{q(z|x)} [ log p(x, z) - log q(z|x) ],
//!
//! and the marginal likelihood is estimated at evaluation time by importance
//! sampling with q as the proposal. Discrete data is handled by a third flow
//! r(u|x) that dequantizes x into x + u, u in (0,1)^{D_X}.
//!
//! Everything is written against hand-derived analytic gradients; `numerics`
//! carries the independent oracles (finite differences, numeric Jacobians,
//! quadrature) the test suites check them against.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
