//! Exact finite-dimensional Koopman forms of nonlinear systems with inputs.
//!
//! The crate lifts polynomial (or black-box) dynamics through an observable
//! dictionary into `z+ = A z + B(x, u) u` (discrete time) or
//! `dz/dt = A z + B(x, u) u` (continuous time), recasts the result as a
//! linear parameter-varying model, fits LTI approximations from data, and
//! bounds the state error an LTI approximation incurs.

pub mod bounds;
pub mod edmd;
pub mod error;
pub mod io;
pub mod lifting;
pub mod linalg;
pub mod lpv;
pub mod quadrature;
pub mod sim;
pub mod systems;

pub use error::{KoopmanError, Result};
