//! Numerical experiments on hyperbolic maps of the two-torus.

pub mod basin;
pub mod error;
pub mod lab;
pub mod lyapunov;
pub mod markov;
pub mod torus;
pub mod weak_star;

pub use error::{Error, Result};
