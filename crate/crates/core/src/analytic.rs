//! Analytic reference solutions used to validate simulation output.

pub mod riemann;
pub mod sedov;
