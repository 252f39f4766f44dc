//! Closed-loop solver and verification suite for mean-field stochastic
//! linear-quadratic control problems.
//!
//! The pipeline integrates the coupled generalized Riccati equations for
//! `(P, Π)` ([`gre`]), decides regular solvability, solves the affine
//! backward equations ([`affine`]), and assembles the optimal closed-loop
//! strategy and value ([`synthesis`]). Independent checks live in
//! [`moments`], [`sim`] and [`verify`].

pub mod affine;
pub mod cli;
pub mod document;
pub mod error;
pub mod gre;
pub mod linalg;
pub mod moments;
pub mod ode;
pub mod presets;
pub mod problem;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use error::{MflqError, Result};
