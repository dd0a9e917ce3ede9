//! Rational-filtered subspace iteration and shift-and-invert Arnoldi, with
//! the diagnostics needed to watch round-off from a pole sitting close to
//! an eigenvalue.

pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod filter;
pub mod spectrum;
pub mod subspace;
pub mod diagnostics;
pub mod phi;
pub mod arnoldi;
pub mod harness;
