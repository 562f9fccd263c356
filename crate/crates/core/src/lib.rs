//! Finite-resolution ultrafunction calculus.
//!
//! The crate emulates a hyperfinite grid by a dyadically nested chain of box
//! grids. On each level it provides a pointwise integral, a summation-by-parts
//! derivative, density functions and perimeters, and a quasi-Newton minimizer
//! whose per-level results form a net that is classified level by level.

pub mod calculus;
pub mod error;
pub mod grid;
pub mod io;
pub mod measure;
pub mod net;
pub mod par;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
