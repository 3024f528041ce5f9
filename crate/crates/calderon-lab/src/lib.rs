//! Numerical laboratory for Calderón commutators, the Cauchy integral on
//! Lipschitz graphs and related multilinear singular integrals.

pub mod cli;
pub mod dyadic_model;
pub mod error;
pub mod experiments;
pub mod gridcore;
pub mod lp_decomp;
pub mod operators;
pub mod profiles;
pub mod quadrature;
pub mod stats;
pub mod symbols;

pub use error::{LabError, Result};
