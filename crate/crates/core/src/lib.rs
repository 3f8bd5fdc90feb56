//! Nonlinear connections on the first-order jet bundle J¹(T, M).
//!
//! Scalar fields are evaluated with truncated multivariate Taylor arithmetic
//! ([`smooth`]), so every constructed coefficient is exact to rounding in its
//! derivatives. Configuration-level formulas are written in a small
//! expression language ([`exprlang`]).

pub mod connection;
pub mod exprlang;
pub mod geometry;
pub mod jet;
pub mod smooth;
pub mod harmonic;
