//! Conformal heat flow of maps from a flat 2-torus into an embedded target.
//!
//! The state is a pair (f, u): f maps the torus into the unit sphere (or flat
//! space) and u is the log conformal factor of the evolving domain metric
//! g = e^{2u} g0. They are coupled by
//!
//!   f_t = e^{-2u} (Delta f + A_f(df, df)),       A_f(df, df) = |df|^2 f on S^n,
//!   u_t = b e^{-2u} |df|^2 - a,                  a, b > 0,
//!
//! which slows the map flow exactly where energy piles up, at the price of an
//! everywhere-shrinking metric. The crate provides the discretized flow, a
//! contraction-mapping construction of short-time solutions, energy/volume
//! diagnostics with concentration detection, and a batch CLI (`chf`).

pub mod cg;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fixed_point;
pub mod flow;
pub mod geometry;
pub mod rng;
pub mod scenario;
pub mod snapshot;

pub use error::ChfError;
