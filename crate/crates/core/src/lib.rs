//! Thermodynamic formalism for piecewise-expanding interval maps with
//! neutral (indifferent) fixed points.
//!
//! The crate builds a first-return (induced) coding of a map with finitely
//! many full branches, computes two-sided brackets for the pressure of
//! geometric-arithmetic potential families over the induced system, extracts
//! equilibrium (Gibbs) statistics, and solves the nested systems that produce
//! Hausdorff dimension and Birkhoff-average spectra, including the entropy
//! plateau created by the neutral points.
//!
//! Everything downstream of [`map::MapModel`] is deterministic: parallel code
//! paths (feature `parallel`, on by default) produce bit-identical results to
//! the sequential fallback because all reductions run in a fixed order with
//! compensated summation.

// Validation deliberately writes `!(x > 0.0)`-style guards — the negation is
// what rejects NaN — and the CSR kernels index several parallel arrays by one
// position, where explicit indices read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod gibbs;
pub mod induced;
pub mod map;
pub mod numerics;
pub mod oracle;
pub mod pressure;
pub mod spectrum;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Engine version stamped into emitted records and cache keys.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Numeric knobs shared by the solvers. The defaults match the documented
/// contract of the library; tests pin them explicitly where it matters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Bisection tolerance on the pressure root `s = p(b, q)`.
    pub solve_s: f64,
    /// Relative Collatz–Wielandt gap at which power iteration stops.
    pub power_iter: f64,
    /// Hard cap on power-iteration sweeps.
    pub power_iter_max: usize,
    /// Margin added to `Λ_q` when bracketing `s` from below.
    pub lambda_margin: f64,
    /// Half-width of the geometric-rate band used by the finiteness check.
    pub fin_geo_band: f64,
    /// Half-width of the polynomial-exponent band used by the finiteness check.
    pub fin_poly_band: f64,
    /// Step used by finite-difference derivatives in `q` and `b`.
    pub fd_step: f64,
    /// Target residual for the spectrum defining system `p_α = 0`.
    pub spectrum_p: f64,
    /// Target residual for the spectrum optimality condition `∂q p_α = 0`.
    pub spectrum_dq: f64,
    /// Half-width of the membership band around the plateau boundary.
    pub plateau_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solve_s: 1e-8,
            power_iter: 1e-13,
            power_iter_max: 60_000,
            lambda_margin: 1e-6,
            fin_geo_band: 2e-2,
            fin_poly_band: 0.15,
            fd_step: 5e-2,
            spectrum_p: 5e-7,
            spectrum_dq: 1e-5,
            plateau_band: 5e-3,
        }
    }
}
