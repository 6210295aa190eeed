//! Reconstruction from blinded measurements.
//!
//! Everything here consumes a [`ProbeOracle`](crate::dnsynth::ProbeOracle)
//! or a [`BlindedView`](crate::dnsynth::BlindedView) and the boundary chart
//! coordinates. Ground-truth models appear only in the `validate_*` helpers
//! and in tests.

mod conformal;
mod factor;
mod mates;
mod metric;
mod one_form;
mod orientation;
mod reachable;
mod recoverable;
mod weak_lens;

pub use conformal::*;
pub use factor::*;
pub use mates::*;
pub use metric::*;
pub use one_form::*;
pub use orientation::*;
pub use reachable::*;
pub use recoverable::*;
pub use weak_lens::*;

use thiserror::Error;

use crate::dnsynth::SynthError;
use crate::geometry::BoundaryChart;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("degenerate direction set (second singular value {0:e})")]
    Degenerate(f64),
    #[error("too few directions: {found} < {needed}")]
    TooFewDirections { needed: usize, found: usize },
    #[error("no probe reaches the target {0:?}")]
    NoCoverage(Vec<f64>),
    #[error("mate search failed: {0}")]
    MateSearch(String),
    #[error("covector sum is not hyperbolic at {0:?}")]
    NotHyperbolic(Vec<f64>),
    #[error("phase unwrap ambiguity at τ = {0}")]
    PhaseUnwrap(f64),
    #[error("record sets differ between the two measurement runs at probe {0}")]
    RecordMismatch(usize),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type ReconResult<T> = Result<T, ReconError>;

/// Boundary chart used only for its periodic-coordinate bookkeeping.
pub(crate) fn chart_for(dim: usize) -> BoundaryChart {
    BoundaryChart { dim, radius: 1.0 }
}

/// Phase-space difference `a - b` of two `(x′, ξ′)` vectors with the periodic
/// base coordinate wrapped.
pub(crate) fn phase_diff(chart: &BoundaryChart, a: &[f64], b: &[f64]) -> Vec<f64> {
    let m = chart.dim - 1;
    let mut d = chart.wrapped_diff(&a[..m], &b[..m]);
    d.extend(a[m..].iter().zip(&b[m..]).map(|(x, y)| x - y));
    d
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
