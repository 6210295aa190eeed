//! Recoverable glancing directions and points, found from probe classes alone.
//!
//! At a point `x′` of `U` a fan of unit covector directions is classified.
//! Glancing directions sit where the class switches between `Discrete`
//! (hyperbolic, reaching `V`) and `Empty` (elliptic); they are located by
//! bisection and accepted when offsets toward the `Discrete` side make the
//! hits accumulate along a curve in `T*V`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chart_for, fit_conformal_class, ConformalClassEstimate, ReconError, ReconResult};
use crate::dnsynth::{
    accumulates_on_curve, hit_point, CurveSchedule, ProbeClass, ProbeOracle, Region,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScan {
    /// Samples per half circle of directions.
    pub samples: usize,
    /// Families (half circles through `-dt`) for `n ≥ 4`.
    pub families: usize,
    /// Largest tilt of a family away from the last boundary coordinate.
    pub family_spread: f64,
    /// Angular tolerance of the bisection.
    pub bisect_tol: f64,
    /// Angular offsets into the `Discrete` side used to confirm a curve.
    pub confirm: CurveSchedule,
    /// Directions needed before a cone is fitted in `n ≥ 4`.
    pub min_directions: usize,
}

impl Default for DirectionScan {
    fn default() -> Self {
        DirectionScan {
            samples: 24,
            families: 7,
            family_spread: 0.8,
            bisect_tol: 1e-6,
            confirm: CurveSchedule::default(),
            min_directions: 5,
        }
    }
}

/// One recovered glancing direction at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlancingDirection {
    /// Euclidean-unit covector.
    pub covec: Vec<f64>,
    /// Unit step into the hyperbolic side (tangent to the direction circle).
    pub inward: Vec<f64>,
    /// Finest confirmation hits in `V` (normalized base, unit covector).
    pub trace_in_v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecovery {
    pub point: Vec<f64>,
    pub directions: Vec<GlancingDirection>,
    /// A `Discrete` covector seen during the scan (timelike).
    pub timelike_hint: Option<Vec<f64>>,
    /// Candidates whose offsets did not accumulate on a curve.
    pub rejected: usize,
    pub recoverable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoverableSet {
    pub points: Vec<PointRecovery>,
}

impl RecoverableSet {
    pub fn recoverable_points(&self) -> impl Iterator<Item = &PointRecovery> {
        self.points.iter().filter(|p| p.recoverable)
    }
}

/// Direction circle of family `j`: `α ↦ (cos α, sin α · e)` with a unit
/// spatial vector `e`. Returns `e`.
fn family_axis(dim: usize, scan: &DirectionScan, j: usize) -> Vec<f64> {
    let m = dim - 1;
    if m == 2 {
        return vec![1.0];
    }
    let f = scan.families.max(1);
    let psi = if f == 1 {
        0.0
    } else {
        -scan.family_spread + 2.0 * scan.family_spread * j as f64 / (f - 1) as f64
    };
    // First spatial slot gets sin ψ, the last gets cos ψ.
    let mut e = vec![0.0; m - 1];
    e[0] = psi.sin();
    e[m - 2] += psi.cos();
    e
}

fn direction(axis: &[f64], alpha: f64) -> Vec<f64> {
    std::iter::once(alpha.cos())
        .chain(axis.iter().map(|e| alpha.sin() * e))
        .collect()
}

fn derivative(axis: &[f64], alpha: f64) -> Vec<f64> {
    std::iter::once(-alpha.sin())
        .chain(axis.iter().map(|e| alpha.cos() * e))
        .collect()
}

/// Scans, bisects and confirms the glancing directions at one point.
pub fn scan_point(
    oracle: &dyn ProbeOracle,
    v: &Region,
    point: &[f64],
    scan: &DirectionScan,
) -> ReconResult<PointRecovery> {
    let dim = oracle.dim();
    let chart = chart_for(dim);
    let families = if dim == 3 { 1 } else { scan.families };
    let mut dirs = vec![];
    let mut hint = None;
    let mut rejected = 0;
    let class = |axis: &[f64], a: f64| oracle.probe_class(point, &direction(axis, a));
    for j in 0..families {
        let axis = family_axis(dim, scan, j);
        let alphas: Vec<f64> = (0..scan.samples)
            .map(|i| {
                std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * (i as f64 + 0.5) / scan.samples as f64
            })
            .collect();
        let classes = alphas
            .iter()
            .map(|&a| class(&axis, a))
            .collect::<Result<Vec<_>, _>>()?;
        for i in 0..alphas.len() {
            if classes[i] == ProbeClass::Discrete && hint.is_none() {
                hint = Some(direction(&axis, alphas[i]));
            }
        }
        for i in 0..alphas.len() - 1 {
            let (c0, c1) = (classes[i], classes[i + 1]);
            let (mut disc, mut empty) = match (c0, c1) {
                (ProbeClass::Discrete, ProbeClass::Empty) => (alphas[i], alphas[i + 1]),
                (ProbeClass::Empty, ProbeClass::Discrete) => (alphas[i + 1], alphas[i]),
                _ => continue,
            };
            while (disc - empty).abs() > scan.bisect_tol {
                let mid = 0.5 * (disc + empty);
                match class(&axis, mid)? {
                    ProbeClass::Discrete => disc = mid,
                    _ => empty = mid,
                }
            }
            let edge = 0.5 * (disc + empty);
            let side = (disc - empty).signum();
            let mut levels = vec![];
            for d in &scan.confirm.offsets {
                let resp = oracle.probe(point, &direction(&axis, edge + side * d))?;
                levels.push(
                    resp.hits
                        .iter()
                        .map(|h| hit_point(&chart, v, &h.base, &h.covec))
                        .collect::<Vec<_>>(),
                );
            }
            if accumulates_on_curve(&levels, &scan.confirm) {
                let inward: Vec<f64> = derivative(&axis, edge).iter().map(|x| side * x).collect();
                let mut trace = levels.pop().unwrap_or_default();
                trace.sort_by(|a, b| a[0].total_cmp(&b[0]));
                dirs.push(GlancingDirection {
                    covec: direction(&axis, edge),
                    inward,
                    trace_in_v: trace,
                });
            } else {
                rejected += 1;
            }
        }
    }
    let recoverable = if dim == 3 {
        dirs.len() >= 2
    } else {
        !dirs.is_empty()
    };
    Ok(PointRecovery {
        point: point.to_vec(),
        directions: dirs,
        timelike_hint: hint,
        rejected,
        recoverable,
    })
}

/// Recoverable directions and points over a set of sample points of `U`.
pub fn detect_recoverable(
    oracle: &dyn ProbeOracle,
    v: &Region,
    points: &[Vec<f64>],
    scan: &DirectionScan,
) -> ReconResult<RecoverableSet> {
    let points = points
        .par_iter()
        .map(|p| scan_point(oracle, v, p, scan))
        .collect::<ReconResult<Vec<_>>>()?;
    Ok(RecoverableSet { points })
}

/// Cone fit at a recovered point. `n = 3` uses the timelike hint for the
/// sign; higher dimensions need `scan.min_directions` directions.
pub fn conformal_class_at(
    rec: &PointRecovery,
    min_directions: usize,
) -> ReconResult<ConformalClassEstimate> {
    let dirs: Vec<Vec<f64>> = rec.directions.iter().map(|d| d.covec.clone()).collect();
    let m = rec.point.len();
    if m > 2 && dirs.len() < min_directions {
        return Err(ReconError::TooFewDirections {
            needed: min_directions,
            found: dirs.len(),
        });
    }
    let hint = if m == 2 {
        rec.timelike_hint.as_deref()
    } else {
        None
    };
    fit_conformal_class(&rec.point, &dirs, hint)
}
