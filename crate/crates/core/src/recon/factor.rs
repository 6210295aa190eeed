//! Conformal-factor relation between two measurement runs.
//!
//! For a representative `h` of the recovered conformal class, each record
//! yields `D = 4 log(|Q| / (2 (ξ_n^h η_n^h)^{1/2} |h(x′)/h(y′)|^{1/4}))`,
//! which equals `(n-2)φ(x′) - nφ(y′)` when `ḡ = e^φ h`. Two gauge-related
//! runs produce the same `D` on every record.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{chart_for, ReconError, ReconResult};
use crate::dnsynth::{BlindedView, Hit};
use crate::flow::{boundary_null_geodesic, CurveWindow};
use crate::geometry::ManifoldModel;
use crate::ode::Tolerances;

/// Conformal representative: any metric in the recovered class.
pub type Representative<'a> = &'a (dyn Fn(&[f64]) -> DMatrix<f64> + Sync);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub probe: usize,
    pub hit: usize,
    pub d_first: f64,
    pub d_second: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub rows: Vec<RelationRow>,
    pub max_gap: f64,
    pub flagged: bool,
}

fn normal_h(h: &DMatrix<f64>, covec: &[f64]) -> f64 {
    let v = DVector::from_column_slice(covec);
    let hi = h
        .clone()
        .try_inverse()
        .expect("representative must be invertible");
    (-v.dot(&(hi * &v))).max(0.0).sqrt()
}

/// `D` of one record against the representative `h`.
pub fn relation_value(h: Representative<'_>, source: (&[f64], &[f64]), hit: &Hit) -> f64 {
    let (h0, hk) = (h(source.0), h(&hit.base));
    let ratio = (h0.determinant() / hk.determinant()).abs();
    let denom =
        2.0 * (normal_h(&h0, source.1) * normal_h(&hk, &hit.covec)).sqrt() * ratio.powf(0.25);
    4.0 * (hit.q().norm() / denom).ln()
}

fn same_hit(a: &Hit, b: &Hit, tol: f64) -> bool {
    let db = chart_for(a.base.len() + 1).wrapped_diff(&a.base, &b.base);
    db.iter().all(|d| d.abs() <= tol)
        && a.covec
            .iter()
            .zip(&b.covec)
            .all(|(x, y)| (x - y).abs() <= tol)
}

/// Per-record `|D₁ - D₂|`; records are matched by probe and hit position and
/// must agree in their hit covectors. `flag` marks gaps above `flag_at`.
pub fn check_conformal_relation(
    first: &BlindedView,
    second: &BlindedView,
    h: Representative<'_>,
    match_tol: f64,
    flag_at: f64,
) -> ReconResult<RelationReport> {
    if first.probes.len() != second.probes.len() {
        return Err(ReconError::RecordMismatch(
            first.probes.len().min(second.probes.len()),
        ));
    }
    let mut rows = vec![];
    for (i, (p1, p2)) in first.probes.iter().zip(&second.probes).enumerate() {
        if p1.source != p2.source || p1.hits.len() != p2.hits.len() {
            return Err(ReconError::RecordMismatch(i));
        }
        for (j, (a, b)) in p1.hits.iter().zip(&p2.hits).enumerate() {
            if !same_hit(a, b, match_tol) {
                return Err(ReconError::RecordMismatch(i));
            }
            let src = (p1.source.base.as_slice(), p1.source.covec.as_slice());
            let d_first = relation_value(h, src, a);
            let d_second = relation_value(h, src, b);
            rows.push(RelationRow {
                probe: i,
                hit: j,
                d_first,
                d_second,
                gap: (d_first - d_second).abs(),
            });
        }
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(RelationReport {
        rows,
        max_gap,
        flagged: max_gap > flag_at,
    })
}

/// Per-record `|D - ((n-2)φ(x′) - nφ(y′))|` for a run whose metric is
/// `e^φ h`. Needs the true `φ`, so it belongs to validation only.
pub fn equation_residuals(
    view: &BlindedView,
    h: Representative<'_>,
    phi: &dyn Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let n = view.dim as f64;
    view.probes
        .iter()
        .flat_map(|p| {
            let src = (p.source.base.as_slice(), p.source.covec.as_slice());
            p.hits.iter().map(move |hit| {
                let d = relation_value(h, src, hit);
                (d - ((n - 2.0) * phi(src.0) - n * phi(&hit.base))).abs()
            })
        })
        .collect()
}

/// `φ` with `ḡ₂ = e^φ ḡ₁` at a boundary point (from the volume ratio).
pub fn log_conformal_ratio(first: &ManifoldModel, second: &ManifoldModel, xb: &[f64]) -> f64 {
    let m = xb.len() as f64;
    (second.boundary_metric(xb).determinant() / first.boundary_metric(xb).determinant())
        .abs()
        .ln()
        / m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstancySample {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    /// `(n-2)φ(z′) - nφ(x′)`.
    pub violation: f64,
}

/// Samples boundary null geodesics of `first` starting at `starts` (points
/// of `U`) and evaluates `(n-2)φ(z′) - nφ(x′)` wherever they cross `V`.
pub fn validate_local_constancy(
    first: &ManifoldModel,
    second: &ManifoldModel,
    v: &crate::dnsynth::Region,
    starts: &[Vec<f64>],
    t_max: f64,
) -> Vec<ConstancySample> {
    let n = first.dim() as f64;
    let chart = first.chart();
    let tol = Tolerances::default().with_rtol(1e-12);
    let mut out = vec![];
    for z in starts {
        let phi_z = log_conformal_ratio(first, second, z);
        for mut dir in first.null_tangents(z, 4) {
            if dir[0] < 0.0 {
                dir.iter_mut().for_each(|c| *c = -*c);
            }
            let window = CurveWindow {
                t_bound: t_max,
                s_max: 1e3,
                ds: 0.02,
            };
            let Ok(path) = boundary_null_geodesic(first, z, &dir, &window, tol) else {
                continue;
            };
            for (_, x, _) in path.iter().filter(|(_, x, _)| v.contains(&chart, x)) {
                let phi_x = log_conformal_ratio(first, second, x);
                out.push(ConstancySample {
                    from: z.clone(),
                    to: x.clone(),
                    violation: (n - 2.0) * phi_z - n * phi_x,
                });
            }
        }
    }
    out
}
