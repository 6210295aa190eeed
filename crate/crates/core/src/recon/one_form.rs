//! Tangential magnetic potential from phases of the transfer coefficients.
//!
//! For two sources `x′` and `z′` of one trajectory, the quotient of the
//! coefficients they produce at a common hit is `(-1)^{|k|} e^{i∫A}` with the
//! integral taken along the trajectory between them; sign conventions and
//! the `V`-side factors cancel. Near a glancing direction the trajectory
//! approaches the boundary null geodesic, so the phase grows like `A(v)·τ`
//! in the geodesic parameter `τ`. Slopes at three offsets are combined by
//! Richardson extrapolation; slopes along spanning null directions give `A`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    chart_for, find_chain, offset_covector, Chain, ConformalClassEstimate, MateSearch,
    PointRecovery, ReconError, ReconResult, TimeFunction,
};
use crate::dnsynth::{ProbeOracle, Region};
use crate::geometry::ManifoldModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneFormSchedule {
    /// Largest offset; the others are `ε₀/2` and `ε₀/4`.
    pub eps0: f64,
    /// Only chain members with `|τ| ≤ tau_max` enter the slope fit.
    pub tau_max: f64,
    pub per_side: usize,
    pub search: MateSearch,
}

impl Default for OneFormSchedule {
    fn default() -> Self {
        OneFormSchedule {
            eps0: 1e-3,
            tau_max: 0.2,
            per_side: 6,
            search: MateSearch::default(),
        }
    }
}

/// Phase samples and fitted slope at one offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLevel {
    pub eps: f64,
    /// `(τ, unwrapped phase)` pairs, ordered by `τ`.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub fit_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalPotential {
    /// Future-pointing null tangent `v` of the gliding ray (by the time function).
    pub tangent: Vec<f64>,
    pub levels: Vec<PhaseLevel>,
    /// Richardson value of `A(v)`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneFormRecovery {
    pub point: Vec<f64>,
    pub directions: Vec<DirectionalPotential>,
    /// Chart components of `A` on boundary tangents.
    pub components: Vec<f64>,
}

/// `(-1)^{|k|} Q_x / Q_z` phases against the chain parameter `τ`.
pub fn chain_phases(
    chain: &Chain,
    origin: &[f64],
    tangent: &[f64],
) -> ReconResult<Vec<(f64, f64)>> {
    let m = origin.len();
    let chart = chart_for(m + 1);
    let i0 = chain
        .members
        .iter()
        .position(|(i, _)| *i == 0)
        .expect("seed in chain");
    let q0 = Complex64::new(chain.q_at_reference[i0].0, chain.q_at_reference[i0].1);
    let vv: f64 = tangent.iter().map(|v| v * v).sum();
    let mut out: Vec<(f64, f64)> = chain
        .members
        .iter()
        .zip(&chain.q_at_reference)
        .map(|((k, z), (re, im))| {
            let d = chart.wrapped_diff(&z[..m], origin);
            let tau = d.iter().zip(tangent).map(|(a, b)| a * b).sum::<f64>() / vv;
            let parity = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (tau, (q0 / Complex64::new(*re, *im) * parity).arg())
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Nearest-branch continuation outward from τ = 0.
    let c = out.iter().position(|p| p.0 == 0.0).unwrap_or(0);
    for dir in [1isize, -1] {
        let mut j = c as isize + dir;
        while j >= 0 && (j as usize) < out.len() {
            let prev = out[(j - dir) as usize].1;
            let cur = &mut out[j as usize];
            let jump = crate::geometry::wrap_angle(cur.1 - prev);
            if jump.abs() > std::f64::consts::FRAC_PI_2 {
                return Err(ReconError::PhaseUnwrap(cur.0));
            }
            cur.1 = prev + jump;
            j += dir;
        }
    }
    Ok(out)
}

/// Least-squares `Φ = aτ + bτ²` through the origin; returns `(a, rms residual)`.
pub fn slope_through_origin(samples: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<&(f64, f64)> = samples.iter().filter(|p| p.0 != 0.0).collect();
    if pts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if pts.len() == 1 {
        return (pts[0].1 / pts[0].0, 0.0);
    }
    let a = DMatrix::from_fn(pts.len(), 2, |i, j| pts[i].0.powi(j as i32 + 1));
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .expect("svd solve");
    let res = (&a * &sol - &b).norm() / (pts.len() as f64).sqrt();
    (sol[0], res)
}

/// Two-level Richardson value from slopes at `ε, ε/2, ε/4`.
pub fn richardson(a_eps: f64, a_half: f64, a_quarter: f64) -> f64 {
    (8.0 * a_quarter - 6.0 * a_half + a_eps) / 3.0
}

/// `A(v)` along one recovered glancing direction of a point.
pub fn directional_potential(
    oracle: &dyn ProbeOracle,
    u: &Region,
    rec: &PointRecovery,
    dir: usize,
    class: &ConformalClassEstimate,
    time: &TimeFunction,
    schedule: &OneFormSchedule,
) -> ReconResult<DirectionalPotential> {
    let d = &rec.directions[dir];
    let q = class.q();
    let mut v: Vec<f64> = (-(&q * DVector::from_column_slice(&d.covec)))
        .iter()
        .copied()
        .collect();
    if time.rate(&v) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mut levels = vec![];
    for j in 0..3 {
        let eps = schedule.eps0 / f64::powi(2.0, j);
        let seed: Vec<f64> = rec
            .point
            .iter()
            .copied()
            .chain(offset_covector(&d.covec, &d.inward, eps))
            .collect();
        let chain = find_chain(
            oracle,
            u,
            &seed,
            schedule.per_side,
            &schedule.search,
            &|_| true,
        )?;
        let samples: Vec<(f64, f64)> = chain_phases(&chain, &rec.point, &v)?
            .into_iter()
            .filter(|p| p.0.abs() <= schedule.tau_max)
            .collect();
        let (slope, fit_residual) = slope_through_origin(&samples);
        if !slope.is_finite() {
            return Err(ReconError::MateSearch(format!(
                "no chain member within τ ≤ {}",
                schedule.tau_max
            )));
        }
        levels.push(PhaseLevel {
            eps,
            samples,
            slope,
            fit_residual,
        });
    }
    let value = richardson(levels[0].slope, levels[1].slope, levels[2].slope);
    Ok(DirectionalPotential {
        tangent: v,
        levels,
        value,
    })
}

/// Solves `A(v_d) = a_d` over the recovered directions of a point.
pub fn recover_one_form(
    oracle: &dyn ProbeOracle,
    u: &Region,
    rec: &PointRecovery,
    class: &ConformalClassEstimate,
    schedule: &OneFormSchedule,
) -> ReconResult<OneFormRecovery> {
    let m = rec.point.len();
    if rec.directions.len() < m {
        return Err(ReconError::TooFewDirections {
            needed: m,
            found: rec.directions.len(),
        });
    }
    let time = TimeFunction::from_class(class);
    let dirs = (0..rec.directions.len())
        .map(|d| directional_potential(oracle, u, rec, d, class, &time, schedule))
        .collect::<ReconResult<Vec<_>>>()?;
    let a = DMatrix::from_fn(dirs.len(), m, |i, j| dirs[i].tangent[j]);
    let b = DVector::from_iterator(dirs.len(), dirs.iter().map(|d| d.value));
    let svd = a.svd(true, true);
    let gap = svd.singular_values.min();
    if gap < 1e-8 {
        return Err(ReconError::Degenerate(gap));
    }
    let comp = svd.solve(&b, 1e-14).expect("svd solve");
    Ok(OneFormRecovery {
        point: rec.point.clone(),
        directions: dirs,
        components: comp.iter().copied().collect(),
    })
}

/// Chart components of the true tangential potential `EᵀA` at a boundary point.
pub fn tangential_potential(model: &ManifoldModel, xb: &[f64]) -> Vec<f64> {
    let chart = model.chart();
    let x = chart.embed(xb);
    let mut a = vec![0.0; model.dim()];
    model.one_form.eval(&x, &mut a);
    (chart.jacobian(xb).transpose() * DVector::from_vec(a))
        .iter()
        .copied()
        .collect()
}
