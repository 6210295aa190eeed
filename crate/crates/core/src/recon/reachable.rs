//! Ground-truth reachability: points of `U` whose forward gliding rays, or
//! some forward broken ray, reach `V`. Used to validate the blinded
//! detection and to compare the two sets.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::null_covectors;
use crate::dnsynth::Region;
use crate::flow::{boundary_null_geodesic, trace_broken, CurveWindow, FlowOptions, Window};
use crate::geometry::ManifoldModel;
use crate::ode::Tolerances;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachGrid {
    pub points: Vec<Vec<f64>>,
    /// Recoverable by gliding rays.
    pub gliding: Vec<bool>,
    /// Reached by some broken ray.
    pub broken: Vec<bool>,
}

impl ReachGrid {
    /// Every gliding-recoverable point is also broken-reachable.
    pub fn nested(&self) -> bool {
        self.gliding.iter().zip(&self.broken).all(|(g, b)| !g || *b)
    }

    pub fn count_gliding(&self) -> usize {
        self.gliding.iter().filter(|g| **g).count()
    }

    pub fn count_broken(&self) -> usize {
        self.broken.iter().filter(|b| **b).count()
    }
}

/// Future null covectors at a point (two for `n = 3`).
fn future_null_covectors(model: &ManifoldModel, xb: &[f64], count: usize) -> Vec<DVector<f64>> {
    let gi = model
        .boundary_metric(xb)
        .try_inverse()
        .expect("Lorentzian boundary metric");
    let t = model.boundary_timelike(xb);
    null_covectors(&gi, count)
        .into_iter()
        .map(|v| if v.dot(&t) > 0.0 { -v } else { v })
        .collect()
}

/// Whether the forward boundary null geodesic along covector `nu` meets `V`.
fn glides_into(
    model: &ManifoldModel,
    v: &Region,
    xb: &[f64],
    nu: &DVector<f64>,
    t_max: f64,
) -> bool {
    let gi = model
        .boundary_metric(xb)
        .try_inverse()
        .expect("Lorentzian boundary metric");
    let mut vel: Vec<f64> = (gi * nu).iter().copied().collect();
    if vel[0] < 0.0 {
        vel.iter_mut().for_each(|c| *c = -*c);
    }
    let window = CurveWindow {
        t_bound: t_max,
        s_max: 1e3,
        ds: 0.01,
    };
    let chart = model.chart();
    boundary_null_geodesic(model, xb, &vel, &window, Tolerances::default())
        .map(|path| path.iter().any(|(_, x, _)| v.contains(&chart, x)))
        .unwrap_or(false)
}

fn breaks_into(model: &ManifoldModel, v: &Region, xb: &[f64], covec: &[f64], t_max: f64) -> bool {
    let chart = model.chart();
    let Ok(src) = model.classify_covector(xb, covec) else {
        return false;
    };
    trace_broken(model, &src, &Window::until(t_max), &FlowOptions::default())
        .map(|tr| {
            tr.events
                .iter()
                .any(|e| v.contains(&chart, &e.covector.base))
        })
        .unwrap_or(false)
}

/// Indicator grids over `points` (chart points of `U`) for a time window
/// `t ≤ t_max`. `directions` null directions are sampled for `n ≥ 4`; broken
/// rays use a fan of future hyperbolic covectors around each of them.
pub fn reachable_sets(
    model: &ManifoldModel,
    v: &Region,
    points: &[Vec<f64>],
    directions: usize,
    t_max: f64,
) -> ReachGrid {
    let dim = model.dim();
    let rows: Vec<(bool, bool)> = points
        .par_iter()
        .map(|xb| {
            let nulls = future_null_covectors(model, xb, directions);
            let hits: Vec<bool> = nulls
                .iter()
                .map(|nu| glides_into(model, v, xb, nu, t_max))
                .collect();
            let gliding = if dim == 3 {
                hits.iter().all(|h| *h)
            } else {
                hits.iter().any(|h| *h)
            };
            let gbar = model.boundary_metric(xb);
            let t = model.boundary_timelike(xb);
            let mut tau = &gbar * &t;
            tau /= tau.norm();
            let broken = nulls.iter().any(|nu| {
                let nu = nu / nu.norm();
                [1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0].iter().any(|lam| {
                    let c: Vec<f64> = (&nu + &tau * *lam).iter().copied().collect();
                    breaks_into(model, v, xb, &c, t_max)
                })
            });
            (gliding, broken)
        })
        .collect();
    ReachGrid {
        points: points.to_vec(),
        gliding: rows.iter().map(|r| r.0).collect(),
        broken: rows.iter().map(|r| r.1).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::make_cylinder;
    use std::f64::consts::PI;

    #[test]
    fn short_windows_separate_the_sets() {
        let s = make_cylinder(3, 1.0, None, None).unwrap();
        let v = Region::new(vec![-1.0, PI - 0.5], vec![30.0, PI + 0.5]);
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.4]];
        // Gliding rays need t ≥ π - 0.5 to arrive; a diameter arrives at t = 2.
        let short = reachable_sets(&s.model, &v, &pts, 2, 2.3);
        assert!(short.nested());
        assert_eq!(short.count_gliding(), 0);
        assert_eq!(short.count_broken(), 2);
        let long = reachable_sets(&s.model, &v, &pts, 2, 6.0);
        assert_eq!(long.count_gliding(), 2);
        let empty = Region::new(vec![-1.0, PI - 0.5], vec![-0.5, PI + 0.5]);
        let none = reachable_sets(&s.model, &empty, &pts, 2, 6.0);
        assert_eq!(none.count_gliding() + none.count_broken(), 0);
    }
}
