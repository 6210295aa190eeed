//! Boundary metric on the far side from a prior on the near side.
//!
//! With `ḡ` known at the source, `|Q|` of a hit isolates
//! `S(η′) = -|ḡ(y′)|^{-1} ḡ^{-1}(η′, η′)` at the hit. Polarizing over a basis
//! `ζ^a` and the sums `ζ^a + ζ^b` gives `C = |ḡ|^{-1} ḡ^{-1}`, and
//! `ḡ = (|det C|^{-1/n} C)^{-1}`. The dual case (prior on the hit side,
//! targets at the source) uses the exponent `1/(n-2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    chart_for, hit_phase, norm, phase_diff, phase_point, solve_for_hit, MateSearch, ReconError,
    ReconResult,
};
use crate::dnsynth::{BlindedView, ProbeOracle};

const SEED_ATTEMPTS: usize = 8;

/// Known boundary metric on one side.
pub type MetricPrior<'a> = &'a (dyn Fn(&[f64]) -> DMatrix<f64> + Sync);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecovery {
    pub point: Vec<f64>,
    pub metric: Vec<Vec<f64>>,
    /// `|ḡ|^{-1} ḡ^{-1}` (or `|ḡ| ḡ^{-1}` in the dual case) from polarization.
    pub polarized: Vec<Vec<f64>>,
    /// `|det C|^{-1/n}` (or `^{1/(n-2)}`), to be compared with `|ḡ|`.
    pub volume_from_det: f64,
    /// `|det ḡ|` of the recovered metric.
    pub volume: f64,
    /// Sources used, one per polarization covector.
    pub sources: Vec<Vec<f64>>,
    pub max_hit_residual: f64,
}

impl MetricRecovery {
    pub fn metric_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.metric)
    }

    /// `| |det C|^{-1/n} - |ḡ| | / |ḡ|`.
    pub fn determinant_identity_gap(&self) -> f64 {
        (self.volume_from_det - self.volume).abs() / self.volume
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `ξ_n` of a covector with respect to a known metric.
fn normal_from_prior(g: &DMatrix<f64>, covec: &[f64]) -> ReconResult<f64> {
    let gi = g
        .clone()
        .try_inverse()
        .ok_or_else(|| ReconError::Degenerate(0.0))?;
    let v = DVector::from_column_slice(covec);
    let q = v.dot(&(gi * &v));
    if q >= 0.0 {
        return Err(ReconError::NotHyperbolic(covec.to_vec()));
    }
    Ok((-q).sqrt())
}

/// Polarization covectors: the basis followed by all pairwise sums.
pub fn polarization_set(basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = basis.to_vec();
    for a in 0..basis.len() {
        for b in a + 1..basis.len() {
            out.push(basis[a].iter().zip(&basis[b]).map(|(x, y)| x + y).collect());
        }
    }
    out
}

/// Assembles `C` from `B(η) = -S(η)` on the polarization set.
pub fn polarize(basis: &[Vec<f64>], values: &[f64]) -> DMatrix<f64> {
    let m = basis.len();
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        gram[(a, a)] = values[a];
    }
    let mut k = m;
    for a in 0..m {
        for b in a + 1..m {
            let v = 0.5 * (values[k] - values[a] - values[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
            k += 1;
        }
    }
    // gram = Z C Zᵀ with the basis covectors as rows of Z.
    let z = DMatrix::from_fn(m, m, |i, j| basis[i][j]);
    let zi = z.try_inverse().expect("basis must be invertible");
    &zi * gram * zi.transpose()
}

/// Best starting source for a target hit: the stored probe whose hit is
/// closest in (base, unit covector), rescaled by homogeneity.
pub fn initial_source(view: &BlindedView, target: &[f64]) -> Option<Vec<f64>> {
    initial_sources(view, target, 1).into_iter().next()
}

/// Up to `count` distinct probe sources, ranked by how close their nearest
/// hit comes to `target` once covectors are normalized. Each is rescaled so
/// its hit covector has the target's magnitude.
pub fn initial_sources(view: &BlindedView, target: &[f64], count: usize) -> Vec<Vec<f64>> {
    let m = view.dim - 1;
    let chart = chart_for(view.dim);
    let unit = |c: &[f64]| -> Vec<f64> {
        let n = norm(c);
        c.iter().map(|x| x / n).collect()
    };
    let t_unit = phase_point(&target[..m], &unit(&target[m..]));
    let mut ranked: Vec<(f64, Vec<f64>)> = view
        .probes
        .iter()
        .filter_map(|p| {
            p.hits
                .iter()
                .map(|h| {
                    let d = norm(&phase_diff(
                        &chart,
                        &phase_point(&h.base, &unit(&h.covec)),
                        &t_unit,
                    ));
                    let scale = norm(&target[m..]) / norm(&h.covec);
                    (
                        d,
                        phase_point(
                            &p.source.base,
                            &p.source.covec.iter().map(|c| c * scale).collect::<Vec<_>>(),
                        ),
                    )
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    ranked.into_iter().take(count).map(|r| r.1).collect()
}

/// `ḡ = (|det C|^{scale_exp} C)^{-1}`, with `|det C|^{volume_exp}` as the
/// volume predicted by the determinant identity.
fn finish(
    point: &[f64],
    c: DMatrix<f64>,
    scale_exp: f64,
    volume_exp: f64,
    sources: Vec<Vec<f64>>,
    res: f64,
) -> ReconResult<MetricRecovery> {
    let det = c.determinant().abs();
    let cometric = &c * det.powf(scale_exp);
    let metric = cometric.try_inverse().ok_or(ReconError::Degenerate(det))?;
    Ok(MetricRecovery {
        point: point.to_vec(),
        volume: metric.determinant().abs(),
        metric: to_rows(&metric),
        polarized: to_rows(&c),
        volume_from_det: det.powf(volume_exp),
        sources,
        max_hit_residual: res,
    })
}

/// `ḡ(y′)` for `y′` over `V` from a prior on `U`. Each polarization covector
/// `η′` at `y′` is reached by a Newton-corrected probe.
pub fn recover_metric_with_prior(
    oracle: &dyn ProbeOracle,
    view: &BlindedView,
    prior: MetricPrior<'_>,
    target: &[f64],
    basis: &[Vec<f64>],
    search: &MateSearch,
) -> ReconResult<MetricRecovery> {
    let n = oracle.dim();
    let m = n - 1;
    let set = polarization_set(basis);
    let mut values = vec![];
    let mut sources = vec![];
    let mut worst: f64 = 0.0;
    for eta in &set {
        let goal = phase_point(target, eta);
        let guesses = initial_sources(view, &goal, SEED_ATTEMPTS);
        if guesses.is_empty() {
            return Err(ReconError::NoCoverage(goal.clone()));
        }
        // A seed whose solution leaves U stalls; fall back to the next one.
        let mut attempt = Err(ReconError::NoCoverage(goal.clone()));
        for guess in &guesses {
            attempt = solve_for_hit(oracle, guess, &goal, search);
            if attempt.is_ok() {
                break;
            }
        }
        let sol = attempt?;
        let hit = &sol.response.hits[sol.hit];
        worst = worst.max(norm(&phase_diff(&chart_for(n), &hit_phase(hit), &goal)));
        let (x, xi) = (&sol.source[..m], &sol.source[m..]);
        let g0 = prior(x);
        let xn = normal_from_prior(&g0, xi)?;
        let s = (hit.q().norm() / (2.0 * xn.sqrt() * g0.determinant().abs().powf(0.25))).powi(4);
        values.push(-s);
        sources.push(sol.source);
    }
    // values hold B = -S = C(η, η).
    let c = polarize(basis, &values);
    finish(target, c, -1.0 / n as f64, -1.0 / n as f64, sources, worst)
}

/// Dual direction: `ḡ(x′)` over `U` from a prior on `V`. The basis covectors
/// are probed directly at `x′`; the first hit of each is used.
pub fn recover_metric_dual(
    oracle: &dyn ProbeOracle,
    prior_on_v: MetricPrior<'_>,
    point: &[f64],
    basis: &[Vec<f64>],
) -> ReconResult<MetricRecovery> {
    let n = oracle.dim();
    let set = polarization_set(basis);
    let mut values = vec![];
    let mut sources = vec![];
    for xi in &set {
        let resp = oracle.probe(point, xi)?;
        let hit = resp
            .hits
            .iter()
            .min_by(|a, b| a.base[0].total_cmp(&b.base[0]))
            .ok_or_else(|| ReconError::NoCoverage(phase_point(point, xi)))?;
        let gk = prior_on_v(&hit.base);
        let hn = normal_from_prior(&gk, &hit.covec)?;
        let s = (hit.q().norm() / (2.0 * hn.sqrt() * gk.determinant().abs().powf(-0.25))).powi(4);
        values.push(-s);
        sources.push(phase_point(point, xi));
    }
    // Here B = |ḡ| ḡ^{-1} at the source; |det B| = |ḡ|^{n-2}.
    let c = polarize(basis, &values);
    let e = 1.0 / (n as f64 - 2.0);
    finish(point, c, -e, e, sources, 0.0)
}

/// Largest entrywise error relative to the largest entry of `truth`.
pub fn relative_metric_error(recovered: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (recovered - truth).abs().max() / truth.abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarization_recovers_a_form() {
        let c = DMatrix::from_row_slice(2, 2, &[-1.3, 0.2, 0.2, 0.9]);
        let basis = vec![vec![-1.0, 0.1], vec![-1.0, -0.1]];
        let vals: Vec<f64> = polarization_set(&basis)
            .iter()
            .map(|e| {
                let v = DVector::from_column_slice(e);
                v.dot(&(&c * &v))
            })
            .collect();
        assert!((polarize(&basis, &vals) - c).norm() < 1e-12);
    }
}
