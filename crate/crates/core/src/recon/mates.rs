//! Locating sources whose broken trajectory passes through a given hit.
//!
//! Two sources lie on one trajectory exactly when some hit of one is also a
//! hit of the other. Given a reference hit, a damped Newton iteration on the
//! source `(x′, ξ′)` drives the nearest hit of the probe onto it. The
//! Jacobian comes from forward differences of repeated probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{chart_for, norm, phase_diff, ReconError, ReconResult};
use crate::dnsynth::{Hit, ProbeOracle, ProbeResponse, Region};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MateSearch {
    /// Forward-difference step in every source coordinate.
    pub fd_step: f64,
    /// Converged once the hit matches to this phase-space distance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MateSearch {
    fn default() -> Self {
        MateSearch {
            fd_step: 1e-7,
            tol: 1e-9,
            max_iter: 25,
        }
    }
}

/// `(x′, ξ′)` as one vector.
pub fn phase_point(base: &[f64], covec: &[f64]) -> Vec<f64> {
    base.iter().chain(covec).copied().collect()
}

pub fn hit_phase(h: &Hit) -> Vec<f64> {
    phase_point(&h.base, &h.covec)
}

/// Index and distance of the hit closest to `target` in phase space.
pub fn nearest_hit(dim: usize, hits: &[Hit], target: &[f64]) -> Option<(usize, f64)> {
    let chart = chart_for(dim);
    hits.iter()
        .enumerate()
        .map(|(i, h)| (i, norm(&phase_diff(&chart, &hit_phase(h), target))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Result of driving a source onto a target hit.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSolution {
    pub source: Vec<f64>,
    pub response: ProbeResponse,
    /// Index of the matched hit in `response.hits`.
    pub hit: usize,
    pub residual: f64,
    pub iterations: usize,
}

fn residual(
    oracle: &dyn ProbeOracle,
    z: &[f64],
    target: &[f64],
) -> ReconResult<Option<(Vec<f64>, ProbeResponse, usize)>> {
    let m = oracle.dim() - 1;
    let resp = match oracle.probe(&z[..m], &z[m..]) {
        Ok(r) => r,
        // Outside U or unresolved near-glancing: treat as no hit.
        Err(_) => return Ok(None),
    };
    let Some((i, _)) = nearest_hit(oracle.dim(), &resp.hits, target) else {
        return Ok(None);
    };
    let r = phase_diff(&chart_for(oracle.dim()), &hit_phase(&resp.hits[i]), target);
    Ok(Some((r, resp, i)))
}

/// Newton iteration for a source whose trajectory hits `target`.
pub fn solve_for_hit(
    oracle: &dyn ProbeOracle,
    guess: &[f64],
    target: &[f64],
    opts: &MateSearch,
) -> ReconResult<SourceSolution> {
    let n2 = guess.len();
    let mut z = guess.to_vec();
    let fail = |why: &str| ReconError::MateSearch(format!("{why} from {guess:?}"));
    let (mut r, mut resp, mut idx) = residual(oracle, &z, target)?.ok_or_else(|| fail("no hit"))?;
    let mut rn = norm(&r);
    for it in 0..opts.max_iter {
        if rn <= opts.tol {
            return Ok(SourceSolution {
                source: z,
                response: resp,
                hit: idx,
                residual: rn,
                iterations: it,
            });
        }
        let mut jac = DMatrix::zeros(n2, n2);
        for j in 0..n2 {
            let mut zp = z.clone();
            let h = opts.fd_step * (1.0 + z[j].abs());
            zp[j] += h;
            let (rp, _, _) =
                residual(oracle, &zp, target)?.ok_or_else(|| fail("lost hit in difference"))?;
            for i in 0..n2 {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(|| fail("singular Jacobian"))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let zn: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a - lambda * s)
                .collect();
            if let Some((rn2, resp2, idx2)) = residual(oracle, &zn, target)? {
                let nn = norm(&rn2);
                if nn < rn {
                    z = zn;
                    r = rn2;
                    rn = nn;
                    resp = resp2;
                    idx = idx2;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if rn <= opts.tol * 1e3 {
        let iterations = opts.max_iter;
        return Ok(SourceSolution {
            source: z,
            response: resp,
            hit: idx,
            residual: rn,
            iterations,
        });
    }
    Err(fail(&format!("residual stalled at {rn:e}")))
}

/// Sources of one broken trajectory inside `U`, indexed by reflection count
/// relative to the seed. Index `+1` is the neighbour reached by stepping in
/// the direction of increasing first chart coordinate of the seed's hits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub seed: Vec<f64>,
    /// `(index, source)` sorted by index; contains `(0, seed)`.
    pub members: Vec<(i32, Vec<f64>)>,
    /// Hit shared by every member.
    pub reference: Hit,
    /// The reference hit's `Q` as seen from each member (same order).
    pub q_at_reference: Vec<(f64, f64)>,
}

impl Chain {
    pub fn member(&self, index: i32) -> Option<&Vec<f64>> {
        self.members
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, z)| z)
    }
}

/// Builds the chain through `seed` with up to `per_side` members on each side,
/// stopping early when a member leaves `U` or when `keep` rejects it.
pub fn find_chain(
    oracle: &dyn ProbeOracle,
    u: &Region,
    seed: &[f64],
    per_side: usize,
    opts: &MateSearch,
    keep: &dyn Fn(&[f64]) -> bool,
) -> ReconResult<Chain> {
    let dim = oracle.dim();
    let m = dim - 1;
    let chart = chart_for(dim);
    let resp = oracle.probe(&seed[..m], &seed[m..])?;
    if resp.hits.len() < 2 {
        return Err(ReconError::MateSearch(format!(
            "seed {seed:?} has {} hits",
            resp.hits.len()
        )));
    }
    let mut hits = resp.hits.clone();
    hits.sort_by(|a, b| a.base[0].total_cmp(&b.base[0]));
    let reference = hits.last().unwrap().clone();
    let target = hit_phase(&reference);
    let step = phase_diff(&chart, &hit_phase(&hits[1]), &hit_phase(&hits[0]));
    let step_len = norm(&step);
    let mut members = vec![(0, seed.to_vec())];
    let mut qs = vec![(0, (reference.q_re, reference.q_im))];
    for dir in [1i32, -1] {
        let mut prev = seed.to_vec();
        let mut d: Vec<f64> = step.iter().map(|s| dir as f64 * s).collect();
        for j in 1..=per_side as i32 {
            let guess: Vec<f64> = prev.iter().zip(&d).map(|(a, b)| a + b).collect();
            if !u.contains(&chart, &guess[..m]) {
                break;
            }
            let sol = match solve_for_hit(oracle, &guess, &target, opts) {
                Ok(s) => s,
                Err(_) => break,
            };
            let moved = phase_diff(&chart, &sol.source, &prev);
            // A converged solution must be a genuine neighbour, not the previous member.
            if norm(&moved) < 0.5 * step_len
                || !keep(&sol.source)
                || !u.contains(&chart, &sol.source[..m])
            {
                break;
            }
            let h = &sol.response.hits[sol.hit];
            qs.push((dir * j, (h.q_re, h.q_im)));
            members.push((dir * j, sol.source.clone()));
            d = moved;
            prev = sol.source;
        }
    }
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by_key(|&i| members[i].0);
    Ok(Chain {
        seed: seed.to_vec(),
        members: order.iter().map(|&i| members[i].clone()).collect(),
        reference,
        q_at_reference: order.iter().map(|&i| qs[i].1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnsynth::LiveProbe;
    use crate::flow::{FlowOptions, Window};
    use crate::scenarios::make_cylinder;
    use std::f64::consts::PI;

    #[test]
    fn chain_on_flat_cylinder_is_a_lattice() {
        let s = make_cylinder(3, 1.0, None, None).unwrap();
        let u = Region::new(vec![-1.0, -0.5], vec![30.0, 0.5]);
        let v = Region::new(vec![-1.0, PI - 0.5], vec![30.0, PI + 0.5]);
        let probe = LiveProbe::new(
            &s.model,
            u.clone(),
            v,
            Window::until(6.0),
            FlowOptions::default(),
        )
        .unwrap();
        // Slightly hyperbolic covector near the null direction (-1, 1).
        let seed = vec![1.0, 0.0, -1.0, 0.995];
        let chain = find_chain(&probe, &u, &seed, 2, &MateSearch::default(), &|_| true).unwrap();
        assert_eq!(chain.members.len(), 5, "{chain:?}");
        let beta = (0.995f64).asin();
        let (dt, dth) = (2.0 * beta.cos(), PI - 2.0 * beta);
        for (i, z) in &chain.members {
            let f = *i as f64;
            assert!(
                (z[0] - 1.0 - f * dt).abs() < 1e-7 && (z[1] - f * dth).abs() < 1e-7,
                "{i}: {z:?}"
            );
            assert!((z[2] + 1.0).abs() < 1e-7 && (z[3] - 0.995).abs() < 1e-7);
        }
    }
}
