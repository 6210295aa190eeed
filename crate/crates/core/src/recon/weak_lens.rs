//! Weak lens relation: sources over `U` grouped by shared hits over `V`.
//!
//! Two sources of one broken trajectory see the same hits from the later
//! source's time on. Probes are bucketed by their last hit and confirmed by
//! comparing the common part of their hit sets. Hits are compared as
//! (base, unit covector), so groups do not depend on covector scale.

use serde::{Deserialize, Serialize};

use super::{chart_for, norm, phase_diff};
use crate::dnsynth::{BlindedView, Hit, ProbeClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLensGroup {
    /// Probe indices in the blinded view (`B_U`).
    pub sources: Vec<usize>,
    /// Union of the members' hits (`B_V`), ordered by first coordinate.
    pub hits: Vec<Hit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLensTable {
    pub groups: Vec<WeakLensGroup>,
    /// Pairs of groups whose hit sets come within the match tolerance.
    pub ambiguous: Vec<(usize, usize)>,
}

fn unit_hit(h: &Hit) -> Vec<f64> {
    let n = norm(&h.covec);
    h.base
        .iter()
        .copied()
        .chain(h.covec.iter().map(|c| c / n))
        .collect()
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut j = i;
    while parent[j] != r {
        let next = parent[j];
        parent[j] = r;
        j = next;
    }
    r
}

/// Whether two hit lists agree on all hits with first coordinate `≥ t_from`.
fn agree_from(dim: usize, a: &[Vec<f64>], b: &[Vec<f64>], t_from: f64, tol: f64) -> bool {
    let chart = chart_for(dim);
    let late = |hs: &[Vec<f64>]| -> Vec<Vec<f64>> {
        hs.iter()
            .filter(|h| h[0] >= t_from - tol)
            .cloned()
            .collect()
    };
    let (la, lb) = (late(a), late(b));
    !la.is_empty()
        && la.len() == lb.len()
        && la
            .iter()
            .all(|p| lb.iter().any(|q| norm(&phase_diff(&chart, p, q)) <= tol))
}

/// Groups probes of the view into `(B_U, B_V)` pairs. `Empty` and `Curve`
/// probes carry no hits and are left out.
pub fn build_weak_lens(view: &BlindedView, match_tol: f64) -> WeakLensTable {
    let dim = view.dim;
    let chart = chart_for(dim);
    let live: Vec<usize> = (0..view.probes.len())
        .filter(|&i| {
            view.probes[i].class == ProbeClass::Discrete && !view.probes[i].hits.is_empty()
        })
        .collect();
    let units: Vec<Vec<Vec<f64>>> = view
        .probes
        .iter()
        .map(|p| p.hits.iter().map(unit_hit).collect())
        .collect();
    let last = |i: usize| -> Vec<f64> {
        units[i]
            .iter()
            .max_by(|a, b| a[0].total_cmp(&b[0]))
            .cloned()
            .expect("nonempty hits")
    };
    // Bucket by the last hit: sorted by its first coordinate, compare neighbours within tolerance.
    let mut keyed: Vec<(usize, Vec<f64>)> = live.iter().map(|&i| (i, last(i))).collect();
    keyed.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]).then(a.0.cmp(&b.0)));
    let mut parent: Vec<usize> = (0..view.probes.len()).collect();
    for a in 0..keyed.len() {
        for b in a + 1..keyed.len() {
            if keyed[b].1[0] - keyed[a].1[0] > match_tol {
                break;
            }
            let (i, j) = (keyed[a].0, keyed[b].0);
            if norm(&phase_diff(&chart, &keyed[a].1, &keyed[b].1)) > match_tol {
                continue;
            }
            let t_from = view.probes[i].source.base[0].max(view.probes[j].source.base[0]);
            if agree_from(dim, &units[i], &units[j], t_from, match_tol) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &live {
        let r = find(&mut parent, i);
        by_root.entry(r).or_default().push(i);
    }
    let mut groups: Vec<WeakLensGroup> = by_root
        .into_values()
        .map(|sources| {
            let mut hits: Vec<Hit> = vec![];
            let mut seen: Vec<Vec<f64>> = vec![];
            for &s in &sources {
                for (h, u) in view.probes[s].hits.iter().zip(&units[s]) {
                    if !seen
                        .iter()
                        .any(|q| norm(&phase_diff(&chart, q, u)) <= match_tol)
                    {
                        seen.push(u.clone());
                        hits.push(h.clone());
                    }
                }
            }
            hits.sort_by(|a, b| a.base[0].total_cmp(&b.base[0]));
            WeakLensGroup { sources, hits }
        })
        .collect();
    groups.sort_by(|a, b| {
        a.hits[0].base[0]
            .total_cmp(&b.hits[0].base[0])
            .then(a.sources.cmp(&b.sources))
    });
    let mut ambiguous = vec![];
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let close = groups[a].hits.iter().any(|h| {
                let p = unit_hit(h);
                groups[b]
                    .hits
                    .iter()
                    .any(|k| norm(&phase_diff(&chart, &p, &unit_hit(k))) <= match_tol)
            });
            if close {
                ambiguous.push((a, b));
            }
        }
    }
    WeakLensTable { groups, ambiguous }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnsynth::{blind, LiveProbe, Region};
    use crate::flow::{FlowOptions, Window};
    use crate::scenarios::make_cylinder;
    use std::f64::consts::PI;

    #[test]
    fn radial_family_groups_by_trajectory() {
        let s = make_cylinder(3, 1.0, None, None).unwrap();
        let u = Region::new(vec![-1.0, -0.5], vec![30.0, 0.5]);
        let v = Region::new(vec![-1.0, PI - 0.5], vec![30.0, PI + 0.5]);
        let probe =
            LiveProbe::new(&s.model, u, v, Window::until(20.0), FlowOptions::default()).unwrap();
        let mut sources: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|m| (vec![4.0 * m as f64, 0.0], vec![-1.0, 0.0]))
            .collect();
        sources.push((vec![1.0, 0.0], vec![-1.0, 0.0]));
        sources.push((vec![0.0, 0.0], vec![-1.0, 0.2]));
        sources.push((vec![0.0, 0.0], vec![1.0, 5.0]));
        let (view, _) = blind(&probe, &sources).unwrap();
        let table = build_weak_lens(&view, 1e-6);
        let members: Vec<Vec<usize>> = table.groups.iter().map(|g| g.sources.clone()).collect();
        assert!(members.contains(&vec![0, 1, 2, 3]), "{members:?}");
        assert!(
            members.contains(&vec![4]) && members.contains(&vec![5]),
            "{members:?}"
        );
        assert_eq!(members.len(), 3);
        assert!(table.ambiguous.is_empty());
    }
}
