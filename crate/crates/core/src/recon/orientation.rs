//! Lens relation up to time orientation near a recovered glancing direction.
//!
//! Sources of one trajectory inside `U` are ordered by a local time function
//! built from the recovered light cone; the successor in that order defines
//! `L′`. Nothing fixes which way the time function points, so `L′` is `L` or
//! `L^{-1}`.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{
    chart_for, find_chain, norm, phase_diff, Chain, ConformalClassEstimate, MateSearch,
    PointRecovery, ReconResult,
};
use crate::dnsynth::{ProbeOracle, Region};
use crate::flow::FlowOptions;
use crate::geometry::ManifoldModel;
use crate::lens::{lens_inverse, lens_map, phase_coords};

/// Linear function `t(y) = T·(y - x′)` with `T` timelike for the recovered class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFunction {
    pub origin: Vec<f64>,
    pub differential: Vec<f64>,
}

impl TimeFunction {
    /// Uses the eigen-covector of the negative eigenvalue of `q`, signed so
    /// that its largest component is positive.
    pub fn from_class(est: &ConformalClassEstimate) -> Self {
        let eig = SymmetricEigen::new(est.q());
        let i = eig.eigenvalues.imin();
        let mut t: DVector<f64> = eig.eigenvectors.column(i).into();
        if t[t.iamax()] < 0.0 {
            t = -t;
        }
        TimeFunction {
            origin: est.point.clone(),
            differential: t.iter().copied().collect(),
        }
    }

    pub fn flipped(&self) -> Self {
        TimeFunction {
            origin: self.origin.clone(),
            differential: self.differential.iter().map(|v| -v).collect(),
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let d = chart_for(y.len() + 1).wrapped_diff(y, &self.origin);
        d.iter().zip(&self.differential).map(|(a, b)| a * b).sum()
    }

    /// `T` applied to a tangent vector.
    pub fn rate(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.differential).map(|(a, b)| a * b).sum()
    }
}

/// Offsets into the hyperbolic side and chain length for one patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensPatch {
    pub offsets: Vec<f64>,
    pub per_side: usize,
    pub search: MateSearch,
}

impl Default for LensPatch {
    fn default() -> Self {
        LensPatch {
            offsets: vec![2e-3, 1e-3],
            per_side: 2,
            search: MateSearch::default(),
        }
    }
}

/// `L′` on a patch as explicit pairs `(z, L′(z))` of phase-space points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLens {
    pub time: TimeFunction,
    pub chains: Vec<Chain>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Unit covector `cos ε · ν + sin ε · w` off a glancing direction `ν`.
pub fn offset_covector(covec: &[f64], inward: &[f64], eps: f64) -> Vec<f64> {
    covec
        .iter()
        .zip(inward)
        .map(|(c, w)| eps.cos() * c + eps.sin() * w)
        .collect()
}

/// Orders every chain by `time` and links each member to its successor.
pub fn order_chains(chains: &[Chain], time: &TimeFunction) -> Vec<(Vec<f64>, Vec<f64>)> {
    let m = time.origin.len();
    let mut pairs = vec![];
    for c in chains.iter().filter(|c| c.members.len() > 1) {
        let mut zs: Vec<&Vec<f64>> = c.members.iter().map(|(_, z)| z).collect();
        zs.sort_by(|a, b| time.value(&a[..m]).total_cmp(&time.value(&b[..m])));
        pairs.extend(zs.windows(2).map(|w| (w[0].clone(), w[1].clone())));
    }
    pairs
}

/// Builds `L′` on the patch of glancing direction `dir` of a recovered point.
pub fn recover_lens_orientation(
    oracle: &dyn ProbeOracle,
    u: &Region,
    rec: &PointRecovery,
    dir: usize,
    class: &ConformalClassEstimate,
    patch: &LensPatch,
) -> ReconResult<LocalLens> {
    let time = TimeFunction::from_class(class);
    let d = &rec.directions[dir];
    let mut chains = vec![];
    for eps in &patch.offsets {
        let seed: Vec<f64> = rec
            .point
            .iter()
            .copied()
            .chain(offset_covector(&d.covec, &d.inward, *eps))
            .collect();
        chains.push(find_chain(
            oracle,
            u,
            &seed,
            patch.per_side,
            &patch.search,
            &|_| true,
        )?);
    }
    let pairs = order_chains(&chains, &time);
    Ok(LocalLens {
        time,
        chains,
        pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Forward,
    Inverse,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub branches: Vec<Branch>,
    /// Largest distance from the matched truth image.
    pub max_error: f64,
}

impl BranchReport {
    /// The single branch of the patch, if there is no mixing.
    pub fn uniform(&self) -> Option<Branch> {
        let first = *self.branches.first()?;
        (first != Branch::Neither && self.branches.iter().all(|b| *b == first)).then_some(first)
    }
}

/// Compares each pair with one step of the true lens relation and its inverse.
pub fn validate_branch(
    model: &ManifoldModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    tol: f64,
    opts: &FlowOptions,
) -> ReconResult<BranchReport> {
    let m = model.dim() - 1;
    let chart = chart_for(model.dim());
    let mut branches = vec![];
    let mut max_error: f64 = 0.0;
    for (z, w) in pairs {
        let bc = model
            .classify_covector(&z[..m], &z[m..])
            .map_err(crate::dnsynth::SynthError::from)?;
        let dist =
            |img: Option<Vec<f64>>| img.map_or(f64::INFINITY, |p| norm(&phase_diff(&chart, &p, w)));
        let fwd = dist(
            lens_map(model, &bc, 1, opts)
                .ok()
                .map(|s| phase_coords(&s.target)),
        );
        let inv = dist(
            lens_inverse(model, &bc, 1, opts)
                .ok()
                .map(|s| phase_coords(&s.target)),
        );
        let (b, e) = if fwd <= tol && fwd <= inv {
            (Branch::Forward, fwd)
        } else if inv <= tol {
            (Branch::Inverse, inv)
        } else {
            (Branch::Neither, fwd.min(inv))
        };
        max_error = max_error.max(e);
        branches.push(b);
    }
    Ok(BranchReport {
        branches,
        max_error,
    })
}
