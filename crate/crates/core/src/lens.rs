//! Forward lens relations, their differentials, and recovery of the
//! covector scale of a lens map known only up to direction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{trace, FlowError, FlowOptions, TimeDirection, Window};
use crate::geometry::{BoundaryCovector, CovectorClass, GeomError, ManifoldModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LensError {
    #[error("trajectory has {found} events, needed {needed}")]
    TooFewEvents { needed: usize, found: usize },
    #[error("event {0} is near-glancing")]
    NearGlancing(usize),
    #[error("stencil crosses a discontinuity of the lens map (column {0})")]
    Discontinuity(usize),
    #[error("degenerate scaling system at node {0}")]
    Degenerate(usize),
    #[error("grid needs at least 3 points per axis and matching target count")]
    BadGrid,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type LensResult<T> = Result<T, LensError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensSample {
    pub source: BoundaryCovector,
    pub target: BoundaryCovector,
    pub k: usize,
    pub flight: f64,
    pub arrival_tau: f64,
}

fn lens_in_direction(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    k: usize,
    direction: TimeDirection,
    opts: &FlowOptions,
) -> LensResult<LensSample> {
    if k == 0 {
        return Err(LensError::TooFewEvents {
            needed: 1,
            found: 0,
        });
    }
    let tr = trace(model, source, &Window::events(k), direction, opts)?;
    let ev = tr.events.get(k - 1).ok_or(LensError::TooFewEvents {
        needed: k,
        found: tr.events.len(),
    })?;
    if let Some(i) = tr.events.iter().position(|e| e.near_glancing) {
        return Err(LensError::NearGlancing(i + 1));
    }
    Ok(LensSample {
        source: source.clone(),
        target: ev.covector.clone(),
        k,
        flight: ev.s,
        arrival_tau: ev.tau,
    })
}

/// `L^k(x′, ξ′)`: the tangential projection of the k-th forward event.
pub fn lens_map(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    k: usize,
    opts: &FlowOptions,
) -> LensResult<LensSample> {
    lens_in_direction(model, source, k, TimeDirection::Forward, opts)
}

/// `L^{-k}`: the k-th event of the backward trace.
pub fn lens_inverse(
    model: &ManifoldModel,
    target: &BoundaryCovector,
    k: usize,
    opts: &FlowOptions,
) -> LensResult<LensSample> {
    lens_in_direction(model, target, k, TimeDirection::Backward, opts)
}

/// Concatenated `(x′, ξ′)` of a boundary covector.
pub fn phase_coords(bc: &BoundaryCovector) -> Vec<f64> {
    bc.base.iter().chain(&bc.covec).copied().collect()
}

/// Canonical symplectic matrix on `(x′, ξ′)` with `m` base coordinates.
pub fn canonical_j(m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        j[(i, m + i)] = 1.0;
        j[(m + i, i)] = -1.0;
    }
    j
}

/// Frobenius norm of `DᵀJD - J`.
pub fn symplectic_residual(d: &DMatrix<f64>) -> f64 {
    let j = canonical_j(d.nrows() / 2);
    (d.transpose() * &j * d - j).norm()
}

/// Jacobian of `L^k` in the coordinates `(x′, ξ′)` from the fourth-order
/// five-point central stencil.
///
/// Base coordinates are stepped by `h`, covector coordinates by
/// `h·|ξ′|`. Every stencil point must keep the same class and event count.
pub fn lens_differential(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    k: usize,
    h: f64,
    opts: &FlowOptions,
) -> LensResult<DMatrix<f64>> {
    const STENCIL: [(f64, f64); 4] = [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)];
    let m = source.base.len();
    let chart = model.chart();
    let center = lens_map(model, source, k, opts)?;
    let cnorm = source.covec.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z0 = phase_coords(source);
    let mut d = DMatrix::zeros(2 * m, 2 * m);
    for col in 0..2 * m {
        let step = if col < m { h } else { h * cnorm };
        for (offset, weight) in STENCIL {
            let mut z = z0.clone();
            z[col] += offset * step;
            let bc = model.classify_covector(&z[..m], &z[m..])?;
            if bc.class != CovectorClass::Hyperbolic || bc.orientation != source.orientation {
                return Err(LensError::Discontinuity(col));
            }
            let s = lens_map(model, &bc, k, opts).map_err(|e| match e {
                LensError::TooFewEvents { .. } => LensError::Discontinuity(col),
                e => e,
            })?;
            let mut rel = chart.wrapped_diff(&s.target.base, &center.target.base);
            rel.extend(
                s.target
                    .covec
                    .iter()
                    .zip(&center.target.covec)
                    .map(|(a, b)| a - b),
            );
            for (row, r) in rel.iter().enumerate() {
                d[(row, col)] += weight * r / (12.0 * step);
            }
        }
    }
    Ok(d)
}

/// Lens map known only up to covector scale on a tensor grid of sources.
///
/// `axes` are the grid values of each source coordinate `(x′, ξ′)`; nodes are
/// stored row-major with the last axis fastest. Targets carry base points on
/// a continuous branch and any positive multiple of the target covector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalGrid {
    pub axes: Vec<Vec<f64>>,
    pub target_base: Vec<Vec<f64>>,
    pub target_direction: Vec<Vec<f64>>,
}

impl DirectionalGrid {
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            idx[d] = flat % shape[d];
            flat /= shape[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let shape = self.shape();
        idx.iter().zip(&shape).fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i])
            .collect()
    }

    /// Second-order derivative of a nodal field along `axis` (one-sided at the ends).
    fn derivative(&self, values: &[Vec<f64>], flat: usize, axis: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        let a = &self.axes[axis];
        let n = a.len();
        let at = |i: usize| {
            let mut j = idx.clone();
            j[axis] = i;
            &values[self.flat_index(&j)]
        };
        let i = idx[axis];
        let (pts, w): ([usize; 3], [f64; 3]) = if i == 0 {
            let (h1, h2) = (a[1] - a[0], a[2] - a[0]);
            (
                [0, 1, 2],
                [
                    -(h1 + h2) / (h1 * h2),
                    h2 / (h1 * (h2 - h1)),
                    -h1 / (h2 * (h2 - h1)),
                ],
            )
        } else if i == n - 1 {
            let (h1, h2) = (a[n - 2] - a[n - 1], a[n - 3] - a[n - 1]);
            (
                [n - 1, n - 2, n - 3],
                [
                    -(h1 + h2) / (h1 * h2),
                    h2 / (h1 * (h2 - h1)),
                    -h1 / (h2 * (h2 - h1)),
                ],
            )
        } else {
            let (hm, hp) = (a[i] - a[i - 1], a[i + 1] - a[i]);
            (
                [i - 1, i, i + 1],
                [
                    -hp / (hm * (hm + hp)),
                    (hp - hm) / (hm * hp),
                    hm / (hp * (hm + hp)),
                ],
            )
        };
        let len = values[0].len();
        let mut out = vec![0.0; len];
        for (p, wk) in pts.iter().zip(w) {
            for (o, v) in out.iter_mut().zip(at(*p)) {
                *o += wk * v;
            }
        }
        out
    }

    fn check(&self) -> LensResult<()> {
        if self.axes.iter().any(|a| a.len() < 3)
            || self.target_base.len() != self.len()
            || self.target_direction.len() != self.len()
        {
            return Err(LensError::BadGrid);
        }
        Ok(())
    }

    /// Jacobian of the map `z ↦ (y′, η)` at a node, with `η = scale·direction`.
    fn jacobian(&self, flat: usize, scale: &[f64]) -> DMatrix<f64> {
        let vals: Vec<Vec<f64>> = (0..self.len())
            .map(|i| {
                self.target_base[i]
                    .iter()
                    .copied()
                    .chain(self.target_direction[i].iter().map(|v| v * scale[i]))
                    .collect()
            })
            .collect();
        let dim = self.axes.len();
        let mut d = DMatrix::zeros(dim, dim);
        for axis in 0..dim {
            let col = self.derivative(&vals, flat, axis);
            for (row, v) in col.iter().enumerate() {
                d[(row, axis)] = *v;
            }
        }
        d
    }

    /// Largest symplectic residual over nodes for the map with the given scales.
    pub fn max_symplectic_residual(&self, scale: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| symplectic_residual(&self.jacobian(i, scale)))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledLens {
    pub axes: Vec<Vec<f64>>,
    /// `log μ` at each node.
    pub log_scale: Vec<f64>,
    /// Symplectic residual of the rescaled map at each node.
    pub residuals: Vec<f64>,
    /// Largest residual of the input map before rescaling.
    pub input_residual: f64,
}

impl ScaledLens {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Multilinear interpolation of `log μ`, exponentiated.
    pub fn scale_at(&self, z: &[f64]) -> f64 {
        let dim = self.axes.len();
        let mut cells = Vec::with_capacity(dim);
        for (a, &v) in self.axes.iter().zip(z) {
            let i = a.partition_point(|x| *x <= v).clamp(1, a.len() - 1) - 1;
            let w = (v - a[i]) / (a[i + 1] - a[i]);
            cells.push((i, w));
        }
        let shape: Vec<usize> = self.axes.iter().map(|a| a.len()).collect();
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut flat = 0;
            for d in 0..dim {
                let bit = (corner >> d) & 1;
                let (i, w) = cells[d];
                weight *= if bit == 1 { w } else { 1.0 - w };
                flat = flat * shape[d] + i + bit;
            }
            acc += weight * self.log_scale[flat];
        }
        acc.exp()
    }
}

/// Recovers the positive scale `μ` making `z ↦ (y′, μ·direction)` preserve
/// the canonical one-form, `μ η̂·∂y′/∂z = ξ′·∂x′/∂z`, by least squares at
/// every node. A homogeneous canonical map preserves the canonical one-form,
/// so this also removes the symplectic defect of a mis-scaled input.
pub fn recover_scaling(grid: &DirectionalGrid) -> LensResult<ScaledLens> {
    grid.check()?;
    let dim = grid.axes.len();
    let m = dim / 2;
    let ones = vec![1.0; grid.len()];
    let input_residual = grid.max_symplectic_residual(&ones);
    let bases: Vec<Vec<f64>> = grid.target_base.clone();
    let mut log_scale = Vec::with_capacity(grid.len());
    for flat in 0..grid.len() {
        let z = grid.node(flat);
        let eta = DVector::from_column_slice(&grid.target_direction[flat]);
        let mut alpha = DVector::zeros(dim);
        let mut lambda = DVector::zeros(dim);
        for axis in 0..dim {
            let dy = grid.derivative(&bases, flat, axis);
            alpha[axis] = eta.iter().zip(&dy).map(|(a, b)| a * b).sum();
            if axis < m {
                lambda[axis] = z[m + axis];
            }
        }
        let aa = alpha.norm_squared();
        let mu = alpha.dot(&lambda) / (aa + 1e-10 * lambda.norm_squared());
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(LensError::Degenerate(flat));
        }
        log_scale.push(mu.ln());
    }
    let scale: Vec<f64> = log_scale.iter().map(|l| l.exp()).collect();
    let residuals = (0..grid.len())
        .map(|i| symplectic_residual(&grid.jacobian(i, &scale)))
        .collect();
    Ok(ScaledLens {
        axes: grid.axes.clone(),
        log_scale,
        residuals,
        input_residual,
    })
}

/// Samples `L^k` on a symmetric tensor grid around `center`, returning the
/// directional grid (targets as given) and the true target covectors.
pub fn sample_lens_grid(
    model: &ManifoldModel,
    center: &BoundaryCovector,
    k: usize,
    spacing: f64,
    half_width: usize,
    opts: &FlowOptions,
) -> LensResult<(DirectionalGrid, Vec<Vec<f64>>)> {
    let m = center.base.len();
    let chart = model.chart();
    let z0 = phase_coords(center);
    let cnorm = center.covec.iter().map(|v| v * v).sum::<f64>().sqrt();
    let axes: Vec<Vec<f64>> = (0..2 * m)
        .map(|d| {
            let h = if d < m { spacing } else { spacing * cnorm };
            (0..=2 * half_width)
                .map(|i| z0[d] + h * (i as f64 - half_width as f64))
                .collect()
        })
        .collect();
    let mut grid = DirectionalGrid {
        axes,
        target_base: vec![],
        target_direction: vec![],
    };
    let reference = lens_map(model, center, k, opts)?.target.base;
    let mut truth = vec![];
    for flat in 0..grid.len() {
        let z = grid.node(flat);
        let bc = model.classify_covector(&z[..m], &z[m..])?;
        let s = lens_map(model, &bc, k, opts)?;
        let base = chart.locate(&chart.embed(&s.target.base), &reference);
        grid.target_base.push(base);
        grid.target_direction.push(s.target.covec.clone());
        truth.push(s.target.covec);
    }
    Ok((grid, truth))
}
