//! Light-cone fitting: the conformal class of `ḡ^{-1}` from null covectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{ReconError, ReconResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalClassEstimate {
    pub point: Vec<f64>,
    /// Symmetric form on covectors, `|det| = 1`, one negative eigenvalue.
    pub q_matrix: Vec<Vec<f64>>,
    /// Largest `|q(ξ̂, ξ̂)|` over the unit input directions.
    pub residual: f64,
    pub singular_gap: f64,
}

impl ConformalClassEstimate {
    pub fn q(&self) -> DMatrix<f64> {
        let n = self.q_matrix.len();
        DMatrix::from_fn(n, n, |i, j| self.q_matrix[i][j])
    }
}

fn unknowns(n: usize) -> Vec<(usize, usize)> {
    let mut v = vec![];
    for a in 0..n {
        for b in a..n {
            v.push((a, b));
        }
    }
    v
}

/// Fits the quadric `q(ξ, ξ) = 0` through the given null covector directions.
///
/// The null space of the (padded) linear system is taken from the SVD. For
/// two-dimensional boundaries `q` and `-q` share a signature, so a covector
/// known to be timelike (`q < 0`) fixes the sign.
pub fn fit_conformal_class(
    point: &[f64],
    directions: &[Vec<f64>],
    timelike_hint: Option<&[f64]>,
) -> ReconResult<ConformalClassEstimate> {
    let n = directions.first().map_or(0, |d| d.len());
    let unk = unknowns(n);
    let needed = unk.len() - 1;
    if directions.len() < needed {
        return Err(ReconError::TooFewDirections {
            needed,
            found: directions.len(),
        });
    }
    let rows = directions.len().max(unk.len());
    let mut a = DMatrix::zeros(rows, unk.len());
    let units: Vec<DVector<f64>> = directions
        .iter()
        .map(|d| {
            let v = DVector::from_column_slice(d);
            let nv = v.norm();
            v / nv
        })
        .collect();
    for (r, u) in units.iter().enumerate() {
        for (c, &(i, j)) in unk.iter().enumerate() {
            a[(r, c)] = if i == j {
                u[i] * u[i]
            } else {
                2.0 * u[i] * u[j]
            };
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
    let gap = svd.singular_values[order[1]];
    if gap < 1e-8 {
        return Err(ReconError::Degenerate(gap));
    }
    let null = vt.row(order[0]).transpose();
    let mut q = DMatrix::zeros(n, n);
    for (c, &(i, j)) in unk.iter().enumerate() {
        q[(i, j)] = null[c];
        q[(j, i)] = null[c];
    }
    let negatives = |m: &DMatrix<f64>| {
        SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .filter(|v| **v < 0.0)
            .count()
    };
    let flip = match timelike_hint {
        Some(h) => {
            let hv = DVector::from_column_slice(h);
            hv.dot(&(&q * &hv)) > 0.0
        }
        None => negatives(&q) != 1,
    };
    if flip {
        q = -q;
    }
    let det = q.determinant().abs();
    q /= det.powf(1.0 / n as f64);
    let residual = units
        .iter()
        .map(|u| u.dot(&(&q * u)).abs())
        .fold(0.0, f64::max);
    Ok(ConformalClassEstimate {
        point: point.to_vec(),
        q_matrix: (0..n)
            .map(|i| (0..n).map(|j| q[(i, j)]).collect())
            .collect(),
        residual,
        singular_gap: gap,
    })
}

/// Null covector directions of a Lorentzian cometric: two for n = 2,
/// `count` around the cone otherwise.
pub fn null_covectors(cometric: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    let m = cometric.nrows();
    let eig = SymmetricEigen::new(cometric.clone());
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let t = eig.eigenvectors.column(idx[0]) / eig.eigenvalues[idx[0]].abs().sqrt();
    let sp: Vec<DVector<f64>> = idx[1..]
        .iter()
        .map(|&i| eig.eigenvectors.column(i) / eig.eigenvalues[i].abs().sqrt())
        .collect();
    let k = if m == 2 { 2 } else { count.max(3) };
    (0..k)
        .map(|j| {
            let a = std::f64::consts::TAU * j as f64 / k as f64;
            let mut v = t.clone();
            if m == 2 {
                v += &sp[0] * if j == 0 { 1.0 } else { -1.0 };
            } else {
                v += &sp[0] * a.cos() + &sp[1] * a.sin();
            }
            v
        })
        .collect()
}

/// Largest angle (radians) between true null covector directions of
/// `truth_cometric` and the cone of the fitted `q`.
pub fn cone_angle_error(q: &DMatrix<f64>, truth_cometric: &DMatrix<f64>, samples: usize) -> f64 {
    null_covectors(truth_cometric, samples)
        .iter()
        .map(|v| {
            let u = v / v.norm();
            let qu = q * &u;
            let val = u.dot(&qu);
            let perp = &qu - &u * u.dot(&qu);
            (val.abs() / (2.0 * perp.norm())).atan()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_lines_give_minkowski() {
        let f = fit_conformal_class(
            &[0.0, 0.0],
            &[vec![1.0, 1.0], vec![1.0, -1.0]],
            Some(&[1.0, 0.0]),
        )
        .unwrap();
        let q = f.q();
        assert!(
            (q[(0, 0)] + 1.0).abs() < 1e-12
                && (q[(1, 1)] - 1.0).abs() < 1e-12
                && q[(0, 1)].abs() < 1e-12
        );
    }

    #[test]
    fn five_cone_directions_in_three_dimensions() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0]));
        let dirs: Vec<Vec<f64>> = null_covectors(&g, 5)
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        let f = fit_conformal_class(&[0.0; 3], &dirs, None).unwrap();
        assert!((f.q() - &g).norm() < 1e-10);
        assert!(cone_angle_error(&f.q(), &g, 64) < 1e-10);
    }

    #[test]
    fn noisy_directions_keep_small_residual() {
        let dirs = vec![vec![1.0, 1.0 + 1e-6], vec![1.0, -1.0]];
        let f = fit_conformal_class(&[0.0, 0.0], &dirs, Some(&[1.0, 0.0])).unwrap();
        assert!(f.residual <= 1e-5);
    }

    #[test]
    fn repeated_direction_is_degenerate() {
        let dirs = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(matches!(
            fit_conformal_class(&[0.0, 0.0], &dirs, None),
            Err(ReconError::Degenerate(_))
        ));
    }
}
