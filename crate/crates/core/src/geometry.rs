//! Metric fields, boundary charts and boundary covector algebra.
//!
//! Interior coordinates are `(t, x, y)` for `n = 3` and `(t, x, y, z)` for
//! `n = 4`. Every model in this crate has a metric of the warped form
//!
//! ```text
//! g = e^{-2φ} ( -f dt² + ρ (dx² + dy² [+ dz²]) )
//! ```
//!
//! with `f`, `ρ`, `φ` arbitrary smooth fields, and a boundary that is the
//! coordinate sphere/cylinder `|x_spatial| = R`. Boundary charts are
//! `(t, θ)` and `(t, ϑ, ϕ)`; angles live on the universal cover.
//!
//! Conventions: the symbol is `p = -g^{jk} ξ_j ξ_k`, the boundary defining
//! function is positive inside, and the unit normal covector is
//! `N = dφ_b / |dφ_b|_g`, whose dual vector points into the interior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Jet, ScalarField, MAX_DIM};
use crate::ode::{Dopri5, System, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point {0:?} is outside the chart domain")]
    OutsideDomain(Vec<f64>),
    #[error("metric is singular or has wrong signature at {0:?}")]
    Singular(Vec<f64>),
    #[error("zero covector")]
    ZeroCovector,
    #[error("elliptic covector has no real null lift")]
    Elliptic,
    #[error("point is not on the boundary (φ_b = {0:e})")]
    NotOnBoundary(f64),
    #[error("vector is not a null boundary tangent (ḡ(V,V) = {0:e})")]
    NotNullTangent(f64),
    #[error("caustic of the normal exponential map at depth {0}")]
    Caustic(f64),
    #[error("integration failed: {0}")]
    Integration(String),
}

pub type GeomResult<T> = Result<T, GeomError>;

/// Metric `e^{-2φ}(-f dt² + ρ |dx|²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    pub dim: usize,
    pub lapse: ScalarField,
    pub spatial: ScalarField,
    #[serde(default)]
    pub conformal: ScalarField,
}

/// Diagonal metric data at a point: `g_tt = -a`, `g_ii = b`.
#[derive(Clone, Copy, Debug)]
pub struct DiagMetric {
    pub a: Jet,
    pub b: Jet,
}

impl DiagMetric {
    /// Inverse metric entry `g^{kk}`.
    #[inline]
    pub fn ginv(&self, k: usize) -> f64 {
        if k == 0 {
            -1.0 / self.a.v
        } else {
            1.0 / self.b.v
        }
    }

    /// `∂_l g^{kk}`.
    #[inline]
    pub fn dginv(&self, k: usize, l: usize) -> f64 {
        if k == 0 {
            self.a.g[l] / (self.a.v * self.a.v)
        } else {
            -self.b.g[l] / (self.b.v * self.b.v)
        }
    }

    #[inline]
    pub fn g(&self, k: usize) -> f64 {
        if k == 0 {
            -self.a.v
        } else {
            self.b.v
        }
    }

    #[inline]
    pub fn dg(&self, k: usize, l: usize) -> f64 {
        if k == 0 {
            -self.a.g[l]
        } else {
            self.b.g[l]
        }
    }
}

impl MetricField {
    pub fn minkowski(dim: usize) -> Self {
        MetricField {
            dim,
            lapse: ScalarField::constant(1.0),
            spatial: ScalarField::constant(1.0),
            conformal: ScalarField::zero(),
        }
    }

    #[inline]
    pub fn diag(&self, x: &[f64]) -> DiagMetric {
        let f = self.lapse.jet(x);
        let r = self.spatial.jet(x);
        if self.conformal.is_zero() {
            return DiagMetric { a: f, b: r };
        }
        let phi = self.conformal.jet(x);
        let w = (-2.0 * phi.v).exp();
        let mut a = Jet {
            v: w * f.v,
            g: [0.0; MAX_DIM],
        };
        let mut b = Jet {
            v: w * r.v,
            g: [0.0; MAX_DIM],
        };
        for l in 0..MAX_DIM {
            a.g[l] = w * (f.g[l] - 2.0 * f.v * phi.g[l]);
            b.g[l] = w * (r.g[l] - 2.0 * r.v * phi.g[l]);
        }
        DiagMetric { a, b }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.diag(x);
        DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { d.g(i) } else { 0.0 })
    }

    /// Analytic first partials `∂g/∂x^l`, one matrix per `l`.
    pub fn deriv(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let d = self.diag(x);
        (0..self.dim)
            .map(|l| {
                DMatrix::from_fn(
                    self.dim,
                    self.dim,
                    |i, j| if i == j { d.dg(i, l) } else { 0.0 },
                )
            })
            .collect()
    }

    /// Central-difference partials with step `h`.
    pub fn deriv_fd(&self, x: &[f64], h: f64) -> Vec<DMatrix<f64>> {
        let mut xp = x.to_vec();
        (0..self.dim)
            .map(|l| {
                let x0 = xp[l];
                xp[l] = x0 + h;
                let gp = self.eval(&xp);
                xp[l] = x0 - h;
                let gm = self.eval(&xp);
                xp[l] = x0;
                (gp - gm) / (2.0 * h)
            })
            .collect()
    }
}

/// A smooth one-form `A = Σ A_k dx^k + dψ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OneForm {
    #[serde(default)]
    pub components: Vec<ScalarField>,
    #[serde(default)]
    pub potential: ScalarField,
}

impl OneForm {
    pub fn zero() -> Self {
        OneForm::default()
    }

    /// Constant multiple of `dt`.
    pub fn dt(a: f64) -> Self {
        OneForm {
            components: vec![ScalarField::constant(a)],
            potential: ScalarField::zero(),
        }
    }

    pub fn exact(psi: ScalarField) -> Self {
        OneForm {
            components: vec![],
            potential: psi,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero()) && self.potential.is_zero()
    }

    /// Components `A_k(x)` for `k < dim`.
    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let pot = if self.potential.is_zero() {
            None
        } else {
            Some(self.potential.jet(x))
        };
        for (k, o) in out.iter_mut().enumerate() {
            let c = self.components.get(k).map_or(0.0, |c| c.value(x));
            *o = c + pot.map_or(0.0, |p| p.g[k]);
        }
    }

    pub fn pair(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut a = [0.0; MAX_DIM];
        self.eval(x, &mut a[..x.len()]);
        a.iter().zip(v).map(|(a, v)| a * v).sum()
    }
}

/// Scalar potential `q`, possibly carried through conformal gauge changes.
///
/// `q` never enters the principal-symbol channel; it is only transformed so
/// that a gauge-equivalent model is complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Field {
        q: ScalarField,
    },
    /// `e^{2φ}(q + e^{(n-2)φ/2} □_g e^{(2-n)φ/2})` for the untransformed `g`.
    Gauged {
        inner: Box<Potential>,
        metric: MetricField,
        phi: ScalarField,
    },
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Field {
            q: ScalarField::zero(),
        }
    }
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Field { q } => q.value(x),
            Potential::Gauged { inner, metric, phi } => {
                let n = metric.dim as f64;
                let u = |y: &[f64]| ((2.0 - n) / 2.0 * phi.value(y)).exp();
                let box_u = wave_operator_fd(metric, &u, x, 1e-4);
                let qphi = ((n - 2.0) / 2.0 * phi.value(x)).exp() * box_u;
                (2.0 * phi.value(x)).exp() * (inner.value(x) + qphi)
            }
        }
    }
}

/// `□_g u = |g|^{-1/2} ∂_j (|g|^{1/2} g^{jk} ∂_k u)` by nested central differences.
pub fn wave_operator_fd(metric: &MetricField, u: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> f64 {
    let n = metric.dim;
    let flux = |y: &[f64], j: usize| -> f64 {
        let d = metric.diag(y);
        let vol = (d.a.v * d.b.v.powi(n as i32 - 1)).sqrt();
        let mut yp = y.to_vec();
        yp[j] += h;
        let up = u(&yp);
        yp[j] -= 2.0 * h;
        let um = u(&yp);
        vol * d.ginv(j) * (up - um) / (2.0 * h)
    };
    let d = metric.diag(x);
    let vol = (d.a.v * d.b.v.powi(n as i32 - 1)).sqrt();
    let mut acc = 0.0;
    let mut y = x.to_vec();
    for j in 0..n {
        y[j] = x[j] + h;
        let fp = flux(&y, j);
        y[j] = x[j] - h;
        let fm = flux(&y, j);
        y[j] = x[j];
        acc += (fp - fm) / (2.0 * h);
    }
    acc / vol
}

/// Boundary `|x_spatial| = R`; the domain is the inside unless `exterior`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub radius: f64,
    #[serde(default)]
    pub exterior: bool,
}

impl Boundary {
    #[inline]
    fn sign(&self) -> f64 {
        if self.exterior {
            -1.0
        } else {
            1.0
        }
    }

    /// Boundary defining function, positive in the domain.
    #[inline]
    pub fn phi(&self, x: &[f64]) -> f64 {
        let r2: f64 = x[1..].iter().map(|v| v * v).sum();
        self.sign() * (self.radius * self.radius - r2)
    }

    #[inline]
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for i in 1..x.len() {
            out[i] = -2.0 * self.sign() * x[i];
        }
    }

    /// Hessian (constant): `-2·sign` on the spatial diagonal.
    pub fn hess(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| {
            if i == j && i > 0 {
                -2.0 * self.sign()
            } else {
                0.0
            }
        })
    }

    /// Radially rescales the spatial part onto the boundary.
    pub fn snap(&self, x: &mut [f64]) {
        let r: f64 = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > 0.0 {
            for v in &mut x[1..] {
                *v *= self.radius / r;
            }
        }
    }
}

/// Boundary chart `(t, θ)` on a cylinder or `(t, ϑ, ϕ)` on `ℝ × S²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryChart {
    pub dim: usize,
    pub radius: f64,
}

/// Index of the periodic chart coordinate.
impl BoundaryChart {
    pub fn periodic_index(&self) -> usize {
        self.dim - 2
    }

    pub fn embed(&self, xb: &[f64]) -> Vec<f64> {
        let r = self.radius;
        match self.dim {
            3 => vec![xb[0], r * xb[1].cos(), r * xb[1].sin()],
            _ => {
                let (st, ct) = xb[1].sin_cos();
                let (sp, cp) = xb[2].sin_cos();
                vec![xb[0], r * st * cp, r * st * sp, r * ct]
            }
        }
    }

    /// Columns `∂X/∂x′^α` of the embedding Jacobian (n × (n-1)).
    pub fn jacobian(&self, xb: &[f64]) -> DMatrix<f64> {
        let r = self.radius;
        let n = self.dim;
        let mut e = DMatrix::zeros(n, n - 1);
        e[(0, 0)] = 1.0;
        match n {
            3 => {
                let (s, c) = xb[1].sin_cos();
                e[(1, 1)] = -r * s;
                e[(2, 1)] = r * c;
            }
            _ => {
                let (st, ct) = xb[1].sin_cos();
                let (sp, cp) = xb[2].sin_cos();
                e[(1, 1)] = r * ct * cp;
                e[(2, 1)] = r * ct * sp;
                e[(3, 1)] = -r * st;
                e[(1, 2)] = -r * st * sp;
                e[(2, 2)] = r * st * cp;
            }
        }
        e
    }

    /// Second derivatives `∂²X/∂x′^α∂x′^β` as vectors, indexed `[α][β]`.
    pub fn hessians(&self, xb: &[f64]) -> Vec<Vec<DVector<f64>>> {
        let r = self.radius;
        let n = self.dim;
        let m = n - 1;
        let mut h = vec![vec![DVector::zeros(n); m]; m];
        match n {
            3 => {
                let (s, c) = xb[1].sin_cos();
                h[1][1] = DVector::from_vec(vec![0.0, -r * c, -r * s]);
            }
            _ => {
                let (st, ct) = xb[1].sin_cos();
                let (sp, cp) = xb[2].sin_cos();
                h[1][1] = DVector::from_vec(vec![0.0, -r * st * cp, -r * st * sp, -r * ct]);
                let tp = DVector::from_vec(vec![0.0, -r * ct * sp, r * ct * cp, 0.0]);
                h[1][2] = tp.clone();
                h[2][1] = tp;
                h[2][2] = DVector::from_vec(vec![0.0, -r * st * cp, -r * st * sp, 0.0]);
            }
        }
        h
    }

    /// Chart coordinates of a boundary point; angles are taken on the branch
    /// nearest to `near` (same length as the result).
    pub fn locate(&self, x: &[f64], near: &[f64]) -> Vec<f64> {
        match self.dim {
            3 => vec![x[0], unwrap_near(x[2].atan2(x[1]), near[1])],
            _ => {
                let r = (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
                let th = (x[3] / r).clamp(-1.0, 1.0).acos();
                vec![x[0], th, unwrap_near(x[2].atan2(x[1]), near[2])]
            }
        }
    }

    /// Difference of chart points with the periodic coordinate wrapped to (-π, π].
    pub fn wrapped_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let p = self.periodic_index();
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| if i == p { wrap_angle(x - y) } else { x - y })
            .collect()
    }
}

/// Maps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut r = a.rem_euclid(tau);
    if r > std::f64::consts::PI {
        r -= tau;
    }
    r
}

/// Representative of `a` modulo 2π nearest to `target`.
pub fn unwrap_near(a: f64, target: f64) -> f64 {
    target + wrap_angle(a - target)
}

/// Interior model: metric, boundary, one-form and carried potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldModel {
    pub metric: MetricField,
    pub boundary: Boundary,
    #[serde(default)]
    pub one_form: OneForm,
    #[serde(default)]
    pub potential: Potential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovectorClass {
    Elliptic,
    Glancing,
    Hyperbolic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Future,
    Past,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Inward,
    Outward,
}

/// Boundary point and covector in chart coordinates with its class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCovector {
    pub base: Vec<f64>,
    pub covec: Vec<f64>,
    pub class: CovectorClass,
    pub orientation: Orientation,
}

/// Interior point and covector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Full metric data at a point.
#[derive(Clone, Debug)]
pub struct MetricEval {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub dg: Vec<DMatrix<f64>>,
    /// `christoffel[k][(i, j)] = Γ^k_{ij}`.
    pub christoffel: Vec<DMatrix<f64>>,
}

/// Relative band for the glancing class.
pub const TOL_GLANCING: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ManifoldModel {
    pub fn dim(&self) -> usize {
        self.metric.dim
    }

    pub fn chart(&self) -> BoundaryChart {
        BoundaryChart {
            dim: self.dim(),
            radius: self.boundary.radius,
        }
    }

    /// Temporal function τ = t.
    pub fn temporal(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn check_point(&self, x: &[f64]) -> GeomResult<()> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite() || v.abs() > 1e8) {
            return Err(GeomError::OutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    /// Metric, inverse, first partials and Christoffel symbols at `x`.
    pub fn metric_eval(&self, x: &[f64]) -> GeomResult<MetricEval> {
        self.check_point(x)?;
        let n = self.dim();
        let d = self.metric.diag(x);
        if !(d.a.v > 0.0 && d.b.v > 0.0) {
            return Err(GeomError::Singular(x.to_vec()));
        }
        let g = self.metric.eval(x);
        let g_inv = DMatrix::from_fn(n, n, |i, j| if i == j { d.ginv(i) } else { 0.0 });
        let dg = self.metric.deriv(x);
        let christoffel = (0..n)
            .map(|k| {
                DMatrix::from_fn(n, n, |i, j| {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += g_inv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                    }
                    0.5 * s
                })
            })
            .collect();
        Ok(MetricEval {
            g,
            g_inv,
            dg,
            christoffel,
        })
    }

    /// `p(x, ξ) = -g^{jk} ξ_j ξ_k`.
    pub fn symbol(&self, x: &[f64], xi: &[f64]) -> f64 {
        let d = self.metric.diag(x);
        -(0..xi.len())
            .map(|k| d.ginv(k) * xi[k] * xi[k])
            .sum::<f64>()
    }

    pub fn cometric(&self, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let d = self.metric.diag(x);
        (0..a.len()).map(|k| d.ginv(k) * a[k] * b[k]).sum()
    }

    /// Unit normal covector `dφ_b / |dφ_b|_g`.
    pub fn unit_normal(&self, x: &[f64]) -> Vec<f64> {
        let mut dphi = vec![0.0; self.dim()];
        self.boundary.grad(x, &mut dphi);
        let norm = self.cometric(x, &dphi, &dphi).sqrt();
        dphi.iter().map(|v| v / norm).collect()
    }

    /// `|dφ_b|_g`.
    pub fn normal_length(&self, x: &[f64]) -> f64 {
        let mut dphi = vec![0.0; self.dim()];
        self.boundary.grad(x, &mut dphi);
        self.cometric(x, &dphi, &dphi).sqrt()
    }

    /// Induced metric `ḡ = Eᵀ g E` at a chart point.
    pub fn boundary_metric(&self, xb: &[f64]) -> DMatrix<f64> {
        let chart = self.chart();
        let x = chart.embed(xb);
        let e = chart.jacobian(xb);
        e.transpose() * self.metric.eval(&x) * e
    }

    /// `ḡ` and its chart partials `∂ḡ/∂x′^γ`.
    pub fn boundary_metric_jet(&self, xb: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let chart = self.chart();
        let n = self.dim();
        let m = n - 1;
        let x = chart.embed(xb);
        let e = chart.jacobian(xb);
        let hs = chart.hessians(xb);
        let g = self.metric.eval(&x);
        let dg = self.metric.deriv(&x);
        let gbar = e.transpose() * &g * &e;
        let ge = &g * &e;
        let dgbar = (0..m)
            .map(|c| {
                let mut dgc = DMatrix::zeros(n, n);
                for k in 0..n {
                    dgc += &dg[k] * e[(k, c)];
                }
                let mid = e.transpose() * dgc * &e;
                DMatrix::from_fn(m, m, |a, b| {
                    hs[a][c].dot(&ge.column(b)) + mid[(a, b)] + hs[b][c].dot(&ge.column(a))
                })
            })
            .collect();
        (gbar, dgbar)
    }

    /// Chart components of the boundary part of the reference timelike field ∂_t.
    pub fn boundary_timelike(&self, xb: &[f64]) -> DVector<f64> {
        let chart = self.chart();
        let x = chart.embed(xb);
        let e = chart.jacobian(xb);
        let g = self.metric.eval(&x);
        let mut t = DVector::zeros(self.dim());
        t[0] = 1.0;
        let gbar = e.transpose() * &g * &e;
        let rhs = e.transpose() * g * t;
        gbar.lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(self.dim() - 1))
    }

    /// Classifies a boundary covector by the sign of `ḡ^{-1}(ξ′, ξ′)`.
    pub fn classify_covector(&self, xb: &[f64], covec: &[f64]) -> GeomResult<BoundaryCovector> {
        let scale = dot(covec, covec);
        if scale == 0.0 {
            return Err(GeomError::ZeroCovector);
        }
        let gbar = self.boundary_metric(xb);
        let gi = gbar
            .try_inverse()
            .ok_or_else(|| GeomError::Singular(xb.to_vec()))?;
        let v = DVector::from_column_slice(covec);
        let q = v.dot(&(&gi * &v));
        let class = if q < -TOL_GLANCING * scale {
            CovectorClass::Hyperbolic
        } else if q.abs() <= TOL_GLANCING * scale {
            CovectorClass::Glancing
        } else {
            CovectorClass::Elliptic
        };
        let orientation = if class == CovectorClass::Elliptic {
            Orientation::None
        } else {
            let t = self.boundary_timelike(xb);
            if v.dot(&t) < 0.0 {
                Orientation::Future
            } else {
                Orientation::Past
            }
        };
        Ok(BoundaryCovector {
            base: xb.to_vec(),
            covec: covec.to_vec(),
            class,
            orientation,
        })
    }

    /// `ξ_n = sqrt(-ḡ^{-1}(ξ′, ξ′))`, zero for glancing or elliptic input.
    pub fn normal_magnitude(&self, xb: &[f64], covec: &[f64]) -> f64 {
        let gi = self
            .boundary_metric(xb)
            .try_inverse()
            .expect("Lorentzian boundary metric");
        let v = DVector::from_column_slice(covec);
        (-v.dot(&(gi * &v))).max(0.0).sqrt()
    }

    /// Null lift of a boundary covector; `Inward` gives the lift whose dual
    /// vector has a positive inward normal component.
    pub fn lift_to_null(&self, bc: &BoundaryCovector, side: Side) -> GeomResult<PhasePoint> {
        if bc.class == CovectorClass::Elliptic {
            return Err(GeomError::Elliptic);
        }
        let chart = self.chart();
        let x = chart.embed(&bc.base);
        let e = chart.jacobian(&bc.base);
        let g = self.metric.eval(&x);
        let gbar = e.transpose() * &g * &e;
        let gi = gbar
            .try_inverse()
            .ok_or_else(|| GeomError::Singular(bc.base.clone()))?;
        let v = DVector::from_column_slice(&bc.covec);
        let eta = &g * &e * (&gi * &v);
        let xn = if bc.class == CovectorClass::Glancing {
            0.0
        } else {
            (-v.dot(&(&gi * &v))).max(0.0).sqrt()
        };
        let sign = if side == Side::Inward { 1.0 } else { -1.0 };
        let nrm = self.unit_normal(&x);
        let xi = (0..self.dim())
            .map(|k| eta[k] + sign * xn * nrm[k])
            .collect();
        Ok(PhasePoint { x, xi })
    }

    /// Tangential projection `ξ′ = Eᵀ ξ` at a boundary point.
    pub fn tangential_project(
        &self,
        pp: &PhasePoint,
        near: &[f64],
    ) -> GeomResult<BoundaryCovector> {
        let phi = self.boundary.phi(&pp.x);
        if phi.abs() > 1e-8 * self.boundary.radius.powi(2) {
            return Err(GeomError::NotOnBoundary(phi));
        }
        let chart = self.chart();
        let xb = chart.locate(&pp.x, near);
        let e = chart.jacobian(&xb);
        let covec: Vec<f64> = (e.transpose() * DVector::from_column_slice(&pp.xi))
            .iter()
            .copied()
            .collect();
        self.classify_covector(&xb, &covec)
    }

    /// Signed normal component `g^{-1}(ξ, N)`.
    pub fn normal_component(&self, x: &[f64], xi: &[f64]) -> f64 {
        let n = self.unit_normal(x);
        self.cometric(x, xi, &n)
    }

    /// Second fundamental form of a null boundary tangent and the Hamiltonian
    /// cross-check `H_p²φ_b / |dφ_b|_g = -4 II(V, V)`.
    pub fn null_convexity(&self, xb: &[f64], v: &[f64]) -> GeomResult<NullConvexity> {
        let chart = self.chart();
        let n = self.dim();
        let x = chart.embed(xb);
        let e = chart.jacobian(xb);
        let vb = DVector::from_column_slice(v);
        let gbar = self.boundary_metric(xb);
        let gvv = vb.dot(&(&gbar * &vb));
        let scale = vb.norm_squared() * gbar.norm();
        if gvv.abs() > 1e-8 * scale {
            return Err(GeomError::NotNullTangent(gvv));
        }
        let vf = &e * &vb;
        let me = self.metric_eval(&x)?;
        let mut dphi = vec![0.0; n];
        self.boundary.grad(&x, &mut dphi);
        let hess = self.boundary.hess(n);
        let mut cov_hess = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut h = hess[(i, j)];
                for k in 0..n {
                    h -= me.christoffel[k][(i, j)] * dphi[k];
                }
                cov_hess += h * vf[i] * vf[j];
            }
        }
        let dnorm = self.normal_length(&x);
        let ii = -cov_hess / dnorm;

        // Second derivative of φ_b along the Hamiltonian flow from the glancing lift.
        let xi = &me.g * &vf;
        let d = self.metric.diag(&x);
        let xdot: Vec<f64> = (0..n).map(|k| -2.0 * d.ginv(k) * xi[k]).collect();
        let xidot: Vec<f64> = (0..n)
            .map(|l| (0..n).map(|k| d.dginv(k, l) * xi[k] * xi[k]).sum())
            .collect();
        let mut hp2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                hp2 += hess[(i, j)] * xdot[i] * xdot[j];
            }
        }
        for k in 0..n {
            let mut xdd = 0.0;
            for l in 0..n {
                xdd += d.dginv(k, l) * xdot[l] * xi[k];
            }
            xdd = -2.0 * (xdd + d.ginv(k) * xidot[k]);
            hp2 += dphi[k] * xdd;
        }
        let normalized = hp2 / dnorm;
        let consistent = (normalized + 4.0 * ii).abs() <= 1e-6 * (4.0 * ii.abs()).max(1e-300);
        Ok(NullConvexity {
            second_fundamental_form: ii,
            hp2_phi: hp2,
            normalized_hp2_phi: normalized,
            consistent,
        })
    }

    /// Null boundary tangents at `xb`: `count` samples around the cone (two for n = 3).
    pub fn null_tangents(&self, xb: &[f64], count: usize) -> Vec<Vec<f64>> {
        let gbar = self.boundary_metric(xb);
        let m = gbar.nrows();
        let eig = nalgebra::SymmetricEigen::new(gbar);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let t = eig.eigenvectors.column(idx[0]) / eig.eigenvalues[idx[0]].abs().sqrt();
        let spatial: Vec<DVector<f64>> = idx[1..]
            .iter()
            .map(|&i| eig.eigenvectors.column(i) / eig.eigenvalues[i].abs().sqrt())
            .collect();
        let dirs: Vec<Vec<f64>> = if m == 2 {
            vec![vec![1.0], vec![-1.0]]
        } else {
            (0..count.max(3))
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / count.max(3) as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect()
        };
        dirs.iter()
            .map(|c| {
                let mut v = t.clone();
                for (ci, s) in c.iter().zip(&spatial) {
                    v += s * *ci;
                }
                v.iter().copied().collect()
            })
            .collect()
    }

    /// Admissibility on sampled boundary points.
    pub fn check_admissibility(&self, grid: &[Vec<f64>], directions: usize) -> AdmissibilityReport {
        let chart = self.chart();
        let points: Vec<PointAdmissibility> = grid
            .iter()
            .map(|xb| {
                let x = chart.embed(xb);
                let mut dt = vec![0.0; self.dim()];
                dt[0] = 1.0;
                let dtau_timelike = self.cometric(&x, &dt, &dt) < 0.0;
                let gbar = self.boundary_metric(xb);
                let eig = nalgebra::SymmetricEigen::new(gbar);
                let neg = eig.eigenvalues.iter().filter(|v| **v < 0.0).count();
                let pos = eig.eigenvalues.iter().filter(|v| **v > 0.0).count();
                let gbar_lorentzian = neg == 1 && pos == self.dim() - 2;
                let mut min_ii = f64::INFINITY;
                let mut consistent = true;
                if gbar_lorentzian {
                    for v in self.null_tangents(xb, directions) {
                        match self.null_convexity(xb, &v) {
                            Ok(nc) => {
                                min_ii = min_ii.min(nc.second_fundamental_form);
                                consistent &= nc.consistent;
                            }
                            Err(_) => consistent = false,
                        }
                    }
                }
                let pass = dtau_timelike && gbar_lorentzian && min_ii > 0.0 && consistent;
                PointAdmissibility {
                    base: xb.clone(),
                    dtau_timelike,
                    gbar_lorentzian,
                    min_second_fundamental_form: min_ii,
                    hamiltonian_consistent: consistent,
                    pass,
                }
            })
            .collect();
        let min_ii = points
            .iter()
            .map(|p| p.min_second_fundamental_form)
            .fold(f64::INFINITY, f64::min);
        let pass = !points.is_empty() && points.iter().all(|p| p.pass);
        AdmissibilityReport {
            points,
            min_second_fundamental_form: min_ii,
            pass,
        }
    }

    /// Semi-geodesic chart around `xb` reaching `depth` into the interior.
    pub fn semi_geodesic_chart(&self, xb: &[f64], depth: f64) -> GeomResult<SemiGeodesicChart> {
        let chart = SemiGeodesicChart {
            model: self.clone(),
            base: xb.to_vec(),
            depth,
        };
        chart.check_caustics()?;
        Ok(chart)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullConvexity {
    pub second_fundamental_form: f64,
    pub hp2_phi: f64,
    pub normalized_hp2_phi: f64,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAdmissibility {
    pub base: Vec<f64>,
    pub dtau_timelike: bool,
    pub gbar_lorentzian: bool,
    pub min_second_fundamental_form: f64,
    pub hamiltonian_consistent: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub points: Vec<PointAdmissibility>,
    pub min_second_fundamental_form: f64,
    pub pass: bool,
}

/// Geodesic flow of `½ g^{-1}(ξ, ξ)`: unit-speed normal geodesics.
struct GeodesicFlow<'a> {
    model: &'a ManifoldModel,
}

impl System for GeodesicFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.model.dim()
    }
    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.dim();
        let d = self.model.metric.diag(&y[..n]);
        for k in 0..n {
            dy[k] = d.ginv(k) * y[n + k];
        }
        for l in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += d.dginv(k, l) * y[n + k] * y[n + k];
            }
            dy[n + l] = -0.5 * s;
        }
    }
}

/// `Ψ(x′, s)`: follow the unit-speed inward normal geodesic from `x′` for length `s`.
#[derive(Clone, Debug)]
pub struct SemiGeodesicChart {
    model: ManifoldModel,
    pub base: Vec<f64>,
    pub depth: f64,
}

impl SemiGeodesicChart {
    pub fn map(&self, xb: &[f64], s: f64) -> GeomResult<Vec<f64>> {
        let chart = self.model.chart();
        let x = chart.embed(xb);
        let n = self.model.dim();
        if s == 0.0 {
            return Ok(x);
        }
        let nrm = self.model.unit_normal(&x);
        let mut y0 = x.clone();
        y0.extend_from_slice(&nrm);
        let sys = GeodesicFlow { model: &self.model };
        let tol = Tolerances {
            rtol: 1e-13,
            atol: 1e-15,
            h_max: 0.05,
            ..Tolerances::default()
        };
        let mut it = Dopri5::new(&sys, 0.0, &y0, 1e-3, tol);
        while it.s < s {
            it.limit_next_step(s - it.s);
            it.advance()
                .map_err(|e| GeomError::Integration(e.to_string()))?;
        }
        let mut out = vec![0.0; 2 * n];
        it.dense(s, &mut out);
        out.truncate(n);
        Ok(out)
    }

    /// Jacobian of `(x′, s) ↦ Ψ` by central differences (columns x′..., s).
    pub fn jacobian(&self, xb: &[f64], s: f64) -> GeomResult<DMatrix<f64>> {
        let n = self.model.dim();
        let h = 1e-5;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = xb.to_vec();
        for a in 0..n - 1 {
            let x0 = xp[a];
            xp[a] = x0 + h;
            let p = self.map(&xp, s)?;
            xp[a] = x0 - h;
            let m = self.map(&xp, s)?;
            xp[a] = x0;
            for k in 0..n {
                jac[(k, a)] = (p[k] - m[k]) / (2.0 * h);
            }
        }
        let (sp, sm) = if s >= h { (s + h, s - h) } else { (s + h, s) };
        let p = self.map(xb, sp)?;
        let m = self.map(xb, sm)?;
        for k in 0..n {
            jac[(k, n - 1)] = (p[k] - m[k]) / (sp - sm);
        }
        Ok(jac)
    }

    /// Pulled-back metric in `(x′, s)` coordinates.
    pub fn pulled_back_metric(&self, xb: &[f64], s: f64) -> GeomResult<DMatrix<f64>> {
        let jac = self.jacobian(xb, s)?;
        let x = self.map(xb, s)?;
        let g = self.model.metric.eval(&x);
        Ok(jac.transpose() * g * jac)
    }

    /// Largest deviation from the block form `g_ss = 1`, `g_αs = 0` at samples.
    pub fn block_residual(&self, samples: &[(Vec<f64>, f64)]) -> GeomResult<f64> {
        let n = self.model.dim();
        let mut worst: f64 = 0.0;
        for (xb, s) in samples {
            let g = self.pulled_back_metric(xb, *s)?;
            worst = worst.max((g[(n - 1, n - 1)] - 1.0).abs());
            for a in 0..n - 1 {
                worst = worst.max(g[(a, n - 1)].abs());
            }
        }
        Ok(worst)
    }

    fn check_caustics(&self) -> GeomResult<()> {
        let steps = 48;
        let mut sign0 = None;
        for i in 0..=steps {
            let s = self.depth * i as f64 / steps as f64;
            let det = self.jacobian(&self.base, s)?.determinant();
            let sg = det.signum();
            match sign0 {
                None => sign0 = Some(sg),
                Some(s0) if sg != s0 || det.abs() < 1e-10 => return Err(GeomError::Caustic(s)),
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cylinder(r: f64) -> ManifoldModel {
        ManifoldModel {
            metric: MetricField::minkowski(3),
            boundary: Boundary {
                radius: r,
                exterior: false,
            },
            one_form: OneForm::zero(),
            potential: Potential::default(),
        }
    }

    #[test]
    fn minkowski_metric_eval() {
        let m = cylinder(1.0);
        let me = m.metric_eval(&[0.3, 0.1, -0.2]).unwrap();
        assert_eq!(
            me.g,
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0]))
        );
        assert!(me.christoffel.iter().all(|c| c.iter().all(|v| *v == 0.0)));
        assert!(((&me.g * &me.g_inv) - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let m = cylinder(1.0);
        let xb = [0.0, 0.0];
        assert_eq!(
            m.classify_covector(&xb, &[1.0, 0.5]).unwrap().class,
            CovectorClass::Hyperbolic
        );
        assert_eq!(
            m.classify_covector(&xb, &[1.0, 1.0]).unwrap().class,
            CovectorClass::Glancing
        );
        assert_eq!(
            m.classify_covector(&xb, &[1.0, 2.0]).unwrap().class,
            CovectorClass::Elliptic
        );
        assert_eq!(
            m.classify_covector(&xb, &[-1.0, 0.0]).unwrap().orientation,
            Orientation::Future
        );
        assert_eq!(
            m.classify_covector(&xb, &[1.0, 0.0]).unwrap().orientation,
            Orientation::Past
        );
        assert!(m.classify_covector(&xb, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn lift_examples() {
        let m = cylinder(1.0);
        let bc = m.classify_covector(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        let pp = m.lift_to_null(&bc, Side::Inward).unwrap();
        assert!((m.normal_component(&pp.x, &pp.xi) - 1.0).abs() < 1e-15);
        assert_eq!(pp.xi, vec![-1.0, -1.0, 0.0]);
        let bc = m.classify_covector(&[0.0, 0.0], &[1.0, 0.5]).unwrap();
        let pp = m.lift_to_null(&bc, Side::Outward).unwrap();
        assert!((m.normal_component(&pp.x, &pp.xi) + 0.75f64.sqrt()).abs() < 1e-15);
        assert!(m.symbol(&pp.x, &pp.xi).abs() < 1e-15);
        let back = m.tangential_project(&pp, &[0.0, 0.0]).unwrap();
        assert!((back.covec[0] - 1.0).abs() < 1e-15 && (back.covec[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_operator_of_cylinders() {
        for r in [1.0, 2.0] {
            let m = cylinder(r);
            let nc = m.null_convexity(&[0.0, 0.3], &[1.0, 1.0 / r]).unwrap();
            assert!((nc.second_fundamental_form - 1.0 / r).abs() < 1e-14);
            assert!(nc.consistent);
        }
    }

    #[test]
    fn exterior_is_concave() {
        let mut m = cylinder(1.0);
        m.boundary.exterior = true;
        let rep = m.check_admissibility(&[vec![0.0, 0.0]], 4);
        assert!(!rep.pass);
        assert!(rep.min_second_fundamental_form < 0.0);
    }

    #[test]
    fn semi_geodesic_flat() {
        let m = cylinder(1.0);
        let c = m.semi_geodesic_chart(&[0.0, 0.0], 0.5).unwrap();
        let p = c.map(&[0.0, 0.0], 0.25).unwrap();
        assert!((p[1] - 0.75).abs() < 1e-12 && p[2].abs() < 1e-12);
        let res = c
            .block_residual(&[(vec![0.0, 0.0], 0.3), (vec![0.2, 0.1], 0.1)])
            .unwrap();
        assert!(res < 1e-8, "{res:e}");
        assert!(matches!(
            m.semi_geodesic_chart(&[0.0, 0.0], 1.5),
            Err(GeomError::Caustic(_))
        ));
    }

    #[test]
    fn boundary_metric_derivative_matches_differences() {
        let mut m = cylinder(1.3);
        m.metric.conformal = ScalarField::smoothstep(ScalarField::coord(1), -0.5, 0.5).scaled(0.2);
        m.metric.lapse = ScalarField::constant(1.0).plus(
            ScalarField::coord(0)
                .times(ScalarField::coord(0))
                .scaled(0.1),
        );
        let xb = [0.4, 2.1];
        let (_, dg) = m.boundary_metric_jet(&xb);
        for c in 0..2 {
            let mut p = xb;
            p[c] += 1e-6;
            let gp = m.boundary_metric(&p);
            p[c] -= 2e-6;
            let gm = m.boundary_metric(&p);
            let fd = (gp - gm) / 2e-6;
            assert!((fd - &dg[c]).norm() < 1e-8);
        }
    }
}
