//! Null bicharacteristics, reflections, broken trajectories and gliding rays.
//!
//! The Hamiltonian field of `p = -g^{jk} ξ_j ξ_k` is
//! `ẋ = -2 g^{-1} ξ`, `ξ̇_l = ∂_l g^{jk} ξ_j ξ_k`. A trace multiplies it by a
//! direction sign `σ = ±1` chosen so that the parameter increases towards the
//! causal future (forward traces) or the past (backward traces). The state
//! carries the running line integral of the one-form as an extra component.
//!
//! Arcs are glued with a continuous parameter across reflections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::MAX_DIM;
use crate::geometry::{
    BoundaryCovector, CovectorClass, GeomError, ManifoldModel, Orientation, PhasePoint, Side,
};
use crate::ode::{bisect, Dopri5, OdeError, System, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("source covector is {0:?}, expected {1:?}")]
    WrongClass(CovectorClass, CovectorClass),
    #[error("tangency: chord too short to resolve at s = {0}")]
    Tangency(f64),
    #[error("glancing reflection (zero normal component)")]
    GlancingReflection,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type FlowResult<T> = Result<T, FlowError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeDirection {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tol: Tolerances,
    /// Shell tolerance relative to `|ξ|²`.
    pub tol_shell: f64,
    /// Rescale `ξ_t` back onto the shell when drift exceeds `tol_shell / 10`.
    pub reproject: bool,
    /// Keep every accepted step of every arc.
    pub record_samples: bool,
    /// Incidence ratio `ξ_n / |ξ′|` below which an event is near-glancing.
    pub near_glancing: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: Tolerances::default(),
            tol_shell: 1e-8,
            reproject: true,
            record_samples: false,
            near_glancing: 1e-6,
        }
    }
}

impl FlowOptions {
    pub fn precise() -> Self {
        FlowOptions {
            tol: Tolerances::default().with_rtol(1e-13),
            ..Default::default()
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_samples = true;
        self
    }
}

/// Temporal bound and event budget of a trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Upper bound on `t` for forward traces, lower bound for backward ones.
    pub t_bound: f64,
    pub max_events: usize,
}

impl Window {
    pub fn until(t_bound: f64) -> Self {
        Window {
            t_bound,
            max_events: 100_000,
        }
    }

    pub fn events(max_events: usize) -> Self {
        Window {
            t_bound: f64::INFINITY,
            max_events,
        }
    }
}

/// Slack on the temporal window bound.
pub const WINDOW_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSample {
    pub s: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub p_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub samples: Vec<ArcSample>,
    /// Largest `|p| / |ξ|²` seen at accepted steps.
    pub max_shell: f64,
    pub reprojections: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEvent {
    pub s: f64,
    pub point: Vec<f64>,
    pub incoming: Vec<f64>,
    pub outgoing: Vec<f64>,
    pub covector: BoundaryCovector,
    /// `ξ_n ≥ 0`, the magnitude of the normal component.
    pub normal: f64,
    pub tau: f64,
    /// `∫ A(γ̇) ds` from the source, along the traversal direction.
    pub a_integral: f64,
    pub near_glancing: bool,
    /// `|p| / |ξ|²` at the located hit before shell re-projection.
    pub shell_at_hit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrokenTrajectory {
    pub source: BoundaryCovector,
    pub direction: TimeDirection,
    pub sigma: f64,
    pub arcs: Vec<Arc>,
    pub events: Vec<ReflectionEvent>,
    /// The last arc was cut by the window rather than a boundary hit.
    pub truncated: bool,
}

impl BrokenTrajectory {
    pub fn max_shell(&self) -> f64 {
        self.arcs.iter().map(|a| a.max_shell).fold(0.0, f64::max)
    }
}

/// Hamiltonian field with direction sign and the one-form integral.
pub(crate) struct Bichar<'a> {
    pub model: &'a ManifoldModel,
    pub sigma: f64,
    pub with_a: bool,
}

impl System for Bichar<'_> {
    fn dim(&self) -> usize {
        2 * self.model.dim() + 1
    }

    #[inline]
    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.dim();
        let x = &y[..n];
        let xi = &y[n..2 * n];
        let d = self.model.metric.diag(x);
        let xi_s2: f64 = xi[1..].iter().map(|v| v * v).sum();
        let xt2 = xi[0] * xi[0];
        let ia2 = 1.0 / (d.a.v * d.a.v);
        let ib2 = 1.0 / (d.b.v * d.b.v);
        dy[0] = self.sigma * 2.0 * xi[0] / d.a.v;
        for k in 1..n {
            dy[k] = -self.sigma * 2.0 * xi[k] / d.b.v;
        }
        for l in 0..n {
            dy[n + l] = self.sigma * (d.a.g[l] * ia2 * xt2 - d.b.g[l] * ib2 * xi_s2);
        }
        dy[2 * n] = if self.with_a {
            let mut a = [0.0; MAX_DIM];
            self.model.one_form.eval(x, &mut a[..n]);
            (0..n).map(|k| a[k] * dy[k]).sum()
        } else {
            0.0
        };
    }
}

/// `(ẋ, ξ̇)` of `H_p` at a phase point.
pub fn hamiltonian_rhs(model: &ManifoldModel, pp: &PhasePoint) -> (Vec<f64>, Vec<f64>) {
    let n = model.dim();
    let sys = Bichar {
        model,
        sigma: 1.0,
        with_a: false,
    };
    let mut y = pp.x.clone();
    y.extend_from_slice(&pp.xi);
    y.push(0.0);
    let mut dy = vec![0.0; 2 * n + 1];
    sys.rhs(0.0, &y, &mut dy);
    (dy[..n].to_vec(), dy[n..2 * n].to_vec())
}

/// Direction sign: parameter increases towards the future for forward traces.
pub fn direction_sign(orientation: Orientation, direction: TimeDirection) -> f64 {
    let future = match orientation {
        Orientation::Past => 1.0,
        _ => -1.0,
    };
    match direction {
        TimeDirection::Forward => future,
        TimeDirection::Backward => -future,
    }
}

/// Lift whose trajectory enters the interior for the given direction sign.
pub fn entering_side(sigma: f64) -> Side {
    if sigma < 0.0 {
        Side::Inward
    } else {
        Side::Outward
    }
}

/// Reflection `ξ ↦ ξ - 2 g^{-1}(ξ, N) N`.
pub fn reflect(model: &ManifoldModel, x: &[f64], xi: &[f64]) -> FlowResult<Vec<f64>> {
    let nrm = model.unit_normal(x);
    let c = model.cometric(x, xi, &nrm);
    if c == 0.0 {
        return Err(FlowError::GlancingReflection);
    }
    Ok(xi.iter().zip(&nrm).map(|(v, n)| v - 2.0 * c * n).collect())
}

fn shell_ratio(model: &ManifoldModel, x: &[f64], xi: &[f64]) -> f64 {
    let e: f64 = xi.iter().map(|v| v * v).sum();
    model.symbol(x, xi).abs() / e
}

/// First and second derivative of `φ_b` along `σ H_p`.
fn boundary_derivatives(model: &ManifoldModel, x: &[f64], xi: &[f64], sigma: f64) -> (f64, f64) {
    let n = model.dim();
    let d = model.metric.diag(x);
    let mut dphi = [0.0; MAX_DIM];
    model.boundary.grad(x, &mut dphi[..n]);
    let hs = if model.boundary.exterior { 2.0 } else { -2.0 };
    let xdot: Vec<f64> = (0..n).map(|k| -2.0 * sigma * d.ginv(k) * xi[k]).collect();
    let xidot: Vec<f64> = (0..n)
        .map(|l| sigma * (0..n).map(|k| d.dginv(k, l) * xi[k] * xi[k]).sum::<f64>())
        .collect();
    let h1: f64 = (0..n).map(|k| dphi[k] * xdot[k]).sum();
    let mut h2: f64 = (1..n).map(|k| hs * xdot[k] * xdot[k]).sum();
    for k in 0..n {
        let mut acc = 0.0;
        for l in 0..n {
            acc += d.dginv(k, l) * xdot[l] * xi[k];
        }
        h2 += dphi[k] * (-2.0 * sigma) * (acc + d.ginv(k) * xidot[k]);
    }
    (h1, h2)
}

/// Why an arc ended.
#[derive(Clone, Debug, PartialEq)]
pub enum ArcEnd {
    Hit { s: f64, y: Vec<f64>, shell: f64 },
    Window { s: f64, y: Vec<f64> },
}

/// Integrates one interior arc from `start` until it leaves through the
/// boundary or crosses the temporal bound.
pub fn integrate_arc(
    model: &ManifoldModel,
    start: &PhasePoint,
    sigma: f64,
    s0: f64,
    a0: f64,
    t_bound: f64,
    opts: &FlowOptions,
) -> FlowResult<(Arc, ArcEnd)> {
    let n = model.dim();
    let with_a = !model.one_form.is_zero();
    let sys = Bichar {
        model,
        sigma,
        with_a,
    };
    let mut y0 = start.x.clone();
    y0.extend_from_slice(&start.xi);
    y0.push(a0);
    let (h1, h2) = boundary_derivatives(model, &start.x, &start.xi, sigma);
    let chord = if h1 > 0.0 && h2 < 0.0 {
        -2.0 * h1 / h2
    } else {
        opts.tol.h_max
    };
    let h0 = (0.02 * chord)
        .min(opts.tol.h_max)
        .max(opts.tol.h_min * 10.0);
    let mut it = Dopri5::new(&sys, s0, &y0, h0, opts.tol);
    let forward_in_t = (start.xi[0] / model.metric.diag(&start.x).a.v) * sigma > 0.0
        || (start.xi[0] == 0.0 && sigma < 0.0);
    let t_sign = if forward_in_t { 1.0 } else { -1.0 };
    let t_limit = t_bound + t_sign * WINDOW_SLACK;
    let mut arc = Arc::default();
    let mut buf = vec![0.0; 2 * n + 1];
    if opts.record_samples {
        arc.samples.push(ArcSample {
            s: s0,
            x: start.x.clone(),
            xi: start.xi.clone(),
            p_residual: model.symbol(&start.x, &start.xi),
        });
    }
    let mut first = true;
    loop {
        it.advance()?;
        let (sa, sb) = (it.step_start(), it.s);
        let ratio = shell_ratio(model, &it.y[..n], &it.y[n..2 * n]);
        arc.max_shell = arc.max_shell.max(ratio);
        let phi_end = model.boundary.phi(&it.y[..n]);
        if phi_end <= 0.0 {
            let mut left = sa;
            if first {
                // The step started on the boundary; find an interior point inside it.
                let mut found = None;
                for j in (1..64).rev() {
                    let s = sa + (sb - sa) * j as f64 / 64.0;
                    it.dense(s, &mut buf);
                    if model.boundary.phi(&buf[..n]) > 0.0 {
                        found = Some(s);
                        break;
                    }
                }
                match found {
                    Some(s) => left = s,
                    None => return Err(FlowError::Tangency(sa)),
                }
            }
            let mut probe = vec![0.0; 2 * n + 1];
            let s_hit = bisect(
                |s| {
                    it.dense(s, &mut probe);
                    model.boundary.phi(&probe[..n])
                },
                left,
                sb,
                200,
            );
            it.dense(s_hit, &mut buf);
            // A step can cross the time limit before it reaches the boundary;
            // then the window cut below wins.
            if (buf[0] - t_limit) * t_sign <= 0.0 {
                let shell = shell_ratio(model, &buf[..n], &buf[n..2 * n]);
                if opts.record_samples {
                    arc.samples.push(ArcSample {
                        s: s_hit,
                        x: buf[..n].to_vec(),
                        xi: buf[n..2 * n].to_vec(),
                        p_residual: model.symbol(&buf[..n], &buf[n..2 * n]),
                    });
                }
                return Ok((
                    arc,
                    ArcEnd::Hit {
                        s: s_hit,
                        y: buf,
                        shell,
                    },
                ));
            }
        }
        first = false;
        let t_end = it.y[0];
        if (t_end - t_limit) * t_sign > 0.0 {
            let mut probe = vec![0.0; 2 * n + 1];
            let s_cut = bisect(
                |s| {
                    it.dense(s, &mut probe);
                    (t_limit - probe[0]) * t_sign
                },
                sa,
                sb,
                200,
            );
            it.dense(s_cut, &mut buf);
            arc.truncated = true;
            if opts.record_samples {
                arc.samples.push(ArcSample {
                    s: s_cut,
                    x: buf[..n].to_vec(),
                    xi: buf[n..2 * n].to_vec(),
                    p_residual: model.symbol(&buf[..n], &buf[n..2 * n]),
                });
            }
            return Ok((arc, ArcEnd::Window { s: s_cut, y: buf }));
        }
        if opts.reproject && ratio > opts.tol_shell / 10.0 {
            let mut y = it.y.clone();
            let d = model.metric.diag(&y[..n]);
            let xs2: f64 = y[n + 1..2 * n].iter().map(|v| v * v).sum();
            y[n] = y[n].signum() * (d.a.v * xs2 / d.b.v).sqrt();
            it.reset_state(sb, &y);
            arc.reprojections += 1;
        }
        if opts.record_samples {
            arc.samples.push(ArcSample {
                s: sb,
                x: it.y[..n].to_vec(),
                xi: it.y[n..2 * n].to_vec(),
                p_residual: model.symbol(&it.y[..n], &it.y[n..2 * n]),
            });
        }
    }
}

/// Angle target for unwrapping the exit point of a chord.
fn exit_target(
    model: &ManifoldModel,
    prev: &[f64],
    x: &[f64],
    xdot: &[f64],
    source: &[f64],
) -> Vec<f64> {
    let n = model.dim();
    let p = n - 2;
    let lz = x[1] * xdot[2] - x[2] * xdot[1];
    let scale = (x[1].hypot(x[2])) * (xdot[1].hypot(xdot[2]));
    let mut near = prev.to_vec();
    let half = std::f64::consts::FRAC_PI_2;
    if lz.abs() > 1e-9 * scale {
        near[p] = prev[p] + lz.signum() * half;
    } else if prev[p] <= source[p] {
        near[p] = prev[p] + 2.0 * half;
    } else {
        near[p] = prev[p] - 2.0 * half;
    }
    near
}

/// Finalizes a located hit: snap onto the boundary, restore the shell,
/// reflect, and project.
#[allow(clippy::too_many_arguments)]
fn make_event(
    model: &ManifoldModel,
    s: f64,
    y: &[f64],
    sigma: f64,
    prev_base: &[f64],
    source_base: &[f64],
    shell: f64,
    opts: &FlowOptions,
) -> FlowResult<ReflectionEvent> {
    let n = model.dim();
    let mut x = y[..n].to_vec();
    model.boundary.snap(&mut x);
    let nrm = model.unit_normal(&x);
    let xi_raw = &y[n..2 * n];
    let lam = model.cometric(&x, xi_raw, &nrm);
    let eta: Vec<f64> = xi_raw.iter().zip(&nrm).map(|(v, m)| v - lam * m).collect();
    let mag = (-model.cometric(&x, &eta, &eta)).max(0.0).sqrt();
    let lam_fixed = lam.signum() * mag;
    let incoming: Vec<f64> = eta
        .iter()
        .zip(&nrm)
        .map(|(v, m)| v + lam_fixed * m)
        .collect();
    let outgoing: Vec<f64> = eta
        .iter()
        .zip(&nrm)
        .map(|(v, m)| v - lam_fixed * m)
        .collect();
    let d = model.metric.diag(&x);
    let xdot: Vec<f64> = (0..n)
        .map(|k| -2.0 * sigma * d.ginv(k) * incoming[k])
        .collect();
    let chart = model.chart();
    let near = exit_target(model, prev_base, &x, &xdot, source_base);
    let base = chart.locate(&x, &near);
    let e = chart.jacobian(&base);
    let covec: Vec<f64> = (e.transpose() * DVector::from_column_slice(&incoming))
        .iter()
        .copied()
        .collect();
    let covector = model.classify_covector(&base, &covec)?;
    let tnorm = covec.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ReflectionEvent {
        s,
        tau: model.temporal(&x),
        point: x,
        incoming,
        outgoing,
        normal: mag,
        a_integral: y[2 * n],
        near_glancing: mag < opts.near_glancing * tnorm,
        shell_at_hit: shell,
        covector,
    })
}

/// Broken bicharacteristic from a hyperbolic boundary covector.
pub fn trace(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    window: &Window,
    direction: TimeDirection,
    opts: &FlowOptions,
) -> FlowResult<BrokenTrajectory> {
    if source.class != CovectorClass::Hyperbolic {
        return Err(FlowError::WrongClass(
            source.class,
            CovectorClass::Hyperbolic,
        ));
    }
    let sigma = direction_sign(source.orientation, direction);
    let start = model.lift_to_null(source, entering_side(sigma))?;
    let t_bound = match direction {
        TimeDirection::Forward => window.t_bound,
        TimeDirection::Backward => {
            if window.t_bound.is_finite() {
                window.t_bound
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    let mut traj = BrokenTrajectory {
        source: source.clone(),
        direction,
        sigma,
        arcs: vec![],
        events: vec![],
        truncated: false,
    };
    let mut pp = start;
    let mut s = 0.0;
    let mut a = 0.0;
    let mut prev_base = source.base.clone();
    while traj.events.len() < window.max_events {
        let (arc, end) = integrate_arc(model, &pp, sigma, s, a, t_bound, opts)?;
        traj.arcs.push(arc);
        match end {
            ArcEnd::Window { .. } => {
                traj.truncated = true;
                break;
            }
            ArcEnd::Hit { s: sh, y, shell } => {
                let ev = make_event(model, sh, &y, sigma, &prev_base, &source.base, shell, opts)?;
                prev_base = ev.covector.base.clone();
                pp = PhasePoint {
                    x: ev.point.clone(),
                    xi: ev.outgoing.clone(),
                };
                s = sh;
                a = ev.a_integral;
                traj.events.push(ev);
            }
        }
    }
    Ok(traj)
}

/// Forward broken trajectory in the causal future of the source.
pub fn trace_broken(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    window: &Window,
    opts: &FlowOptions,
) -> FlowResult<BrokenTrajectory> {
    trace(model, source, window, TimeDirection::Forward, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlideSample {
    pub s: f64,
    pub base: Vec<f64>,
    pub covec: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlidingRay {
    pub samples: Vec<GlideSample>,
    pub direction: TimeDirection,
    pub sigma: f64,
}

/// Bounds for boundary-curve integrations: stop at `t_bound` (in the
/// direction of travel) or after `s_max`; sample every `ds`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveWindow {
    pub t_bound: f64,
    pub s_max: f64,
    pub ds: f64,
}

struct BoundaryHamiltonian<'a> {
    model: &'a ManifoldModel,
    sigma: f64,
}

impl System for BoundaryHamiltonian<'_> {
    fn dim(&self) -> usize {
        2 * (self.model.dim() - 1)
    }
    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let m = self.model.dim() - 1;
        let (gbar, dgbar) = self.model.boundary_metric_jet(&y[..m]);
        let gi = gbar.try_inverse().expect("Lorentzian boundary metric");
        let xi = DVector::from_column_slice(&y[m..]);
        let v = &gi * &xi;
        for a in 0..m {
            dy[a] = -2.0 * self.sigma * v[a];
        }
        for c in 0..m {
            dy[m + c] = -self.sigma * v.dot(&(&dgbar[c] * &v));
        }
    }
}

struct BoundaryGeodesic<'a> {
    model: &'a ManifoldModel,
}

impl System for BoundaryGeodesic<'_> {
    fn dim(&self) -> usize {
        2 * (self.model.dim() - 1)
    }
    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let m = self.model.dim() - 1;
        let (gbar, dgbar) = self.model.boundary_metric_jet(&y[..m]);
        let gi = gbar.try_inverse().expect("Lorentzian boundary metric");
        let v = &y[m..];
        dy[..m].copy_from_slice(v);
        // Γ_{l,ij} v^i v^j = ½(2 ∂_i g_{lj} - ∂_l g_{ij}) v^i v^j
        let mut low = DVector::zeros(m);
        for l in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += (dgbar[i][(l, j)] - 0.5 * dgbar[l][(i, j)]) * v[i] * v[j];
                }
            }
            low[l] = acc;
        }
        let acc = gi * low;
        for k in 0..m {
            dy[m + k] = -acc[k];
        }
    }
}

fn integrate_curve<S: System>(
    sys: &S,
    y0: &[f64],
    window: &CurveWindow,
    tol: Tolerances,
    mut emit: impl FnMut(f64, &[f64]),
) -> FlowResult<()> {
    let m = y0.len() / 2;
    let mut it = Dopri5::new(sys, 0.0, y0, window.ds.min(1e-2), tol);
    let t0 = y0[0];
    let mut buf = vec![0.0; y0.len()];
    emit(0.0, y0);
    let mut next = window.ds;
    let mut t_sign = 0.0;
    loop {
        it.advance()?;
        if t_sign == 0.0 {
            t_sign = (it.y[0] - t0).signum();
        }
        let sb = it.s;
        let past_t = t_sign != 0.0 && (it.y[0] - window.t_bound) * t_sign > 0.0;
        let stop_s = if past_t {
            let mut probe = vec![0.0; y0.len()];
            bisect(
                |s| {
                    it.dense(s, &mut probe);
                    (window.t_bound - probe[0]) * t_sign
                },
                it.step_start(),
                sb,
                200,
            )
        } else {
            sb.min(window.s_max)
        };
        while next <= stop_s + 1e-12 {
            it.dense(next, &mut buf);
            emit(next, &buf);
            next += window.ds;
        }
        if past_t || sb >= window.s_max {
            let _ = m;
            return Ok(());
        }
    }
}

/// Gliding ray: the Hamiltonian flow of `p|_{T*∂M} = -ḡ^{-1}(ξ′, ξ′)` in the
/// boundary chart, traversed in the forward direction of the source.
pub fn trace_gliding(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    window: &CurveWindow,
    direction: TimeDirection,
    tol: Tolerances,
) -> FlowResult<GlidingRay> {
    if source.class != CovectorClass::Glancing {
        return Err(FlowError::WrongClass(source.class, CovectorClass::Glancing));
    }
    let sigma = direction_sign(source.orientation, direction);
    let m = model.dim() - 1;
    let sys = BoundaryHamiltonian { model, sigma };
    let mut y0 = source.base.clone();
    y0.extend_from_slice(&source.covec);
    let mut samples = vec![];
    integrate_curve(&sys, &y0, window, tol, |s, y| {
        samples.push(GlideSample {
            s,
            base: y[..m].to_vec(),
            covec: y[m..].to_vec(),
        })
    })?;
    Ok(GlidingRay {
        samples,
        direction,
        sigma,
    })
}

/// Geodesic of `(∂M, ḡ)` with initial velocity `v` (tangent form).
pub fn boundary_null_geodesic(
    model: &ManifoldModel,
    base: &[f64],
    v: &[f64],
    window: &CurveWindow,
    tol: Tolerances,
) -> FlowResult<Vec<(f64, Vec<f64>, Vec<f64>)>> {
    let gbar = model.boundary_metric(base);
    let vv = DVector::from_column_slice(v);
    let q = vv.dot(&(&gbar * &vv));
    if q.abs() > 1e-8 * vv.norm_squared() * gbar.norm() {
        return Err(FlowError::Geom(GeomError::NotNullTangent(q)));
    }
    let m = model.dim() - 1;
    let sys = BoundaryGeodesic { model };
    let mut y0 = base.to_vec();
    y0.extend_from_slice(v);
    let mut out = vec![];
    integrate_curve(&sys, &y0, window, tol, |s, y| {
        out.push((s, y[..m].to_vec(), y[m..].to_vec()))
    })?;
    Ok(out)
}

/// Phase-space deviation between a gliding ray and the boundary geodesic
/// started from `v = -2σ ḡ^{-1} ξ′`, compared as covectors `ξ′ = -σ ḡ v / 2`.
pub fn gliding_geodesic_deviation(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    window: &CurveWindow,
    tol: Tolerances,
) -> FlowResult<f64> {
    let ray = trace_gliding(model, source, window, TimeDirection::Forward, tol)?;
    let gbar = model.boundary_metric(&source.base);
    let gi = gbar.try_inverse().expect("Lorentzian boundary metric");
    let v0 = (gi * DVector::from_column_slice(&source.covec)) * (-2.0 * ray.sigma);
    let v0: Vec<f64> = v0.iter().copied().collect();
    let geo = boundary_null_geodesic(model, &source.base, &v0, window, tol)?;
    let mut worst: f64 = 0.0;
    for (gs, (s, x, v)) in ray.samples.iter().zip(&geo) {
        debug_assert!((gs.s - s).abs() < 1e-12);
        let g = model.boundary_metric(x);
        let xi = (g * DVector::from_column_slice(v)) * (-0.5 * ray.sigma);
        for (a, b) in gs.base.iter().zip(x) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in gs.covec.iter().zip(xi.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventDistance {
    pub index: usize,
    pub distance: f64,
    pub gliding_parameter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// Sup over events of the distance to the gliding ray; `None` without events.
    pub distance: Option<f64>,
    pub events: Vec<EventDistance>,
}

/// Distance from a point to a polyline in ℝ^d, with the nearest parameter.
pub fn polyline_distance(point: &[f64], poly: &[(f64, Vec<f64>)]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for w in poly.windows(2) {
        let (sa, a) = (&w[0].0, &w[0].1);
        let (sb, b) = (&w[1].0, &w[1].1);
        let mut ab2 = 0.0;
        let mut apab = 0.0;
        for k in 0..a.len() {
            let d = b[k] - a[k];
            ab2 += d * d;
            apab += (point[k] - a[k]) * d;
        }
        let u = if ab2 > 0.0 {
            (apab / ab2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut dist2 = 0.0;
        for k in 0..a.len() {
            let c = a[k] + u * (b[k] - a[k]);
            dist2 += (point[k] - c) * (point[k] - c);
        }
        if dist2 < best.0 {
            best = (dist2, sa + u * (sb - sa));
        }
    }
    (best.0.sqrt(), best.1)
}

/// Distances of broken-trajectory events from the gliding ray as the source
/// is pushed off the glancing set by `ε·transversal`.
pub fn convergence_probe(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    offsets: &[f64],
    transversal: &[f64],
    t_window: f64,
    opts: &FlowOptions,
) -> FlowResult<Vec<ConvergenceRow>> {
    let cw = CurveWindow {
        t_bound: source.base[0] + t_window + 1.0,
        s_max: 1e6,
        ds: 1e-3,
    };
    let ray = trace_gliding(model, source, &cw, TimeDirection::Forward, opts.tol)?;
    let poly: Vec<(f64, Vec<f64>)> = ray
        .samples
        .iter()
        .map(|g| (g.s, g.base.iter().chain(&g.covec).copied().collect()))
        .collect();
    let window = Window::until(source.base[0] + t_window);
    offsets
        .iter()
        .map(|&eps| {
            let covec: Vec<f64> = source
                .covec
                .iter()
                .zip(transversal)
                .map(|(c, w)| c + eps * w)
                .collect();
            let bc = model.classify_covector(&source.base, &covec)?;
            let traj = trace_broken(model, &bc, &window, opts)?;
            let events: Vec<EventDistance> = traj
                .events
                .iter()
                .enumerate()
                .map(|(index, ev)| {
                    let p: Vec<f64> = ev
                        .covector
                        .base
                        .iter()
                        .chain(&ev.covector.covec)
                        .copied()
                        .collect();
                    let (distance, gliding_parameter) = polyline_distance(&p, &poly);
                    EventDistance {
                        index,
                        distance,
                        gliding_parameter,
                    }
                })
                .collect();
            let distance = events.iter().map(|e| e.distance).reduce(f64::max);
            Ok(ConvergenceRow {
                epsilon: eps,
                distance,
                events,
            })
        })
        .collect()
}
