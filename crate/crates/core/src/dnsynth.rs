//! Synthetic principal-symbol measurements of the restricted
//! Dirichlet-to-Neumann map, gauge transforms, and blinded views.
//!
//! A measurement pairs a hyperbolic source covector over `U` with each
//! tangential projection of its forward broken bicharacteristic that lands
//! over `V`, and attaches the transfer coefficient
//!
//! `Q = ±2i(-1)^k e^{i∫A} (ξ_n^0 ξ_n^k)^{1/2} |ḡ(x_0′)|^{1/4} |ḡ(x_k′)|^{-1/4}`
//!
//! with `+` for past-pointing and `-` for future-pointing sources. The
//! potential `q` is carried through gauge changes but never enters `Q`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::ScalarField;
use crate::flow::{
    trace_broken, BrokenTrajectory, CurveWindow, FlowError, FlowOptions, GlidingRay, Window,
};
use crate::geometry::{
    BoundaryChart, BoundaryCovector, CovectorClass, GeomError, ManifoldModel, MetricField, OneForm,
    Orientation, Potential,
};

pub const BLINDED_SCHEMA: &str = "lorentz-lens/blinded@1";
pub const TRUTH_SCHEMA: &str = "lorentz-lens/truth@1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("U and V overlap")]
    Overlap,
    #[error("source {0:?} is not over U")]
    SourceOutsideU(Vec<f64>),
    #[error("gauge function is not constant on {region}: deviation {deviation:e}")]
    GaugeConstancy {
        region: &'static str,
        deviation: f64,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type SynthResult<T> = Result<T, SynthError>;

/// Box in the boundary chart. The periodic angle is measured from `lo`
/// modulo 2π, so a box may straddle the branch cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region { lo, hi }
    }

    /// Representative of `xb` whose periodic angle lies in `[lo, lo + 2π)`.
    pub fn normalize(&self, chart: &BoundaryChart, xb: &[f64]) -> Vec<f64> {
        let p = chart.periodic_index();
        let mut y = xb.to_vec();
        y[p] = self.lo[p] + (xb[p] - self.lo[p]).rem_euclid(std::f64::consts::TAU);
        y
    }

    pub fn contains(&self, chart: &BoundaryChart, xb: &[f64]) -> bool {
        let y = self.normalize(chart, xb);
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Whether the two boxes share a point (periodic angle taken modulo 2π).
    pub fn overlaps(&self, other: &Region, chart: &BoundaryChart) -> bool {
        let p = chart.periodic_index();
        let tau = std::f64::consts::TAU;
        (0..self.lo.len()).all(|d| {
            if d == p {
                let width_a = self.hi[d] - self.lo[d];
                let width_b = other.hi[d] - other.lo[d];
                let start_b = (other.lo[d] - self.lo[d]).rem_euclid(tau);
                start_b <= width_a || start_b + width_b >= tau
            } else {
                self.lo[d] <= other.hi[d] && other.lo[d] <= self.hi[d]
            }
        })
    }

    /// Tensor grid of `per_axis` points per chart coordinate.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let dim = self.lo.len();
        let per = per_axis.max(1);
        let total = per.pow(dim as u32);
        (0..total)
            .map(|mut i| {
                let mut v = vec![0.0; dim];
                for d in (0..dim).rev() {
                    let j = i % per;
                    i /= per;
                    let u = if per == 1 {
                        0.5
                    } else {
                        j as f64 / (per - 1) as f64
                    };
                    v[d] = self.lo[d] + u * (self.hi[d] - self.lo[d]);
                }
                v
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeClass {
    Empty,
    Discrete,
    Curve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub k: usize,
    pub sign: i8,
    pub a_integral: f64,
    pub arrival_tau: f64,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub source: BoundaryCovector,
    pub hit: BoundaryCovector,
    pub q: Complex64,
    pub truth: RecordTruth,
}

/// `|ḡ|` at a chart point.
pub fn boundary_volume(model: &ManifoldModel, xb: &[f64]) -> f64 {
    model.boundary_metric(xb).determinant().abs()
}

/// Transfer coefficient of a source and its k-th event.
pub fn transfer_coefficient(
    model: &ManifoldModel,
    source: &BoundaryCovector,
    hit: &BoundaryCovector,
    hit_normal: f64,
    k: usize,
    a_integral: f64,
) -> Complex64 {
    let n0 = model.normal_magnitude(&source.base, &source.covec);
    let sign = if source.orientation == Orientation::Past {
        1.0
    } else {
        -1.0
    };
    let parity = if k % 2 == 0 { 1.0 } else { -1.0 };
    let modulus = 2.0
        * (n0 * hit_normal).sqrt()
        * boundary_volume(model, &source.base).powf(0.25)
        * boundary_volume(model, &hit.base).powf(-0.25);
    Complex64::new(0.0, sign * parity * modulus) * Complex64::from_polar(1.0, a_integral)
}

/// Measurement records of one source over `V`.
pub fn records_of(
    model: &ManifoldModel,
    v: &Region,
    traj: &BrokenTrajectory,
) -> Vec<MeasurementRecord> {
    let chart = model.chart();
    let sign = if traj.source.orientation == Orientation::Past {
        1
    } else {
        -1
    };
    traj.events
        .iter()
        .enumerate()
        .filter(|(_, ev)| v.contains(&chart, &ev.covector.base))
        .map(|(i, ev)| {
            let k = i + 1;
            // One representative per point of V, whichever way the angle wound.
            let mut hit = ev.covector.clone();
            hit.base = v.normalize(&chart, &hit.base);
            MeasurementRecord {
                source: traj.source.clone(),
                hit,
                q: transfer_coefficient(
                    model,
                    &traj.source,
                    &ev.covector,
                    ev.normal,
                    k,
                    ev.a_integral,
                ),
                truth: RecordTruth {
                    k,
                    sign,
                    a_integral: ev.a_integral,
                    arrival_tau: ev.tau,
                    orientation: ev.covector.orientation,
                },
            }
        })
        .collect()
}

/// All records of the given probes, ordered by probe and arrival time.
pub fn synthesize(
    model: &ManifoldModel,
    u: &Region,
    v: &Region,
    probes: &[BoundaryCovector],
    window: &Window,
    opts: &FlowOptions,
) -> SynthResult<Vec<MeasurementRecord>> {
    let chart = model.chart();
    if u.overlaps(v, &chart) {
        return Err(SynthError::Overlap);
    }
    let per: Vec<SynthResult<Vec<MeasurementRecord>>> = probes
        .par_iter()
        .map(|p| {
            if !u.contains(&chart, &p.base) {
                return Err(SynthError::SourceOutsideU(p.base.clone()));
            }
            if p.class != CovectorClass::Hyperbolic {
                return Ok(vec![]);
            }
            let tr = trace_broken(model, p, window, opts)?;
            Ok(records_of(model, v, &tr))
        })
        .collect();
    let mut out = vec![];
    for r in per {
        let mut recs = r?;
        recs.sort_by(|a, b| a.truth.arrival_tau.total_cmp(&b.truth.arrival_tau));
        out.extend(recs);
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on [0, 1].
const GL5: [(f64, f64); 5] = [
    (0.046_910_077_030_668, 0.118_463_442_528_095),
    (0.230_765_344_947_158, 0.239_314_335_249_683),
    (0.5, 0.284_444_444_444_444),
    (0.769_234_655_052_842, 0.239_314_335_249_683),
    (0.953_089_922_969_332, 0.118_463_442_528_095),
];

/// `∫ A(γ̇) ds` over a sampled curve with tangents, using cubic Hermite
/// interpolation between samples and 5-point Gauss–Legendre per interval.
pub fn line_integral_samples(one_form: &OneForm, s: &[f64], x: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    if one_form.is_zero() {
        return 0.0;
    }
    let n = x[0].len();
    let mut total = 0.0;
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for i in 0..s.len().saturating_sub(1) {
        let h = s[i + 1] - s[i];
        if h == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for (u, w) in GL5 {
            let (h00, h10, h01, h11) = (
                2.0 * u * u * u - 3.0 * u * u + 1.0,
                u * u * u - 2.0 * u * u + u,
                -2.0 * u * u * u + 3.0 * u * u,
                u * u * u - u * u,
            );
            let (d00, d10, d01, d11) = (
                6.0 * u * u - 6.0 * u,
                3.0 * u * u - 4.0 * u + 1.0,
                -6.0 * u * u + 6.0 * u,
                3.0 * u * u - 2.0 * u,
            );
            for k in 0..n {
                p[k] =
                    h00 * x[i][k] + h10 * h * v[i][k] + h01 * x[i + 1][k] + h11 * h * v[i + 1][k];
                dp[k] = (d00 * x[i][k] + d01 * x[i + 1][k]) / h + d10 * v[i][k] + d11 * v[i + 1][k];
            }
            acc += w * one_form.pair(&p, &dp);
        }
        total += acc * h;
    }
    total
}

/// `∫ A(γ̇)` along all arcs of a recorded trajectory, in traversal direction.
/// `stride` keeps every `stride`-th sample (plus arc endpoints).
pub fn line_integral_trajectory(
    model: &ManifoldModel,
    traj: &BrokenTrajectory,
    stride: usize,
) -> f64 {
    let stride = stride.max(1);
    traj.arcs
        .iter()
        .map(|arc| {
            let last = arc.samples.len().saturating_sub(1);
            let kept: Vec<_> = arc
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| i % stride == 0 || *i == last)
                .collect();
            let s: Vec<f64> = kept.iter().map(|(_, a)| a.s).collect();
            let x: Vec<Vec<f64>> = kept.iter().map(|(_, a)| a.x.clone()).collect();
            let v: Vec<Vec<f64>> = kept
                .iter()
                .map(|(_, a)| {
                    let d = model.metric.diag(&a.x);
                    (0..a.x.len())
                        .map(|k| -2.0 * traj.sigma * d.ginv(k) * a.xi[k])
                        .collect()
                })
                .collect();
            line_integral_samples(&model.one_form, &s, &x, &v)
        })
        .sum()
}

/// `∫ A(γ̇)` along a gliding ray, with `γ̇ = -2σ E ḡ^{-1} ξ′` in interior coordinates.
pub fn line_integral_gliding(model: &ManifoldModel, ray: &GlidingRay) -> f64 {
    let chart = model.chart();
    let mut s = vec![];
    let mut x = vec![];
    let mut v = vec![];
    for g in &ray.samples {
        let gi = model
            .boundary_metric(&g.base)
            .try_inverse()
            .expect("Lorentzian boundary metric");
        let vb = gi * nalgebra::DVector::from_column_slice(&g.covec) * (-2.0 * ray.sigma);
        let e = chart.jacobian(&g.base);
        s.push(g.s);
        x.push(chart.embed(&g.base));
        v.push((e * vb).iter().copied().collect());
    }
    line_integral_samples(&model.one_form, &s, &x, &v)
}

/// Gauge-equivalent model: `g → e^{-2φ} g`, `A → A - dψ`, `q → e^{2φ}(q + q_φ)`.
///
/// `φ` must equal `c/(n-2)` over `U` and `c/n` over `V`, and `ψ` must vanish
/// over both; constancy is verified on a sample grid.
pub fn gauge_transform(
    model: &ManifoldModel,
    phi: &ScalarField,
    psi: &ScalarField,
    c: f64,
    u: &Region,
    v: &Region,
) -> SynthResult<ManifoldModel> {
    let n = model.dim() as f64;
    let chart = model.chart();
    let check =
        |region: &Region, name: &'static str, target: f64, f: &ScalarField| -> SynthResult<()> {
            let deviation = region
                .grid(5)
                .iter()
                .map(|xb| (f.value(&chart.embed(xb)) - target).abs())
                .fold(0.0, f64::max);
            if deviation > 1e-10 {
                return Err(SynthError::GaugeConstancy {
                    region: name,
                    deviation,
                });
            }
            Ok(())
        };
    check(u, "U", c / (n - 2.0), phi)?;
    check(v, "V", c / n, phi)?;
    check(u, "U", 0.0, psi)?;
    check(v, "V", 0.0, psi)?;
    Ok(apply_gauge(model, phi, psi))
}

/// The gauge change without constancy checks (used to build counterexamples).
pub fn apply_gauge(model: &ManifoldModel, phi: &ScalarField, psi: &ScalarField) -> ManifoldModel {
    let conformal = if model.metric.conformal.is_zero() {
        phi.clone()
    } else {
        model.metric.conformal.clone().plus(phi.clone())
    };
    let metric = MetricField {
        conformal,
        ..model.metric.clone()
    };
    let potential_part = if model.one_form.potential.is_zero() {
        psi.clone().scaled(-1.0)
    } else {
        model
            .one_form
            .potential
            .clone()
            .plus(psi.clone().scaled(-1.0))
    };
    let one_form = OneForm {
        components: model.one_form.components.clone(),
        potential: potential_part,
    };
    let potential = if phi.is_zero() {
        model.potential.clone()
    } else {
        Potential::Gauged {
            inner: Box::new(model.potential.clone()),
            metric: model.metric.clone(),
            phi: phi.clone(),
        }
    };
    ManifoldModel {
        metric,
        boundary: model.boundary,
        one_form,
        potential,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    #[serde(rename = "x")]
    pub base: Vec<f64>,
    #[serde(rename = "xi")]
    pub covec: Vec<f64>,
    #[serde(rename = "Q_re")]
    pub q_re: f64,
    #[serde(rename = "Q_im")]
    pub q_im: f64,
}

impl Hit {
    pub fn q(&self) -> Complex64 {
        Complex64::new(self.q_re, self.q_im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub class: ProbeClass,
    pub hits: Vec<Hit>,
}

/// Black-box measurement apparatus: a covector over `U` in, an unordered set
/// of hits over `V` out. Implementations must not reveal anything else.
pub trait ProbeOracle: Sync {
    fn dim(&self) -> usize;
    fn probe(&self, base: &[f64], covec: &[f64]) -> SynthResult<ProbeResponse>;
    /// Class only; may stop at the first hit.
    fn probe_class(&self, base: &[f64], covec: &[f64]) -> SynthResult<ProbeClass> {
        Ok(self.probe(base, covec)?.class)
    }
}

/// Offsets and clustering thresholds used to decide `Curve` for glancing probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSchedule {
    pub offsets: Vec<f64>,
    pub min_hits: usize,
    pub tube_factor: f64,
}

impl Default for CurveSchedule {
    fn default() -> Self {
        CurveSchedule {
            offsets: vec![1e-3, 5e-4, 2.5e-4],
            min_hits: 5,
            tube_factor: 10.0,
        }
    }
}

/// Point of `T*V` used for clustering: base with the periodic angle measured
/// from `V.lo`, followed by the unit covector.
pub fn hit_point(chart: &BoundaryChart, v: &Region, base: &[f64], covec: &[f64]) -> Vec<f64> {
    let norm = covec.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.normalize(chart, base)
        .into_iter()
        .chain(covec.iter().map(|c| c / norm))
        .collect()
}

/// Distance from `p` to the polyline through `poly` (in order).
pub fn distance_to_polyline(p: &[f64], poly: &[Vec<f64>]) -> f64 {
    if poly.len() == 1 {
        return p
            .iter()
            .zip(&poly[0])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    let pts: Vec<(f64, Vec<f64>)> = poly
        .iter()
        .enumerate()
        .map(|(i, q)| (i as f64, q.clone()))
        .collect();
    crate::flow::polyline_distance(p, &pts).0
}

/// Hit sets of successively smaller offsets accumulate along a curve: each
/// level has enough hits and every hit lies in a tube around the finest
/// level's polyline (ordered by time) whose radius is a multiple of its
/// median point spacing.
pub fn accumulates_on_curve(levels: &[Vec<Vec<f64>>], schedule: &CurveSchedule) -> bool {
    if levels.is_empty() || levels.iter().any(|l| l.len() < schedule.min_hits) {
        return false;
    }
    let mut finest = levels.last().unwrap().clone();
    finest.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut gaps: Vec<f64> = finest
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    gaps.sort_by(f64::total_cmp);
    let spacing = gaps[gaps.len() / 2];
    let radius = schedule.tube_factor * spacing;
    levels
        .iter()
        .flatten()
        .all(|p| distance_to_polyline(p, &finest) <= radius)
}

/// Transversal pushing a glancing covector into the hyperbolic side while
/// keeping its time orientation: `-sgn(ξ′·T′) ḡT′`, scaled to `|ξ′|`.
pub fn hyperbolic_transversal(model: &ManifoldModel, base: &[f64], covec: &[f64]) -> Vec<f64> {
    let t = model.boundary_timelike(base);
    let gt = model.boundary_metric(base) * &t;
    let s = -(covec.iter().zip(t.iter()).map(|(a, b)| a * b).sum::<f64>()).signum();
    let scale = covec.iter().map(|c| c * c).sum::<f64>().sqrt() / gt.norm();
    gt.iter().map(|v| s * scale * v).collect()
}

/// Probe apparatus backed by a live model. Only the `ProbeOracle` surface is
/// meant for reconstruction code.
pub struct LiveProbe<'a> {
    model: &'a ManifoldModel,
    u: Region,
    v: Region,
    window: Window,
    opts: FlowOptions,
    schedule: CurveSchedule,
}

impl<'a> LiveProbe<'a> {
    pub fn new(
        model: &'a ManifoldModel,
        u: Region,
        v: Region,
        window: Window,
        opts: FlowOptions,
    ) -> SynthResult<Self> {
        if u.overlaps(&v, &model.chart()) {
            return Err(SynthError::Overlap);
        }
        Ok(LiveProbe {
            model,
            u,
            v,
            window,
            opts,
            schedule: CurveSchedule::default(),
        })
    }

    pub fn with_schedule(mut self, schedule: CurveSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn u(&self) -> &Region {
        &self.u
    }

    pub fn v(&self) -> &Region {
        &self.v
    }

    fn source(&self, base: &[f64], covec: &[f64]) -> SynthResult<BoundaryCovector> {
        if !self.u.contains(&self.model.chart(), base) {
            return Err(SynthError::SourceOutsideU(base.to_vec()));
        }
        Ok(self.model.classify_covector(base, covec)?)
    }

    /// Records with truth for a hyperbolic source (empty otherwise).
    pub fn records(&self, base: &[f64], covec: &[f64]) -> SynthResult<Vec<MeasurementRecord>> {
        let src = self.source(base, covec)?;
        if src.class != CovectorClass::Hyperbolic {
            return Ok(vec![]);
        }
        let tr = trace_broken(self.model, &src, &self.window, &self.opts)?;
        Ok(records_of(self.model, &self.v, &tr))
    }

    fn first_hit(&self, src: &BoundaryCovector) -> SynthResult<bool> {
        let chart = self.model.chart();
        // Trace in chunks of events so the search stops soon after the first hit.
        let mut budget = 8;
        loop {
            let w = Window {
                t_bound: self.window.t_bound,
                max_events: budget.min(self.window.max_events),
            };
            let tr = trace_broken(self.model, src, &w, &self.opts)?;
            if tr
                .events
                .iter()
                .any(|e| self.v.contains(&chart, &e.covector.base))
            {
                return Ok(true);
            }
            if tr.truncated
                || tr.events.len() < w.max_events
                || w.max_events == self.window.max_events
            {
                return Ok(false);
            }
            budget *= 4;
        }
    }

    /// Glancing classification by offset probes on the hyperbolic side.
    pub fn classify_glancing(&self, src: &BoundaryCovector) -> SynthResult<ProbeClass> {
        let chart = self.model.chart();
        let w = hyperbolic_transversal(self.model, &src.base, &src.covec);
        let mut levels = vec![];
        for eps in &self.schedule.offsets {
            let covec: Vec<f64> = src.covec.iter().zip(&w).map(|(c, d)| c + eps * d).collect();
            let recs = self.records(&src.base, &covec)?;
            levels.push(
                recs.iter()
                    .map(|r| hit_point(&chart, &self.v, &r.hit.base, &r.hit.covec))
                    .collect(),
            );
        }
        Ok(if accumulates_on_curve(&levels, &self.schedule) {
            ProbeClass::Curve
        } else {
            ProbeClass::Empty
        })
    }
}

impl ProbeOracle for LiveProbe<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn probe(&self, base: &[f64], covec: &[f64]) -> SynthResult<ProbeResponse> {
        let src = self.source(base, covec)?;
        match src.class {
            CovectorClass::Elliptic => Ok(ProbeResponse {
                class: ProbeClass::Empty,
                hits: vec![],
            }),
            CovectorClass::Glancing => Ok(ProbeResponse {
                class: self.classify_glancing(&src)?,
                hits: vec![],
            }),
            CovectorClass::Hyperbolic => {
                let hits: Vec<Hit> = self
                    .records(base, covec)?
                    .into_iter()
                    .map(|r| Hit {
                        base: r.hit.base,
                        covec: r.hit.covec,
                        q_re: r.q.re,
                        q_im: r.q.im,
                    })
                    .collect();
                let class = if hits.is_empty() {
                    ProbeClass::Empty
                } else {
                    ProbeClass::Discrete
                };
                Ok(ProbeResponse { class, hits })
            }
        }
    }

    fn probe_class(&self, base: &[f64], covec: &[f64]) -> SynthResult<ProbeClass> {
        let src = self.source(base, covec)?;
        match src.class {
            CovectorClass::Elliptic => Ok(ProbeClass::Empty),
            CovectorClass::Glancing => self.classify_glancing(&src),
            CovectorClass::Hyperbolic => Ok(if self.first_hit(&src)? {
                ProbeClass::Discrete
            } else {
                ProbeClass::Empty
            }),
        }
    }
}

/// `Empty`, `Discrete` or `Curve` for one source direction.
pub fn probe_classify(
    model: &ManifoldModel,
    u: &Region,
    v: &Region,
    base: &[f64],
    covec: &[f64],
    window: &Window,
    schedule: &CurveSchedule,
    opts: &FlowOptions,
) -> SynthResult<ProbeClass> {
    LiveProbe::new(model, u.clone(), v.clone(), *window, *opts)?
        .with_schedule(schedule.clone())
        .probe_class(base, covec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSource {
    #[serde(rename = "x")]
    pub base: Vec<f64>,
    #[serde(rename = "xi")]
    pub covec: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindedProbe {
    pub source: ProbeSource,
    pub class: ProbeClass,
    pub hits: Vec<Hit>,
}

/// Everything reconstruction may see: sources over `U`, their classes and
/// unordered hits over `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindedView {
    pub schema: String,
    pub dim: usize,
    pub u: Region,
    pub v: Region,
    pub probes: Vec<BlindedProbe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthHit {
    pub probe: usize,
    pub hit: usize,
    pub k: usize,
    pub sign: i8,
    pub a_integral: f64,
    pub arrival_tau: f64,
    pub source_orientation: Orientation,
}

/// Ground truth kept apart from the blinded view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub schema: String,
    pub model: ManifoldModel,
    pub hits: Vec<TruthHit>,
}

/// Probes every source (in parallel) and splits the result into the blinded
/// view and its truth sidecar. Hits within a probe are ordered by arrival;
/// the order carries no information beyond the hit coordinates.
pub fn blind(
    probe: &LiveProbe<'_>,
    sources: &[(Vec<f64>, Vec<f64>)],
) -> SynthResult<(BlindedView, TruthSidecar)> {
    let results: Vec<SynthResult<(BlindedProbe, Vec<MeasurementRecord>)>> = sources
        .par_iter()
        .map(|(base, covec)| {
            let src = probe.source(base, covec)?;
            let recs = if src.class == CovectorClass::Hyperbolic {
                probe.records(base, covec)?
            } else {
                vec![]
            };
            let class = match src.class {
                CovectorClass::Hyperbolic if !recs.is_empty() => ProbeClass::Discrete,
                CovectorClass::Glancing => probe.classify_glancing(&src)?,
                _ => ProbeClass::Empty,
            };
            let hits = recs
                .iter()
                .map(|r| Hit {
                    base: r.hit.base.clone(),
                    covec: r.hit.covec.clone(),
                    q_re: r.q.re,
                    q_im: r.q.im,
                })
                .collect();
            Ok((
                BlindedProbe {
                    source: ProbeSource {
                        base: base.clone(),
                        covec: covec.clone(),
                    },
                    class,
                    hits,
                },
                recs,
            ))
        })
        .collect();
    let mut probes = vec![];
    let mut truth = vec![];
    for (i, r) in results.into_iter().enumerate() {
        let (bp, recs) = r?;
        for (j, rec) in recs.iter().enumerate() {
            truth.push(TruthHit {
                probe: i,
                hit: j,
                k: rec.truth.k,
                sign: rec.truth.sign,
                a_integral: rec.truth.a_integral,
                arrival_tau: rec.truth.arrival_tau,
                source_orientation: rec.source.orientation,
            });
        }
        probes.push(bp);
    }
    Ok((
        BlindedView {
            schema: BLINDED_SCHEMA.into(),
            dim: probe.model.dim(),
            u: probe.u.clone(),
            v: probe.v.clone(),
            probes,
        },
        TruthSidecar {
            schema: TRUTH_SCHEMA.into(),
            model: probe.model.clone(),
            hits: truth,
        },
    ))
}

/// Stored measurements replayed as an oracle (only the probed sources answer).
pub struct ReplayProbe<'a> {
    view: &'a BlindedView,
}

impl<'a> ReplayProbe<'a> {
    pub fn new(view: &'a BlindedView) -> Self {
        ReplayProbe { view }
    }
}

impl ProbeOracle for ReplayProbe<'_> {
    fn dim(&self) -> usize {
        self.view.dim
    }

    fn probe(&self, base: &[f64], covec: &[f64]) -> SynthResult<ProbeResponse> {
        let close = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
        };
        self.view
            .probes
            .iter()
            .find(|p| close(&p.source.base, base) && close(&p.source.covec, covec))
            .map(|p| ProbeResponse {
                class: p.class,
                hits: p.hits.clone(),
            })
            .ok_or_else(|| SynthError::SourceOutsideU(base.to_vec()))
    }
}

/// Window covering `t ≤ t_max`, for readability at call sites.
pub fn window_until(t_max: f64) -> Window {
    Window::until(t_max)
}

/// Curve window for gliding integrations up to `t_max`.
pub fn gliding_window(t_max: f64, ds: f64) -> CurveWindow {
    CurveWindow {
        t_bound: t_max,
        s_max: 1e6,
        ds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;
    use std::f64::consts::PI;

    fn cylinder(a: f64) -> ManifoldModel {
        ManifoldModel {
            metric: MetricField::minkowski(3),
            boundary: Boundary {
                radius: 1.0,
                exterior: false,
            },
            one_form: if a == 0.0 {
                OneForm::zero()
            } else {
                OneForm::dt(a)
            },
            potential: Potential::default(),
        }
    }

    fn regions() -> (Region, Region) {
        (
            Region::new(vec![-1.0, -0.5], vec![30.0, 0.5]),
            Region::new(vec![-1.0, PI - 0.5], vec![30.0, PI + 0.5]),
        )
    }

    #[test]
    fn radial_records() {
        let m = cylinder(0.0);
        let (u, v) = regions();
        let src = m.classify_covector(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        let recs = synthesize(
            &m,
            &u,
            &v,
            &[src],
            &Window::until(10.0),
            &FlowOptions::default(),
        )
        .unwrap();
        let ts: Vec<f64> = recs.iter().map(|r| r.hit.base[0]).collect();
        assert_eq!(ts.len(), 3);
        for (t, e) in ts.iter().zip([2.0, 6.0, 10.0]) {
            assert!((t - e).abs() < 1e-9);
        }
        for r in &recs {
            assert!((r.q.norm() - 2.0).abs() < 1e-9);
        }
        let shifted = synthesize(
            &cylinder(0.5),
            &u,
            &v,
            &recs[..1]
                .iter()
                .map(|r| r.source.clone())
                .collect::<Vec<_>>(),
            &Window::until(10.0),
            &FlowOptions::default(),
        )
        .unwrap();
        let dphase = (shifted[0].q / recs[0].q).arg();
        assert!((dphase - 1.0).abs() < 1e-9, "{dphase}");
    }

    #[test]
    fn region_wraps() {
        let chart = BoundaryChart {
            dim: 3,
            radius: 1.0,
        };
        let r = Region::new(vec![0.0, PI - 0.5], vec![1.0, PI + 0.5]);
        assert!(r.contains(&chart, &[0.5, -PI + 0.1]));
        assert!(!r.contains(&chart, &[0.5, 0.0]));
        let (u, v) = regions();
        assert!(!u.overlaps(&v, &chart));
        assert!(u.overlaps(&Region::new(vec![0.0, 6.0], vec![1.0, 6.5]), &chart));
    }

    #[test]
    fn chord_integral_of_dt() {
        let m = cylinder(0.5);
        let src = m.classify_covector(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        let tr = trace_broken(
            &m,
            &src,
            &Window::events(1),
            &FlowOptions::default().recording(),
        )
        .unwrap();
        let full = line_integral_trajectory(&m, &tr, 1);
        assert!((full - 1.0).abs() < 1e-9, "{full}");
        assert!((tr.events[0].a_integral - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classes_from_live_probe() {
        let m = cylinder(0.0);
        let (u, v) = regions();
        let p = LiveProbe::new(&m, u, v, Window::until(10.0), FlowOptions::default()).unwrap();
        assert_eq!(
            p.probe_class(&[0.0, 0.0], &[-1.0, 0.0]).unwrap(),
            ProbeClass::Discrete
        );
        assert_eq!(
            p.probe_class(&[0.0, 0.0], &[-1.0, 2.0]).unwrap(),
            ProbeClass::Empty
        );
        assert_eq!(
            p.probe_class(&[0.0, 0.0], &[-1.0, 1.0]).unwrap(),
            ProbeClass::Curve
        );
    }
}
