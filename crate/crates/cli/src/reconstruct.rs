//! The `reconstruct` pipeline.
//!
//! Estimation sees only the blinded view, the probe apparatus and the prior
//! on `U`. Ground truth enters in one place, [`attach_truth_deltas`], which
//! needs a [`TruthCapability`]; that token is the only way to open the
//! sidecar, and the estimation functions never receive one.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lorentz_lens::dnsynth::{BlindedView, LiveProbe, TruthSidecar, BLINDED_SCHEMA, TRUTH_SCHEMA};
use lorentz_lens::flow::FlowOptions;
use lorentz_lens::geometry::ManifoldModel;
use lorentz_lens::recon::*;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{interior_grid, RunConfig};

pub const RECON_SCHEMA: &str = "lorentz-lens/reconstruction@1";
/// Absolute bound for a one-form whose truth vanishes.
const ZERO_ONE_FORM_TOL: f64 = 1e-3;
/// Internal determinant identity, checked with or without truth.
const DET_IDENTITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub sources: Vec<usize>,
    pub hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEntry {
    pub point: Vec<f64>,
    pub recoverable: bool,
    pub directions: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeEntry {
    pub point: Vec<f64>,
    pub q_matrix: Vec<Vec<f64>>,
    pub residual: f64,
    pub singular_gap: f64,
    /// Largest angle between recovered and true null cones.
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationEntry {
    pub point: Vec<f64>,
    pub direction: usize,
    pub time_differential: Vec<f64>,
    /// `(z, L′ z)` pairs in phase coordinates.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// `forward`, `inverse` or `mixed` against the true lens relation.
    pub branch: Option<String>,
    pub flipped_branch: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneFormEntry {
    pub point: Vec<f64>,
    pub components: Vec<f64>,
    pub directional: Vec<(Vec<f64>, f64)>,
    pub truth: Option<Vec<f64>>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub point: Vec<f64>,
    pub metric: Vec<Vec<f64>>,
    pub determinant_gap: f64,
    pub max_hit_residual: f64,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub point: Vec<f64>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub probes: usize,
    pub weak_lens_groups: usize,
    pub ambiguous_groups: usize,
    pub recoverable_points: usize,
    pub scanned_points: usize,
    pub max_cone_residual: f64,
    pub max_determinant_gap: f64,
    pub truth_available: bool,
    pub max_cone_delta: Option<f64>,
    pub max_metric_delta: Option<f64>,
    pub max_one_form_delta: Option<f64>,
    pub uniform_branches: Option<usize>,
    pub breaches: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub schema: String,
    pub dim: usize,
    pub weak_lens: Vec<GroupSummary>,
    pub points: Vec<PointEntry>,
    pub cones: Vec<ConeEntry>,
    pub orientation: Vec<OrientationEntry>,
    pub one_form: Vec<OneFormEntry>,
    pub metric: Vec<MetricEntry>,
    pub failures: Vec<Failure>,
    pub summary: Summary,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix(r: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(r.len(), r.len(), |i, j| r[i][j])
}

pub fn read_blinded(path: &Path) -> Result<BlindedView> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let view: BlindedView =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(
        view.schema == BLINDED_SCHEMA,
        "{}: unsupported schema {}",
        path.display(),
        view.schema
    );
    Ok(view)
}

/// Everything estimated from the blinded view. `apparatus` is the model that
/// answers new probes; estimation reaches it only through the probe oracle
/// and the metric prior over `U`.
pub fn estimate(
    cfg: &RunConfig,
    view: &BlindedView,
    apparatus: &ManifoldModel,
) -> Result<Reconstruction> {
    let dim = view.dim;
    anyhow::ensure!(
        dim == apparatus.dim(),
        "blinded view has dimension {dim}, config {}",
        apparatus.dim()
    );
    anyhow::ensure!(
        view.u == cfg.regions.u && view.v == cfg.regions.v,
        "blinded view regions differ from the config"
    );
    let probe = LiveProbe::new(
        apparatus,
        view.u.clone(),
        view.v.clone(),
        cfg.window(),
        cfg.flow_options(),
    )?;
    let mut failures = vec![];

    let table = build_weak_lens(view, cfg.tolerances.match_tol);
    let weak_lens: Vec<GroupSummary> = table
        .groups
        .iter()
        .map(|g| GroupSummary {
            sources: g.sources.clone(),
            hits: g.hits.len(),
        })
        .collect();

    let scan = cfg.scan();
    let grid = interior_grid(&view.u, &cfg.recon.cone_counts);
    let set = detect_recoverable(&probe, &view.v, &grid, &scan)?;
    let points: Vec<PointEntry> = set
        .points
        .iter()
        .map(|p| PointEntry {
            point: p.point.clone(),
            recoverable: p.recoverable,
            directions: p.directions.len(),
            rejected: p.rejected,
        })
        .collect();

    let recovered: Vec<&PointRecovery> = set.recoverable_points().collect();
    let fits: Vec<(&PointRecovery, Result<ConformalClassEstimate, ReconError>)> = recovered
        .par_iter()
        .map(|r| (*r, conformal_class_at(r, scan.min_directions)))
        .collect();
    let mut cones = vec![];
    let mut classes = vec![];
    for (rec, fit) in fits {
        match fit {
            Ok(est) => {
                cones.push(ConeEntry {
                    point: rec.point.clone(),
                    q_matrix: rows(&est.q()),
                    residual: est.residual,
                    singular_gap: est.singular_gap,
                    delta: None,
                });
                classes.push((rec, est));
            }
            Err(e) => failures.push(Failure {
                stage: "cone".into(),
                point: rec.point.clone(),
                error: e.to_string(),
            }),
        }
    }

    let mut orientation = vec![];
    for (rec, est) in classes.iter().take(cfg.recon.lens_patches) {
        for dir in 0..rec.directions.len().min(2) {
            match recover_lens_orientation(&probe, &view.u, rec, dir, est, &LensPatch::default()) {
                Ok(lens) => orientation.push(OrientationEntry {
                    point: rec.point.clone(),
                    direction: dir,
                    time_differential: lens.time.differential.clone(),
                    pairs: lens.pairs.clone(),
                    branch: None,
                    flipped_branch: None,
                }),
                Err(e) => failures.push(Failure {
                    stage: "orientation".into(),
                    point: rec.point.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    let schedule = OneFormSchedule {
        eps0: cfg.recon.one_form_eps,
        ..OneFormSchedule::default()
    };
    let mut one_form = vec![];
    for (rec, est) in classes.iter().take(cfg.recon.one_form_points) {
        match recover_one_form(&probe, &view.u, rec, est, &schedule) {
            Ok(a) => one_form.push(OneFormEntry {
                point: a.point.clone(),
                components: a.components.clone(),
                directional: a
                    .directions
                    .iter()
                    .map(|d| (d.tangent.clone(), d.value))
                    .collect(),
                truth: None,
                delta: None,
            }),
            Err(e) => failures.push(Failure {
                stage: "one_form".into(),
                point: rec.point.clone(),
                error: e.to_string(),
            }),
        }
    }

    // The prior is consulted only at solved sources, which lie over U.
    let u = view.u.clone();
    let chart = apparatus.chart();
    let prior = move |x: &[f64]| -> DMatrix<f64> {
        debug_assert!(u.contains(&chart, x), "prior queried outside U at {x:?}");
        apparatus.boundary_metric(x)
    };
    let basis = cfg.metric_basis();
    let targets = cfg.metric_targets();
    let solved: Vec<(Vec<f64>, Result<MetricRecovery, ReconError>)> = targets
        .par_iter()
        .map(|y| {
            (
                y.clone(),
                recover_metric_with_prior(&probe, view, &prior, y, &basis, &MateSearch::default()),
            )
        })
        .collect();
    let mut metric = vec![];
    for (y, r) in solved {
        match r {
            Ok(r) => metric.push(MetricEntry {
                point: y,
                metric: r.metric.clone(),
                determinant_gap: r.determinant_identity_gap(),
                max_hit_residual: r.max_hit_residual,
                delta: None,
            }),
            Err(e) => failures.push(Failure {
                stage: "metric".into(),
                point: y,
                error: e.to_string(),
            }),
        }
    }

    let summary = Summary {
        probes: view.probes.len(),
        weak_lens_groups: weak_lens.len(),
        ambiguous_groups: table.ambiguous.len(),
        recoverable_points: points.iter().filter(|p| p.recoverable).count(),
        scanned_points: points.len(),
        max_cone_residual: cones.iter().map(|c| c.residual).fold(0.0, f64::max),
        max_determinant_gap: metric.iter().map(|m| m.determinant_gap).fold(0.0, f64::max),
        ..Summary::default()
    };
    Ok(Reconstruction {
        schema: RECON_SCHEMA.into(),
        dim,
        weak_lens,
        points,
        cones,
        orientation,
        one_form,
        metric,
        failures,
        summary,
    })
}

/// Permission to read the truth sidecar. Only the delta step is handed one.
pub struct TruthCapability {
    path: PathBuf,
}

impl TruthCapability {
    pub fn grant(path: PathBuf) -> Self {
        TruthCapability { path }
    }

    /// The sidecar, or `None` when the file is absent.
    fn open(self) -> Result<Option<TruthSidecar>> {
        if !self.path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&self.path)
            .with_context(|| format!("reading {}", self.path.display()))?;
        let truth: TruthSidecar = serde_json::from_str(&text)?;
        anyhow::ensure!(
            truth.schema == TRUTH_SCHEMA,
            "unsupported truth schema {}",
            truth.schema
        );
        Ok(Some(truth))
    }
}

fn branch_name(b: Option<Branch>) -> String {
    match b {
        Some(Branch::Forward) => "forward".into(),
        Some(Branch::Inverse) => "inverse".into(),
        _ => "mixed".into(),
    }
}

/// Fills in ground-truth deltas when the sidecar is present.
pub fn attach_truth_deltas(rec: &mut Reconstruction, cap: TruthCapability) -> Result<()> {
    let Some(truth) = cap.open()? else {
        return Ok(());
    };
    let model = &truth.model;
    for c in &mut rec.cones {
        let cometric = model
            .boundary_metric(&c.point)
            .try_inverse()
            .context("singular true metric")?;
        c.delta = Some(cone_angle_error(&matrix(&c.q_matrix), &cometric, 64));
    }
    let opts = FlowOptions::default();
    let mut uniform = 0;
    for o in &mut rec.orientation {
        let report = validate_branch(model, &o.pairs, 1e-6, &opts)?;
        // Flipping the time function reverses every successor pair.
        let flipped: Vec<(Vec<f64>, Vec<f64>)> = o
            .pairs
            .iter()
            .map(|(z, w)| (w.clone(), z.clone()))
            .collect();
        let flipped = validate_branch(model, &flipped, 1e-6, &opts)?;
        let (b, f) = (report.uniform(), flipped.uniform());
        if b.is_some() && f.is_some() && b != f {
            uniform += 1;
        }
        o.branch = Some(branch_name(b));
        o.flipped_branch = Some(branch_name(f));
    }
    for a in &mut rec.one_form {
        let t = tangential_potential(model, &a.point);
        let err = a
            .components
            .iter()
            .zip(&t)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        a.truth = Some(t);
        a.delta = Some(err);
    }
    for m in &mut rec.metric {
        m.delta = Some(relative_metric_error(
            &matrix(&m.metric),
            &model.boundary_metric(&m.point),
        ));
    }
    let max = |it: &mut dyn Iterator<Item = f64>| {
        it.fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.max(x)))
        })
    };
    rec.summary.truth_available = true;
    rec.summary.max_cone_delta = max(&mut rec.cones.iter().filter_map(|c| c.delta));
    rec.summary.max_metric_delta = max(&mut rec.metric.iter().filter_map(|c| c.delta));
    rec.summary.max_one_form_delta = max(&mut rec.one_form.iter().filter_map(|c| c.delta));
    rec.summary.uniform_branches = Some(uniform);
    Ok(())
}

/// Threshold breaches reported (and fatal under `--strict`).
pub fn breaches(cfg: &RunConfig, rec: &Reconstruction) -> Vec<String> {
    let mut out = vec![];
    if rec.summary.recoverable_points == 0 {
        out.push("no recoverable points".into());
    }
    if rec.summary.max_determinant_gap > DET_IDENTITY_TOL {
        out.push(format!(
            "determinant identity gap {:e} > {DET_IDENTITY_TOL:e}",
            rec.summary.max_determinant_gap
        ));
    }
    if !rec.failures.is_empty() {
        out.push(format!("{} failed estimates", rec.failures.len()));
    }
    if let Some(d) = rec.summary.max_cone_delta {
        if d > cfg.recon.cone_tol {
            out.push(format!("cone delta {d:e} > {:e}", cfg.recon.cone_tol));
        }
    }
    if let Some(d) = rec.summary.max_metric_delta {
        if d > cfg.recon.metric_tol {
            out.push(format!("metric delta {d:e} > {:e}", cfg.recon.metric_tol));
        }
    }
    for a in &rec.one_form {
        if let (Some(t), Some(d)) = (&a.truth, a.delta) {
            let scale = t.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let tol = if scale > 0.0 {
                cfg.recon.one_form_tol * scale
            } else {
                ZERO_ONE_FORM_TOL
            };
            if d > tol {
                out.push(format!("one-form delta {d:e} > {tol:e} at {:?}", a.point));
            }
        }
    }
    if let Some(u) = rec.summary.uniform_branches {
        if u < rec.orientation.len() {
            out.push(format!(
                "{} of {} lens patches mix branches",
                rec.orientation.len() - u,
                rec.orientation.len()
            ));
        }
    }
    out
}
