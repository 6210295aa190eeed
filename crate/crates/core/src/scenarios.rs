//! Ground-truth scenarios: solid cylinders `ℝ_t × D^{n-1}` with optional
//! lapse and one-form, product discs, and conformal gauge variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnsynth::{Region, SynthError};
use crate::field::ScalarField;
use crate::geometry::{
    Boundary, BoundaryCovector, GeomError, ManifoldModel, MetricField, OneForm, Orientation,
    Potential,
};

pub const SCENARIO_SCHEMA: &str = "lorentz-lens/scenario@1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("dimension {0} unsupported (use 3 or 4)")]
    Dimension(usize),
    #[error("radius must be positive")]
    Radius,
    #[error("lapse is not positive at {0:?}")]
    Lapse(Vec<f64>),
    #[error("boundary is not strictly null-convex (min II = {0:e})")]
    Convexity(f64),
    #[error("gauge transition |x| < {0} meets U or V")]
    Transition(f64),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type ScenarioResult<T> = Result<T, ScenarioError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// `-f dt² + |dx|²` on a solid cylinder; `f` defaults to 1.
    Cylinder {
        dim: usize,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lapse: Option<ScalarField>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        one_form: Option<OneForm>,
    },
    /// `-dt² + ρ |dx|²` on a disc of the given radius (n = 3).
    ProductDisc {
        radius: f64,
        spatial: ScalarField,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        one_form: Option<OneForm>,
    },
    /// Gauge variant of `base` with `φ = c/(n-2)` over `U` and `c/n` over `V`,
    /// switching across `|x| < transition`. `broken` adds `0.1 sin θ` over `V`.
    ConformalVariant {
        base: Box<ScenarioSpec>,
        c: f64,
        transition: f64,
        u: Region,
        v: Region,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<ScalarField>,
        #[serde(default)]
        broken: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub spec: ScenarioSpec,
    pub model: ManifoldModel,
    /// Gauge function of a conformal variant, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<ScalarField>,
}

fn check_dim(dim: usize) -> ScenarioResult<()> {
    if dim == 3 || dim == 4 {
        Ok(())
    } else {
        Err(ScenarioError::Dimension(dim))
    }
}

/// Solid cylinder of the given radius with lapse `f` and one-form `A`.
pub fn make_cylinder(
    dim: usize,
    radius: f64,
    lapse: Option<ScalarField>,
    one_form: Option<OneForm>,
) -> ScenarioResult<Scenario> {
    check_dim(dim)?;
    if !(radius > 0.0) {
        return Err(ScenarioError::Radius);
    }
    let mut metric = MetricField::minkowski(dim);
    if let Some(f) = &lapse {
        for i in 0..=400 {
            let mut x = vec![0.0; dim];
            x[0] = -50.0 + 0.25 * i as f64;
            if !(f.value(&x) > 0.0) {
                return Err(ScenarioError::Lapse(x));
            }
        }
        metric.lapse = f.clone();
    }
    let model = ManifoldModel {
        metric,
        boundary: Boundary {
            radius,
            exterior: false,
        },
        one_form: one_form.clone().unwrap_or_default(),
        potential: Potential::default(),
    };
    let name = if lapse.is_some() {
        format!("cylinder{dim}-lapse")
    } else {
        format!("cylinder{dim}")
    };
    Ok(Scenario {
        name,
        spec: ScenarioSpec::Cylinder {
            dim,
            radius,
            lapse,
            one_form,
        },
        model,
        gauge: None,
    })
}

/// `-dt² + ρ |dx|²` on a planar disc; strict null-convexity is verified on a
/// boundary sample.
pub fn make_product_disc(
    radius: f64,
    spatial: ScalarField,
    one_form: Option<OneForm>,
) -> ScenarioResult<Scenario> {
    if !(radius > 0.0) {
        return Err(ScenarioError::Radius);
    }
    let model = ManifoldModel {
        metric: MetricField {
            spatial: spatial.clone(),
            ..MetricField::minkowski(3)
        },
        boundary: Boundary {
            radius,
            exterior: false,
        },
        one_form: one_form.clone().unwrap_or_default(),
        potential: Potential::default(),
    };
    let grid: Vec<Vec<f64>> = (0..64)
        .map(|i| vec![0.0, std::f64::consts::TAU * i as f64 / 64.0])
        .collect();
    let report = model.check_admissibility(&grid, 2);
    if !report.pass {
        return Err(ScenarioError::Convexity(report.min_second_fundamental_form));
    }
    Ok(Scenario {
        name: "product-disc".into(),
        spec: ScenarioSpec::ProductDisc {
            radius,
            spatial,
            one_form,
        },
        model,
        gauge: None,
    })
}

/// Gauge function `c/n + (c/(n-2) - c/n)·step(x)` switching over `|x| < a`,
/// plus `0.1·(y/R)` on the `V` side when `broken`.
pub fn gauge_function(dim: usize, radius: f64, c: f64, a: f64, broken: bool) -> ScalarField {
    let n = dim as f64;
    let (cu, cv) = (c / (n - 2.0), c / n);
    let step = ScalarField::smoothstep(ScalarField::coord(1), -a, a);
    let mut phi = ScalarField::constant(cv).plus(step.clone().scaled(cu - cv));
    if broken {
        let v_side = ScalarField::constant(1.0).plus(step.scaled(-1.0));
        phi = phi.plus(ScalarField::coord(2).times(v_side).scaled(0.1 / radius));
    }
    phi
}

/// Gauge-equivalent (or deliberately broken) variant of a scenario.
pub fn make_conformal_variant(
    base: &Scenario,
    c: f64,
    transition: f64,
    u: &Region,
    v: &Region,
    psi: Option<ScalarField>,
    broken: bool,
) -> ScenarioResult<Scenario> {
    let model = &base.model;
    let chart = model.chart();
    let r = model.boundary.radius;
    let u_clear = u.grid(7).iter().all(|xb| chart.embed(xb)[1] >= transition);
    let v_clear = v.grid(7).iter().all(|xb| chart.embed(xb)[1] <= -transition);
    if !(u_clear && v_clear) || transition >= r {
        return Err(ScenarioError::Transition(transition));
    }
    let phi = gauge_function(model.dim(), r, c, transition, broken);
    let psi_field = psi.clone().unwrap_or_default();
    let new_model = if broken {
        crate::dnsynth::apply_gauge(model, &phi, &psi_field)
    } else {
        crate::dnsynth::gauge_transform(model, &phi, &psi_field, c, u, v)?
    };
    let name = format!(
        "{}-gauge{}{}",
        base.name,
        c,
        if broken { "-broken" } else { "" }
    );
    Ok(Scenario {
        name,
        spec: ScenarioSpec::ConformalVariant {
            base: Box::new(base.spec.clone()),
            c,
            transition,
            u: u.clone(),
            v: v.clone(),
            psi,
            broken,
        },
        model: new_model,
        gauge: Some(phi),
    })
}

impl ScenarioSpec {
    pub fn build(&self) -> ScenarioResult<Scenario> {
        match self {
            ScenarioSpec::Cylinder {
                dim,
                radius,
                lapse,
                one_form,
            } => make_cylinder(*dim, *radius, lapse.clone(), one_form.clone()),
            ScenarioSpec::ProductDisc {
                radius,
                spatial,
                one_form,
            } => make_product_disc(*radius, spatial.clone(), one_form.clone()),
            ScenarioSpec::ConformalVariant {
                base,
                c,
                transition,
                u,
                v,
                psi,
                broken,
            } => {
                make_conformal_variant(&base.build()?, *c, *transition, u, v, psi.clone(), *broken)
            }
        }
    }
}

/// Closed-form lens relation of the flat unit-lapse cylinder (n = 3).
///
/// A chord leaving at angle `β` from the inward normal, where
/// `sin β = |ξ_θ| / (R |ξ_t|)`, advances `Δθ = ±(π - 2β)` and `Δt = 2R cos β`.
pub fn cylinder_lens_oracle(radius: f64, source: &BoundaryCovector, k: usize) -> BoundaryCovector {
    let (xt, xth) = (source.covec[0], source.covec[1]);
    let beta = (xth.abs() / (radius * xt.abs())).asin();
    let future = source.orientation == Orientation::Future;
    let dir = xth.signum() * if future { 1.0 } else { -1.0 };
    let dth = if xth == 0.0 {
        std::f64::consts::PI
    } else {
        dir * (std::f64::consts::PI - 2.0 * beta)
    };
    let dt = 2.0 * radius * beta.cos();
    let kf = k as f64;
    BoundaryCovector {
        base: vec![source.base[0] + kf * dt, source.base[1] + kf * dth],
        covec: source.covec.clone(),
        class: source.class,
        orientation: source.orientation,
    }
}

/// Boundary null line of the flat cylinder through `base` with slope `dθ/dt`.
pub fn cylinder_null_line(radius: f64, base: &[f64], slope_sign: f64, t: f64) -> Vec<f64> {
    vec![base[0] + t, base[1] + slope_sign * t / radius]
}
