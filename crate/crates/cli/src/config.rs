//! Run configuration: TOML text with line-located errors and `LLENS_*`
//! environment overrides for tolerances.

use std::f64::consts::PI;

use anyhow::{Context, Result};
use lorentz_lens::dnsynth::{CurveSchedule, Region};
use lorentz_lens::field::ScalarField;
use lorentz_lens::flow::{FlowOptions, Window};
use lorentz_lens::ode::Tolerances;
use lorentz_lens::recon::DirectionScan;
use lorentz_lens::scenarios::ScenarioSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA: &str = "lorentz-lens/config@1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    pub scenario: ScenarioSpec,
    pub regions: Regions,
    pub probes: ProbeGrid,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub gauge: GaugeConfig,
}

fn default_schema() -> String {
    CONFIG_SCHEMA.into()
}

fn default_out() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regions {
    pub u: Region,
    pub v: Region,
}

/// Probe sources over `U`: a base grid times a fan of unit covectors, plus
/// seeded random sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeGrid {
    /// Points per boundary coordinate (interior of `U`).
    pub base_counts: Vec<usize>,
    /// Directions per half circle `α ∈ (π/2, 3π/2)` of `(cos α, sin α·e)`.
    pub directions: usize,
    /// Spatial axes `e` (for n = 4), as angles from the last coordinate.
    #[serde(default = "default_axes")]
    pub axes: Vec<f64>,
    #[serde(default)]
    pub random: usize,
}

fn default_axes() -> Vec<f64> {
    vec![0.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub t_max: f64,
    pub max_events: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            t_max: 10.0,
            max_events: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub rtol: f64,
    pub atol: f64,
    pub shell: f64,
    pub match_tol: f64,
    pub bisect: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            rtol: 1e-10,
            atol: 1e-12,
            shell: 1e-8,
            match_tol: 1e-6,
            bisect: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Broken-ray sources; defaults to a few probe-grid sources.
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    /// Lens orders tabulated by `lens`.
    pub lens_orders: usize,
    /// Length in `t` of gliding rays.
    pub glide_t: f64,
    pub glide_ds: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            sources: vec![],
            lens_orders: 2,
            glide_t: 20.0,
            glide_ds: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    /// Points of `U` (per boundary coordinate) scanned for glancing directions.
    pub cone_counts: Vec<usize>,
    pub scan_samples: usize,
    pub families: usize,
    /// Targets of `V` (per boundary coordinate) for the metric with prior.
    pub metric_counts: Vec<usize>,
    /// Time interval of the metric targets.
    pub metric_t: [f64; 2],
    /// Polarization basis at each target.
    #[serde(default)]
    pub metric_basis: Vec<Vec<f64>>,
    pub one_form_eps: f64,
    pub one_form_points: usize,
    pub lens_patches: usize,
    /// Thresholds checked under `--strict`.
    pub cone_tol: f64,
    pub metric_tol: f64,
    pub one_form_tol: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            cone_counts: vec![5, 4],
            scan_samples: 24,
            families: 7,
            metric_counts: vec![5, 2],
            metric_t: [3.0, 8.0],
            metric_basis: vec![],
            one_form_eps: 1e-3,
            one_form_points: 2,
            lens_patches: 2,
            cone_tol: 1e-3,
            metric_tol: 1e-4,
            one_form_tol: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeConfig {
    pub c: f64,
    pub transition: f64,
    /// Interior bump of the exact part `dψ`.
    #[serde(default)]
    pub psi: Option<ScalarField>,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        GaugeConfig {
            c: 0.3,
            transition: 0.5,
            psi: Some(ScalarField::Bump {
                center: vec![3.0, 0.0, 0.3],
                radius: 0.5,
                amplitude: 1.0,
            }),
        }
    }
}

/// 1-based line of the first occurrence of `key` as a TOML key or table.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(&format!("{key} "))
                || t.starts_with(&format!("{key}="))
                || t.starts_with(&format!("[{key}"))
        })
        .map(|i| i + 1)
}

fn located(text: &str, key: &str, msg: String) -> anyhow::Error {
    match line_of(text, key) {
        Some(l) => anyhow::anyhow!("config line {l}: {msg}"),
        None => anyhow::anyhow!("config: {msg}"),
    }
}

/// Applies `LLENS_RTOL`, `LLENS_ATOL`, `LLENS_SHELL_TOL`, `LLENS_MATCH_TOL` and
/// `LLENS_BISECT_TOL`.
pub fn apply_env(tol: &mut ToleranceConfig, get: impl Fn(&str) -> Option<String>) -> Result<()> {
    let slots: [(&str, &mut f64); 5] = [
        ("LLENS_RTOL", &mut tol.rtol),
        ("LLENS_ATOL", &mut tol.atol),
        ("LLENS_SHELL_TOL", &mut tol.shell),
        ("LLENS_MATCH_TOL", &mut tol.match_tol),
        ("LLENS_BISECT_TOL", &mut tol.bisect),
    ];
    for (name, slot) in slots {
        if let Some(v) = get(name) {
            *slot = v
                .parse()
                .with_context(|| format!("{name}={v} is not a number"))?;
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates; errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            match line {
                Some(l) => anyhow::anyhow!("config line {l}: {}", e.message()),
                None => anyhow::anyhow!("config: {}", e.message()),
            }
        })?;
        apply_env(&mut cfg.tolerances, |k| std::env::var(k).ok())?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self, text: &str) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(located(
                text,
                "schema",
                format!("unsupported schema {:?}", self.schema),
            ));
        }
        let scenario = self
            .scenario
            .build()
            .map_err(|e| located(text, "scenario", e.to_string()))?;
        let dim = scenario.model.dim();
        for (key, r) in [("u", &self.regions.u), ("v", &self.regions.v)] {
            if r.lo.len() != dim - 1 || r.hi.len() != dim - 1 {
                return Err(located(
                    text,
                    key,
                    format!("region needs {} bounds per side", dim - 1),
                ));
            }
            if r.lo.iter().zip(&r.hi).any(|(a, b)| a > b) {
                return Err(located(text, key, "region has lo > hi".into()));
            }
        }
        if self
            .regions
            .u
            .overlaps(&self.regions.v, &scenario.model.chart())
        {
            return Err(located(text, "u", "U and V overlap".into()));
        }
        if self.probes.base_counts.len() != dim - 1 {
            return Err(located(
                text,
                "base_counts",
                format!("need {} counts", dim - 1),
            ));
        }
        let t = &self.tolerances;
        for (k, v) in [
            ("rtol", t.rtol),
            ("atol", t.atol),
            ("shell", t.shell),
            ("match_tol", t.match_tol),
            ("bisect", t.bisect),
        ] {
            if !(v > 0.0) {
                return Err(located(text, k, format!("tolerance {k} must be positive")));
            }
        }
        if !(self.window.t_max.is_finite()) || self.window.max_events == 0 {
            return Err(located(
                text,
                "window",
                "window needs finite t_max and max_events > 0".into(),
            ));
        }
        if !self.recon.metric_basis.is_empty()
            && self.recon.metric_basis.iter().any(|b| b.len() != dim - 1)
        {
            return Err(located(
                text,
                "metric_basis",
                format!("basis covectors need {} components", dim - 1),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        spec_dim(&self.scenario)
    }

    /// Metric targets: a grid over `V` restricted to the configured times.
    pub fn metric_targets(&self) -> Vec<Vec<f64>> {
        let v = &self.regions.v;
        let mut lo = v.lo.clone();
        let mut hi = v.hi.clone();
        lo[0] = self.recon.metric_t[0];
        hi[0] = self.recon.metric_t[1];
        interior_grid(&Region::new(lo, hi), &self.recon.metric_counts)
    }

    /// Polarization basis, defaulting to `(-1, ±0.1, 0…)` and `(-1, 0, …, 0.1)`.
    pub fn metric_basis(&self) -> Vec<Vec<f64>> {
        if !self.recon.metric_basis.is_empty() {
            return self.recon.metric_basis.clone();
        }
        let m = self.dim() - 1;
        let mut basis = vec![];
        for k in 0..m {
            let mut b = vec![0.0; m];
            b[0] = -1.0;
            if k == 0 {
                b[1] = 0.1;
            } else if k == 1 {
                b[1] = -0.1;
            } else {
                b[k] = 0.1;
            }
            basis.push(b);
        }
        basis
    }

    pub fn flow_options(&self) -> FlowOptions {
        let t = &self.tolerances;
        FlowOptions {
            tol: Tolerances {
                rtol: t.rtol,
                atol: t.atol,
                ..Tolerances::default()
            },
            tol_shell: t.shell,
            ..FlowOptions::default()
        }
    }

    pub fn window(&self) -> Window {
        Window {
            t_bound: self.window.t_max,
            max_events: self.window.max_events,
        }
    }

    pub fn scan(&self) -> DirectionScan {
        DirectionScan {
            samples: self.recon.scan_samples,
            families: self.recon.families,
            bisect_tol: self.tolerances.bisect,
            confirm: CurveSchedule::default(),
            ..DirectionScan::default()
        }
    }

    /// Probe sources: the base grid times the direction fan, then the random
    /// sources drawn from the seed.
    pub fn sources(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim();
        let u = &self.regions.u;
        let mut out = vec![];
        for base in interior_grid(u, &self.probes.base_counts) {
            for &psi in &self.probes.axes {
                for i in 0..self.probes.directions {
                    let a = PI / 2.0 + PI * (i as f64 + 0.5) / self.probes.directions as f64;
                    out.push((base.clone(), fan_covector(dim, a, psi)));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.probes.random {
            let base: Vec<f64> =
                u.lo.iter()
                    .zip(&u.hi)
                    .map(|(a, b)| rng.gen_range(*a..=*b))
                    .collect();
            let a = rng.gen_range(0.75 * PI..1.25 * PI);
            let psi = rng.gen_range(-PI..PI);
            out.push((base, fan_covector(dim, a, psi)));
        }
        out
    }
}

fn spec_dim(spec: &ScenarioSpec) -> usize {
    match spec {
        ScenarioSpec::Cylinder { dim, .. } => *dim,
        ScenarioSpec::ProductDisc { .. } => 3,
        ScenarioSpec::ConformalVariant { base, .. } => spec_dim(base),
    }
}

/// `(cos α, sin α·e)` with `e = (sin ψ, …, cos ψ)` for n = 4.
pub fn fan_covector(dim: usize, alpha: f64, psi: f64) -> Vec<f64> {
    if dim == 3 {
        vec![alpha.cos(), alpha.sin()]
    } else {
        vec![
            alpha.cos(),
            alpha.sin() * psi.sin(),
            alpha.sin() * psi.cos(),
        ]
    }
}

/// Cell-centred grid of a box with `counts` points per axis.
pub fn interior_grid(r: &Region, counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for (k, &c) in counts.iter().enumerate() {
        let (lo, hi) = (r.lo[k], r.hi[k]);
        let vals: Vec<f64> = (0..c)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / c as f64)
            .collect();
        out = out
            .into_iter()
            .flat_map(|p| vals.iter().map(move |v| [p.clone(), vec![*v]].concat()))
            .collect();
    }
    out
}

/// Default configuration text (flat unit cylinder, n = 3).
pub const DEFAULT_CONFIG: &str = r#"schema = "lorentz-lens/config@1"
seed = 7
out = "out"

[scenario]
kind = "cylinder"
dim = 3
radius = 1.0

[regions]
u = { lo = [0.0, -0.5], hi = [6.0, 0.5] }
v = { lo = [0.0, 2.6415926535897931], hi = [12.0, 3.6415926535897931] }

[probes]
base_counts = [6, 3]
directions = 9
random = 8

[window]
t_max = 10.0
max_events = 100000

[recon]
cone_counts = [5, 4]
scan_samples = 24
families = 7
metric_counts = [5, 2]
metric_t = [3.0, 8.0]
metric_basis = [[-1.0, 0.1], [-1.0, -0.1]]
one_form_eps = 1e-3
one_form_points = 2
lens_patches = 2
cone_tol = 1e-3
metric_tol = 1e-4
one_form_tol = 1e-2
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses() {
        let c = RunConfig::parse(DEFAULT_CONFIG).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.sources().len(), 6 * 3 * 9 + 8);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = DEFAULT_CONFIG.replace("radius = 1.0", "radius = \"one\"");
        let e = RunConfig::parse(&bad).unwrap_err().to_string();
        // Tagged scenario tables report at their header.
        assert!(e.contains("line 5"), "{e}");
        let overlap = DEFAULT_CONFIG.replace("hi = [6.0, 0.5]", "hi = [6.0, 2.9]");
        let e = RunConfig::parse(&overlap).unwrap_err().to_string();
        assert!(e.contains("line 11") && e.contains("overlap"), "{e}");
        let neg = DEFAULT_CONFIG.replace("[window]", "[tolerances]\nrtol = -1.0\natol = 1e-12\nshell = 1e-8\nmatch_tol = 1e-6\nbisect = 1e-6\n\n[window]");
        let e = RunConfig::parse(&neg).unwrap_err().to_string();
        assert!(e.contains("rtol") && e.contains("line"), "{e}");
    }

    #[test]
    fn env_overrides_tolerances() {
        let mut t = ToleranceConfig::default();
        apply_env(&mut t, |k| (k == "LLENS_RTOL").then(|| "1e-12".to_string())).unwrap();
        assert_eq!(t.rtol, 1e-12);
        assert!(apply_env(&mut t, |k| (k == "LLENS_ATOL").then(|| "x".to_string())).is_err());
    }
}
