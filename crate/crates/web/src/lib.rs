//! Browser demo: broken rays in a solid cylinder, their convergence to a
//! gliding ray, and light-cone recovery at a boundary point.
//!
//! Results cross the wasm boundary as flat `Vec<f64>` buffers. The plain
//! methods are callable natively; the exported wrappers turn their errors
//! into JS exceptions.

use std::f64::consts::PI;

use lorentz_lens::dnsynth::{LiveProbe, Region};
use lorentz_lens::field::ScalarField;
use lorentz_lens::flow::{convergence_probe, trace_broken, FlowOptions, Window};
use lorentz_lens::recon::{cone_angle_error, conformal_class_at, scan_point, DirectionScan};
use lorentz_lens::scenarios::{make_cylinder, Scenario};
use wasm_bindgen::prelude::*;

/// Offsets of the transversal family in [`Demo::convergence_rows`].
pub const EPSILONS: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];

#[wasm_bindgen]
pub struct Demo {
    scenario: Scenario,
}

impl Demo {
    /// Unit cylinder in 2+1 dimensions with lapse `1 + a t²`.
    pub fn build(lapse_curvature: f64) -> Result<Demo, String> {
        let lapse = (lapse_curvature != 0.0).then(|| {
            let t = ScalarField::coord(0);
            ScalarField::constant(1.0).plus(t.clone().times(t).scaled(lapse_curvature))
        });
        let scenario = make_cylinder(3, 1.0, lapse, None).map_err(|e| e.to_string())?;
        Ok(Demo { scenario })
    }

    /// `(x, y, t)` triples along the ray from boundary angle `theta` at time
    /// `t0` with covector `(-1, slope)`; a NaN triple separates arcs.
    pub fn trace_points(
        &self,
        t0: f64,
        theta: f64,
        slope: f64,
        events: usize,
    ) -> Result<Vec<f64>, String> {
        let model = &self.scenario.model;
        let src = model
            .classify_covector(&[t0, theta], &[-1.0, slope])
            .map_err(|e| e.to_string())?;
        let tr = trace_broken(
            model,
            &src,
            &Window::events(events.max(1)),
            &FlowOptions::default().recording(),
        )
        .map_err(|e| e.to_string())?;
        let mut out = vec![];
        for arc in &tr.arcs {
            for s in &arc.samples {
                out.extend([s.x[1], s.x[2], s.x[0]]);
            }
            out.extend([f64::NAN; 3]);
        }
        Ok(out)
    }

    /// `(ε, distance)` pairs for broken rays leaving `(0, 0)` with covector
    /// `(-1, 1) + ε(-1, 0)`, measured against the gliding ray over `t ≤ 6`.
    pub fn convergence_rows(&self) -> Result<Vec<f64>, String> {
        let model = &self.scenario.model;
        let glancing = (model.boundary_metric(&[0.0, 0.0])[(1, 1)]
            / -model.boundary_metric(&[0.0, 0.0])[(0, 0)])
            .sqrt();
        let src = model
            .classify_covector(&[0.0, 0.0], &[-1.0, glancing])
            .map_err(|e| e.to_string())?;
        let rows = convergence_probe(
            model,
            &src,
            &EPSILONS,
            &[-1.0, 0.0],
            6.0,
            &FlowOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        Ok(rows
            .iter()
            .flat_map(|r| [r.epsilon, r.distance.unwrap_or(f64::NAN)])
            .collect())
    }

    /// Conformal class at boundary point `(t, theta)` recovered from probes
    /// alone: the four entries of the fitted form, the cone angle error
    /// against the true metric, and the number of glancing directions used.
    pub fn cone_fit(&self, t: f64, theta: f64) -> Result<Vec<f64>, String> {
        let model = &self.scenario.model;
        let u = Region::new(vec![-1.0, theta - 0.5], vec![30.0, theta + 0.5]);
        let v = Region::new(vec![-1.0, theta + PI - 0.5], vec![30.0, theta + PI + 0.5]);
        let probe = LiveProbe::new(
            model,
            u,
            v.clone(),
            Window::until(t + 8.0),
            FlowOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let rec = scan_point(&probe, &v, &[t, theta], &DirectionScan::default())
            .map_err(|e| e.to_string())?;
        let fit = conformal_class_at(&rec, 5).map_err(|e| e.to_string())?;
        let q = fit.q();
        let truth = model
            .boundary_metric(&[t, theta])
            .try_inverse()
            .ok_or("singular boundary metric")?;
        let mut out: Vec<f64> = q.iter().copied().collect();
        out.push(cone_angle_error(&q, &truth, 64));
        out.push(rec.directions.len() as f64);
        Ok(out)
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(lapse_curvature: f64) -> Result<Demo, JsError> {
        Demo::build(lapse_curvature).map_err(js)
    }

    pub fn trace(
        &self,
        t0: f64,
        theta: f64,
        slope: f64,
        events: usize,
    ) -> Result<Vec<f64>, JsError> {
        self.trace_points(t0, theta, slope, events).map_err(js)
    }

    pub fn convergence(&self) -> Result<Vec<f64>, JsError> {
        self.convergence_rows().map_err(js)
    }

    pub fn fit_cone(&self, t: f64, theta: f64) -> Result<Vec<f64>, JsError> {
        self.cone_fit(t, theta).map_err(js)
    }
}
