//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Tolerances are pinned here. Oracles are closed forms on the flat and
//! time-dependent cylinders wherever one exists.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lorentz_lens::dnsynth::{blind, synthesize, LiveProbe, Region};
use lorentz_lens::field::ScalarField;
use lorentz_lens::flow::{
    convergence_probe, gliding_geodesic_deviation, reflect, trace_broken, CurveWindow, FlowOptions,
    Window,
};
use lorentz_lens::geometry::{BoundaryCovector, CovectorClass, ManifoldModel, OneForm};
use lorentz_lens::lens::{
    lens_differential, lens_map, recover_scaling, sample_lens_grid, symplectic_residual,
};
use lorentz_lens::ode::Tolerances;
use lorentz_lens::recon::*;
use lorentz_lens::scenarios::{make_conformal_variant, make_cylinder, make_product_disc, Scenario};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn lapse() -> ScalarField {
    ScalarField::constant(1.0).plus(
        ScalarField::coord(0)
            .times(ScalarField::coord(0))
            .scaled(0.1),
    )
}

fn cylinder3() -> Scenario {
    make_cylinder(3, 1.0, None, None).unwrap()
}

fn lapse_cylinder() -> Scenario {
    make_cylinder(3, 1.0, Some(lapse()), None).unwrap()
}

fn cylinder4() -> Scenario {
    make_cylinder(4, 1.0, None, None).unwrap()
}

fn product_disc() -> Scenario {
    make_product_disc(
        1.0,
        ScalarField::constant(1.0).plus(ScalarField::SpatialRadiusSq.scaled(0.1)),
        None,
    )
    .unwrap()
}

fn regions3() -> (Region, Region) {
    (
        Region::new(vec![-1.0, -0.5], vec![30.0, 0.5]),
        Region::new(vec![-1.0, PI - 0.5], vec![30.0, PI + 0.5]),
    )
}

fn regions4() -> (Region, Region) {
    (
        Region::new(
            vec![-1.0, PI / 2.0 - 0.6, -0.6],
            vec![30.0, PI / 2.0 + 0.6, 0.6],
        ),
        Region::new(
            vec![-1.0, PI / 2.0 - 0.6, PI - 0.6],
            vec![30.0, PI / 2.0 + 0.6, PI + 0.6],
        ),
    )
}

/// Random future hyperbolic covector at a random base: `(-1, λ w)` with
/// `λ` at most `reach` of the glancing value.
fn random_source(model: &ManifoldModel, rng: &mut ChaCha8Rng, reach: f64) -> BoundaryCovector {
    let dim = model.dim();
    loop {
        let mut base = vec![rng.gen_range(0.0..3.0), rng.gen_range(-PI..PI)];
        if dim == 4 {
            base[1] = rng.gen_range(0.5..PI - 0.5);
            base.push(rng.gen_range(-PI..PI));
        }
        let w: Vec<f64> = (1..dim - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gi = model.boundary_metric(&base).try_inverse().unwrap();
        let ww: f64 = (0..w.len())
            .map(|i| {
                (0..w.len())
                    .map(|j| w[i] * gi[(i + 1, j + 1)] * w[j])
                    .sum::<f64>()
            })
            .sum();
        if ww < 1e-6 {
            continue;
        }
        let lam = reach * rng.gen_range(0.0..1.0) * (-gi[(0, 0)] / ww).sqrt();
        let covec: Vec<f64> = std::iter::once(-1.0)
            .chain(w.iter().map(|x| lam * x))
            .collect();
        let bc = model.classify_covector(&base, &covec).unwrap();
        if bc.class == CovectorClass::Hyperbolic {
            return bc;
        }
    }
}

fn shell_and_reflection() -> (Outcome, Outcome) {
    let scenarios = [cylinder3(), lapse_cylinder()];
    let opts = FlowOptions::default();
    let mut worst_shell: f64 = 0.0;
    let (mut worst_tan, mut worst_p, mut worst_inv): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut count = 0;
    let mut events = 0;
    for (si, s) in scenarios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + si as u64);
        let sources: Vec<BoundaryCovector> = (0..500)
            .map(|_| random_source(&s.model, &mut rng, 0.95))
            .collect();
        let rows: Vec<(f64, f64, f64, f64, usize)> = sources
            .par_iter()
            .map(|src| {
                let tr = trace_broken(&s.model, src, &Window::events(20), &opts).expect("trace");
                let chart = s.model.chart();
                let mut shell = tr.max_shell();
                let (mut tan, mut dp, mut inv): (f64, f64, f64) = (0.0, 0.0, 0.0);
                for ev in &tr.events {
                    shell = shell.max(ev.shell_at_hit);
                    let e = chart.jacobian(&ev.covector.base);
                    let scale: f64 = ev.incoming.iter().map(|v| v * v).sum::<f64>();
                    let ti = e.transpose() * nalgebra::DVector::from_column_slice(&ev.incoming);
                    let to = e.transpose() * nalgebra::DVector::from_column_slice(&ev.outgoing);
                    tan = tan.max((ti - to).norm() / scale.sqrt());
                    let pin = s.model.symbol(&ev.point, &ev.incoming);
                    let pout = s.model.symbol(&ev.point, &ev.outgoing);
                    dp = dp.max((pin - pout).abs() / scale);
                    let back = reflect(&s.model, &ev.point, &ev.outgoing).expect("reflect");
                    let d = back
                        .iter()
                        .zip(&ev.incoming)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    inv = inv.max(d / scale.sqrt());
                }
                (shell, tan, dp, inv, tr.events.len())
            })
            .collect();
        for (sh, t, p, i, n) in rows {
            worst_shell = worst_shell.max(sh);
            worst_tan = worst_tan.max(t);
            worst_p = worst_p.max(p);
            worst_inv = worst_inv.max(i);
            events += n;
            count += 1;
        }
    }
    let shell = outcome(
        count >= 1000 && worst_shell <= 1e-8,
        format!(
            "{count} trajectories, {events} events, max |p|/|ξ|² = {worst_shell:.2e} (tol 1e-8)"
        ),
    );
    let refl = outcome(
        worst_tan <= 1e-12 && worst_p <= 1e-12 && worst_inv <= 1e-12,
        format!(
            "tangential {worst_tan:.2e}, Δp {worst_p:.2e}, involution {worst_inv:.2e} (tol 1e-12)"
        ),
    );
    (shell, refl)
}

fn gliding() -> Outcome {
    let w = CurveWindow {
        t_bound: 20.0,
        s_max: 1e4,
        ds: 0.05,
    };
    let tol = Tolerances::default().with_rtol(1e-12);
    let mut worst: f64 = 0.0;
    let mut rays = 0;
    for s in [cylinder3(), lapse_cylinder(), product_disc(), cylinder4()] {
        let pts: Vec<Vec<f64>> = if s.model.dim() == 3 {
            vec![vec![0.0, 0.0], vec![0.0, 1.0]]
        } else {
            vec![vec![0.0, 1.2, 0.3]]
        };
        for p in pts {
            let cometric = s.model.boundary_metric(&p).try_inverse().unwrap();
            let t = s.model.boundary_timelike(&p);
            let covecs: Vec<Vec<f64>> = if s.model.dim() == 3 {
                null_covectors(&cometric, 4)
                    .into_iter()
                    .map(|nu| if nu.dot(&t) > 0.0 { -nu } else { nu })
                    .map(|nu| nu.as_slice().to_vec())
                    .collect()
            } else {
                // Nonzero azimuthal momentum keeps the rays off the chart's poles.
                [0.3, 1.2, 2.0, 4.0]
                    .iter()
                    .map(|b: &f64| vec![-1.0, b.cos(), b.sin() * p[1].sin()])
                    .collect()
            };
            for nu in covecs {
                let src = s.model.classify_covector(&p, &nu).unwrap();
                let dev = gliding_geodesic_deviation(&s.model, &src, &w, tol).expect("gliding");
                worst = worst.max(dev);
                rays += 1;
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!(
            "{rays} rays on 4 scenarios over t ∈ [0, 20], max deviation {worst:.2e} (tol 1e-8)"
        ),
    )
}

fn convergence() -> Outcome {
    let s = cylinder3();
    let src = s
        .model
        .classify_covector(&[0.0, 0.0], &[-1.0, 1.0])
        .unwrap();
    let rows = convergence_probe(
        &s.model,
        &src,
        &[1e-1, 1e-2, 1e-3, 1e-4],
        &[-1.0, 0.0],
        6.0,
        &FlowOptions::default(),
    )
    .expect("convergence probe");
    let d: Vec<f64> = rows
        .iter()
        .map(|r| r.distance.unwrap_or(f64::INFINITY))
        .collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing && d[3] <= 1e-2,
        format!(
            "distances {:?} (strictly decreasing, last ≤ 1e-2)",
            d.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn symplecticity() -> Outcome {
    let opts = FlowOptions::precise();
    let mut worst_sym: f64 = 0.0;
    let mut worst_hom: f64 = 0.0;
    let mut evaluated = 0;
    for (si, s) in [cylinder3(), lapse_cylinder(), product_disc(), cylinder4()]
        .iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + si as u64);
        let sources: Vec<BoundaryCovector> = (0..100)
            .map(|_| random_source(&s.model, &mut rng, 0.8))
            .collect();
        let res: Vec<(f64, f64)> = sources
            .par_iter()
            .map(|src| {
                let d = lens_differential(&s.model, src, 1, 1e-4, &opts).expect("differential");
                let a = lens_map(&s.model, src, 1, &opts).expect("lens");
                let tripled: Vec<f64> = src.covec.iter().map(|c| 3.0 * c).collect();
                let src3 = s.model.classify_covector(&src.base, &tripled).unwrap();
                let b = lens_map(&s.model, &src3, 1, &opts).expect("lens");
                let chart = s.model.chart();
                let mut h = chart
                    .wrapped_diff(&a.target.base, &b.target.base)
                    .iter()
                    .fold(0.0f64, |m, x| m.max(x.abs()));
                let scale = a.target.covec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (x, y) in a.target.covec.iter().zip(&b.target.covec) {
                    h = h.max((3.0 * x - y).abs() / (3.0 * scale));
                }
                (symplectic_residual(&d), h)
            })
            .collect();
        for (sy, h) in res {
            worst_sym = worst_sym.max(sy);
            worst_hom = worst_hom.max(h);
            evaluated += 1;
        }
    }
    outcome(
        worst_sym <= 1e-5 && worst_hom <= 1e-8,
        format!("{evaluated} probes on 4 scenarios: symplectic {worst_sym:.2e} (tol 1e-5), homogeneity {worst_hom:.2e} (tol 1e-8)"),
    )
}

fn scaling() -> Outcome {
    let s = cylinder3();
    let opts = FlowOptions::precise();
    let mut worst: f64 = 0.0;
    let mut nodes = 0;
    for covec in [[-1.0, 0.4], [-1.3, -0.2], [-0.8, 0.1]] {
        let src = s.model.classify_covector(&[0.5, 0.1], &covec).unwrap();
        let (mut grid, truth) = sample_lens_grid(&s.model, &src, 1, 1e-3, 1, &opts).expect("grid");
        // Only directions are kept.
        for d in &mut grid.target_direction {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= n);
        }
        let rec = recover_scaling(&grid).expect("scaling");
        for (flat, t) in truth.iter().enumerate() {
            let mu = rec.log_scale[flat].exp();
            let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = grid.target_direction[flat]
                .iter()
                .zip(t)
                .map(|(d, x)| (mu * d - x).abs())
                .fold(0.0, f64::max)
                / tn;
            worst = worst.max(err);
            nodes += 1;
        }
    }
    outcome(
        worst <= 1e-5,
        format!("{nodes} grid nodes, relative covector error {worst:.2e} (tol 1e-5)"),
    )
}

/// `|Q|` on a cylinder with lapse `f` (or 1) from the closed-form normal
/// components and `|ḡ| = f R²`; the phase of `A = a dt` is `a Δt`.
fn measurement_identity() -> Outcome {
    let (u, v) = regions3();
    let a = 0.3;
    let mut worst_mod: f64 = 0.0;
    let mut worst_phase: f64 = 0.0;
    let mut records = 0;
    for with_lapse in [false, true] {
        let f = |t: f64| if with_lapse { 1.0 + t * t / 10.0 } else { 1.0 };
        let l = if with_lapse { Some(lapse()) } else { None };
        let plain = make_cylinder(3, 1.0, l.clone(), None).unwrap();
        let charged = make_cylinder(3, 1.0, l, Some(OneForm::dt(a))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + with_lapse as u64);
        let sources: Vec<BoundaryCovector> = (0..60)
            .map(|_| {
                let t: f64 = rng.gen_range(0.0..3.0);
                let th: f64 = rng.gen_range(-0.5..0.5);
                let s: f64 = rng.gen_range(-0.9..0.9) / f(t).sqrt();
                plain.model.classify_covector(&[t, th], &[-1.0, s]).unwrap()
            })
            .collect();
        let w = Window::until(12.0);
        let opts = FlowOptions::default();
        let r0 = synthesize(&plain.model, &u, &v, &sources, &w, &opts).expect("synth");
        let r1 = synthesize(&charged.model, &u, &v, &sources, &w, &opts).expect("synth");
        assert_eq!(r0.len(), r1.len());
        let normal = |t: f64, c: &[f64]| (c[0] * c[0] / f(t) - c[1] * c[1]).sqrt();
        for (p, q) in r0.iter().zip(&r1) {
            let (x0, y) = (&p.source, &p.hit);
            let expected = 2.0
                * (normal(x0.base[0], &x0.covec) * normal(y.base[0], &y.covec)).sqrt()
                * f(x0.base[0]).powf(0.25)
                * f(y.base[0]).powf(-0.25);
            worst_mod = worst_mod.max((p.q.norm() - expected).abs() / expected);
            let phase = (q.q / p.q).arg();
            let dt = y.base[0] - x0.base[0];
            let target = lorentz_lens::geometry::wrap_angle(a * dt);
            worst_phase = worst_phase.max(lorentz_lens::geometry::wrap_angle(phase - target).abs());
            records += 1;
        }
    }
    outcome(
        records > 0 && worst_mod <= 1e-8 && worst_phase <= 1e-6,
        format!("{records} records: |Q| relative {worst_mod:.2e} (tol 1e-8), phase {worst_phase:.2e} (tol 1e-6)"),
    )
}

fn dense_sources() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![];
    for i in 0..8 {
        for j in 0..5 {
            for k in 0..7 {
                let t = 0.5 + 0.5 * i as f64;
                let th = -0.4 + 0.2 * j as f64;
                let s = -0.6 + 0.2 * k as f64;
                out.push((vec![t, th], vec![-1.0, s]));
            }
        }
    }
    out
}

fn gauge_and_relation() -> (Outcome, Outcome) {
    let (u, v) = regions3();
    let base = cylinder3();
    let psi = ScalarField::Bump {
        center: vec![3.0, 0.0, 0.3],
        radius: 0.5,
        amplitude: 1.0,
    };
    let pair = make_conformal_variant(&base, 0.3, 0.5, &u, &v, Some(psi), false).unwrap();
    let broken = make_conformal_variant(&base, 0.3, 0.5, &u, &v, None, true).unwrap();
    let view = |m: &ManifoldModel| {
        let p = LiveProbe::new(
            m,
            u.clone(),
            v.clone(),
            Window::until(10.0),
            FlowOptions::default(),
        )
        .unwrap();
        blind(&p, &dense_sources()).unwrap().0
    };
    let (first, second, third) = (view(&base.model), view(&pair.model), view(&broken.model));
    let mut worst: f64 = 0.0;
    let mut records = 0;
    for (p1, p2) in first.probes.iter().zip(&second.probes) {
        assert_eq!(p1.hits.len(), p2.hits.len());
        for (a, b) in p1.hits.iter().zip(&p2.hits) {
            worst = worst.max((a.q() - b.q()).norm() / a.q().norm());
            records += 1;
        }
    }
    let gauge = outcome(
        records >= 200 && worst <= 1e-6,
        format!("{records} records, max |ΔQ|/|Q| = {worst:.2e} (tol 1e-6)"),
    );
    let bm = base.model.clone();
    let h = move |x: &[f64]| -> DMatrix<f64> { bm.boundary_metric(x) };
    let rel = check_conformal_relation(&first, &second, &h, 1e-6, 1e-6).expect("relation");
    let bad = check_conformal_relation(&first, &third, &h, 1e-6, 1e-6).expect("relation");
    let phi = |x: &[f64]| log_conformal_ratio(&base.model, &pair.model, x);
    let eq = equation_residuals(&second, &h, &phi)
        .into_iter()
        .fold(0.0, f64::max);
    let relation = outcome(
        rel.max_gap <= 1e-6 && eq <= 1e-6 && !rel.flagged && bad.max_gap >= 1e-3 && bad.flagged,
        format!(
            "gauge pair gap {:.2e}, equation residual {eq:.2e} (tol 1e-6); broken variant gap {:.2e} (≥ 1e-3), flagged {}",
            rel.max_gap, bad.max_gap, bad.flagged
        ),
    );
    (gauge, relation)
}

fn cones() -> Outcome {
    let mut parts = vec![];
    let mut pass = true;
    for (s, (u, v), counts) in [
        (cylinder3(), regions3(), vec![5, 4]),
        (cylinder4(), regions4(), vec![5, 2, 2]),
    ] {
        let probe = LiveProbe::new(
            &s.model,
            u.clone(),
            v.clone(),
            Window::until(8.0),
            FlowOptions::default(),
        )
        .unwrap();
        let inner = Region::new(
            std::iter::once(0.0)
                .chain(u.lo[1..].iter().map(|x| x + 0.1))
                .collect(),
            std::iter::once(3.0)
                .chain(u.hi[1..].iter().map(|x| x - 0.1))
                .collect(),
        );
        let grid = lorentz_lens::dnsynth::Region::grid(&inner, 1);
        let _ = grid;
        let points = cell_grid(&inner, &counts);
        let set = detect_recoverable(&probe, &v, &points, &DirectionScan::default()).expect("scan");
        let mut worst: f64 = 0.0;
        let mut n = 0;
        for rec in set.recoverable_points() {
            let fit = conformal_class_at(rec, 5).expect("fit");
            let truth = s.model.boundary_metric(&rec.point).try_inverse().unwrap();
            worst = worst.max(cone_angle_error(&fit.q(), &truth, 64));
            n += 1;
        }
        pass &= n >= 20 && worst <= 1e-3;
        parts.push(format!(
            "n={}: {n} points, max angle {worst:.2e}",
            s.model.dim()
        ));
    }
    outcome(
        pass,
        format!("{} (≥ 20 points, tol 1e-3)", parts.join("; ")),
    )
}

fn cell_grid(r: &Region, counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for (k, &c) in counts.iter().enumerate() {
        let vals: Vec<f64> = (0..c)
            .map(|i| r.lo[k] + (r.hi[k] - r.lo[k]) * (i as f64 + 0.5) / c as f64)
            .collect();
        out = out
            .into_iter()
            .flat_map(|p| vals.iter().map(move |v| [p.clone(), vec![*v]].concat()))
            .collect();
    }
    out
}

fn orientation() -> Outcome {
    let s = cylinder3();
    let (u, v) = regions3();
    let probe = LiveProbe::new(
        &s.model,
        u.clone(),
        v.clone(),
        Window::until(8.0),
        FlowOptions::default(),
    )
    .unwrap();
    let points: Vec<Vec<f64>> = (0..5)
        .map(|i| vec![0.3 + 0.4 * i as f64, -0.3 + 0.15 * i as f64])
        .collect();
    let mut patches = 0;
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for p in &points {
        let rec = scan_point(&probe, &v, p, &DirectionScan::default()).expect("scan");
        let fit = conformal_class_at(&rec, 5).expect("fit");
        for dir in 0..rec.directions.len().min(2) {
            patches += 1;
            let Ok(lens) =
                recover_lens_orientation(&probe, &u, &rec, dir, &fit, &LensPatch::default())
            else {
                continue;
            };
            let opts = FlowOptions::default();
            let b = validate_branch(&s.model, &lens.pairs, 1e-6, &opts).expect("branch");
            let flipped = order_chains(&lens.chains, &lens.time.flipped());
            let f = validate_branch(&s.model, &flipped, 1e-6, &opts).expect("branch");
            worst = worst.max(b.max_error);
            if let (Some(x), Some(y)) = (b.uniform(), f.uniform()) {
                if x != y && !lens.pairs.is_empty() {
                    good += 1;
                }
            }
        }
    }
    outcome(
        patches >= 10 && good == patches,
        format!("{good}/{patches} patches uniform with the flip reversing the branch, max pair error {worst:.2e}"),
    )
}

fn one_form() -> Outcome {
    let (u, v) = regions3();
    let mut details = vec![];
    let mut pass = true;
    let bump = ScalarField::Bump {
        center: vec![2.0, 0.0, 0.0],
        radius: 0.9,
        amplitude: 1.0,
    };
    for (label, a, exact) in [
        ("A = 0.3 dt", OneForm::dt(0.3), false),
        ("A = dψ", OneForm::exact(bump), true),
    ] {
        let s = make_cylinder(3, 1.0, None, Some(a)).unwrap();
        let probe = LiveProbe::new(
            &s.model,
            u.clone(),
            v.clone(),
            Window::until(8.0),
            FlowOptions::default(),
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for p in [[0.5, 0.0], [1.5, 0.2]] {
            let rec = scan_point(&probe, &v, &p, &DirectionScan::default()).expect("scan");
            let fit = conformal_class_at(&rec, 5).expect("fit");
            let got = recover_one_form(&probe, &u, &rec, &fit, &OneFormSchedule::default())
                .expect("one-form");
            let truth = tangential_potential(&s.model, &p);
            let err = if exact {
                got.components.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            } else {
                let scale = truth.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                got.components
                    .iter()
                    .zip(&truth)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
                    / scale
            };
            worst = worst.max(err);
        }
        let tol = if exact { 1e-3 } else { 1e-2 };
        pass &= worst <= tol;
        details.push(format!(
            "{label}: {} {worst:.2e} (tol {tol:.0e})",
            if exact { "absolute" } else { "relative" }
        ));
    }
    outcome(pass, details.join("; "))
}

fn metric_sources() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut sources = vec![];
    for i in 0..9 {
        for j in 0..7 {
            let th = -0.45 + 0.15 * j as f64;
            let slope = -0.3 + 0.075 * i as f64;
            sources.push((vec![1.0 + 0.25 * i as f64, th], vec![-1.0, slope]));
        }
    }
    sources
}

fn metric() -> Outcome {
    let (u, v) = regions3();
    let mut pass = true;
    let mut details = vec![];
    for (s, tol) in [(cylinder3(), 1e-4), (product_disc(), 1e-3)] {
        let probe = LiveProbe::new(
            &s.model,
            u.clone(),
            v.clone(),
            Window::until(8.0),
            FlowOptions::default(),
        )
        .unwrap();
        let (view, _) = blind(&probe, &metric_sources()).unwrap();
        let model = s.model.clone();
        let prior = move |x: &[f64]| -> DMatrix<f64> { model.boundary_metric(x) };
        let basis = vec![vec![-1.0, 0.1], vec![-1.0, -0.1]];
        let targets: Vec<Vec<f64>> = (0..5)
            .flat_map(|i| [PI - 0.1, PI + 0.1].map(|th| vec![3.2 + 0.4 * i as f64, th]))
            .collect();
        let results: Vec<_> = targets
            .par_iter()
            .map(|y| {
                recover_metric_with_prior(&probe, &view, &prior, y, &basis, &MateSearch::default())
                    .map(|r| (y.clone(), r))
            })
            .collect();
        let mut worst: f64 = 0.0;
        let mut gap: f64 = 0.0;
        let mut ok = 0;
        for r in results {
            match r {
                Ok((y, r)) => {
                    worst = worst.max(relative_metric_error(
                        &r.metric_matrix(),
                        &s.model.boundary_metric(&y),
                    ));
                    gap = gap.max(r.determinant_identity_gap());
                    ok += 1;
                }
                Err(e) => details.push(format!("{}: {e}", s.name)),
            }
        }
        pass &= ok >= 10 && worst <= tol && gap <= 1e-6;
        details.push(format!(
            "{}: {ok} points, error {worst:.2e} (tol {tol:.0e}), det identity {gap:.2e}",
            s.name
        ));
    }
    outcome(pass, details.join("; "))
}

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_lorentz-lens"))
}

fn run_cli(out: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let o = Command::new(binary())
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LLENS_RTOL")
        .env_remove("LLENS_ATOL")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "{args:?} exited {}: {}",
            o.status,
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(o)
}

fn blinding(dir: &Path) -> Outcome {
    let run = || -> Result<String, String> {
        run_cli(dir, &["synth"])?;
        std::fs::remove_file(dir.join("truth.json")).map_err(|e| e.to_string())?;
        run_cli(dir, &["--strict", "reconstruct"])?;
        let text =
            std::fs::read_to_string(dir.join("reconstruction.json")).map_err(|e| e.to_string())?;
        let rec: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if rec["summary"]["truth_available"] != serde_json::Value::Bool(false) {
            return Err("deltas computed without a sidecar".into());
        }
        // Independent check against the configured cylinder.
        let s = cylinder3();
        let num = |v: &serde_json::Value| -> Vec<Vec<f64>> {
            v.as_array()
                .unwrap()
                .iter()
                .map(|r| {
                    r.as_array()
                        .unwrap()
                        .iter()
                        .map(|x| x.as_f64().unwrap())
                        .collect()
                })
                .collect()
        };
        let pt = |v: &serde_json::Value| -> Vec<f64> {
            v.as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .collect()
        };
        let mut cone: f64 = 0.0;
        let cones = rec["cones"].as_array().unwrap();
        for c in cones {
            let q = num(&c["q_matrix"]);
            let q = DMatrix::from_fn(q.len(), q.len(), |i, j| q[i][j]);
            let truth = s
                .model
                .boundary_metric(&pt(&c["point"]))
                .try_inverse()
                .unwrap();
            cone = cone.max(cone_angle_error(&q, &truth, 64));
        }
        let mut met: f64 = 0.0;
        let metrics = rec["metric"].as_array().unwrap();
        for m in metrics {
            let g = num(&m["metric"]);
            let g = DMatrix::from_fn(g.len(), g.len(), |i, j| g[i][j]);
            met = met.max(relative_metric_error(
                &g,
                &s.model.boundary_metric(&pt(&m["point"])),
            ));
        }
        if cones.len() < 20 || metrics.len() < 10 || cone > 1e-3 || met > 1e-4 {
            return Err(format!(
                "{} cones (max {cone:.2e}), {} metrics (max {met:.2e})",
                cones.len(),
                metrics.len()
            ));
        }
        Ok(format!("sidecar absent, strict reconstruct passed: {} cones ≤ {cone:.2e}, {} metrics ≤ {met:.2e}", cones.len(), metrics.len()))
    };
    match run() {
        Ok(d) => outcome(true, d),
        Err(e) => outcome(false, e),
    }
}

fn pipeline(dir: &Path, jobs: &str) -> Result<(), String> {
    for cmd in [
        "check",
        "trace",
        "glide",
        "lens",
        "synth",
        "reconstruct",
        "gauge-test",
        "report",
    ] {
        run_cli(dir, &["--jobs", jobs, cmd])?;
    }
    Ok(())
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let run = || -> Result<String, String> {
        pipeline(a, "1")?;
        pipeline(b, "2")?;
        let mut names: Vec<String> = std::fs::read_dir(a)
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for n in &names {
            let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(n)).map_err(|e| format!("{n}: {e}"))?;
            if x != y {
                return Err(format!("{n} differs between runs"));
            }
        }
        Ok(format!(
            "{} artifacts byte-identical across two runs (1 and 2 workers)",
            names.len()
        ))
    };
    match run() {
        Ok(d) => outcome(true, d),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let scratch =
        std::env::temp_dir().join(format!("lorentz-lens-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&scratch);
    let t0 = Instant::now();
    let mut lines: Vec<(usize, &str, Outcome)> = vec![];
    let (shell, refl) = shell_and_reflection();
    lines.push((1, "shell conservation", shell));
    lines.push((2, "reflection law", refl));
    lines.push((3, "gliding equals boundary null geodesic", gliding()));
    lines.push((4, "broken to gliding convergence", convergence()));
    lines.push((5, "lens symplecticity and homogeneity", symplecticity()));
    lines.push((6, "scaling recovery from directions", scaling()));
    lines.push((7, "transfer coefficient identity", measurement_identity()));
    let (gauge, relation) = gauge_and_relation();
    lines.push((8, "gauge invariance", gauge));
    lines.push((9, "conformal class recovery", cones()));
    lines.push((10, "lens up to orientation", orientation()));
    lines.push((11, "conformal factor relation", relation));
    lines.push((12, "one-form recovery", one_form()));
    lines.push((13, "metric recovery with prior", metric()));
    lines.push((14, "blinding hygiene", blinding(&scratch.join("blind"))));
    lines.push((
        15,
        "determinism",
        determinism(&scratch.join("a"), &scratch.join("b")),
    ));
    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    for (i, name, o) in &lines {
        println!(
            "[{}] {i:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        lines.len() - failed,
        lines.len(),
        t0.elapsed().as_secs_f64()
    );
    let _ = std::fs::remove_dir_all(&scratch);
    if failed > 0 {
        std::process::exit(1);
    }
}
