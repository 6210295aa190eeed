//! Randomized invariants.

use std::f64::consts::PI;
use std::sync::OnceLock;

use lorentz_lens::dnsynth::{blind, BlindedView, LiveProbe, Region};
use lorentz_lens::flow::{reflect, FlowOptions, Window};
use lorentz_lens::geometry::CovectorClass;
use lorentz_lens::lens::lens_map;
use lorentz_lens::recon::{
    build_weak_lens, fit_conformal_class, polarization_set, polarize, richardson,
};
use lorentz_lens::scenarios::{make_cylinder, Scenario};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn cylinder() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| make_cylinder(3, 1.0, None, None).unwrap())
}

fn view() -> &'static BlindedView {
    static V: OnceLock<BlindedView> = OnceLock::new();
    V.get_or_init(|| {
        let s = cylinder();
        let u = Region::new(vec![0.0, -0.5], vec![6.0, 0.5]);
        let v = Region::new(vec![0.0, PI - 0.5], vec![12.0, PI + 0.5]);
        let probe =
            LiveProbe::new(&s.model, u, v, Window::until(10.0), FlowOptions::default()).unwrap();
        let mut sources = vec![];
        for i in 0..6 {
            for j in 0..3 {
                for k in 0..7 {
                    sources.push((
                        vec![0.5 + i as f64, -0.3 + 0.3 * j as f64],
                        vec![-1.0, -0.6 + 0.2 * k as f64],
                    ));
                }
            }
        }
        blind(&probe, &sources).unwrap().0
    })
}

/// Groups as sorted lists of probe indices, mapped through `relabel`.
fn canonical_groups(view: &BlindedView, relabel: &dyn Fn(usize) -> usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = build_weak_lens(view, 1e-6)
        .groups
        .iter()
        .map(|g| {
            let mut s: Vec<usize> = g.sources.iter().map(|&i| relabel(i)).collect();
            s.sort();
            s
        })
        .collect();
    groups.sort();
    groups
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_an_involution(theta in -PI..PI, t in 0.0..5.0f64, a in -3.0..3.0f64, b in -3.0..3.0f64, c in 0.1..3.0f64) {
        let s = cylinder();
        let x = s.model.chart().embed(&[t, theta]);
        let nrm = s.model.unit_normal(&x);
        // Tangential part b, normal part c.
        let xi = vec![a, c * nrm[1] - b * nrm[2], c * nrm[2] + b * nrm[1]];
        prop_assume!(s.model.cometric(&x, &xi, &nrm).abs() > 1e-6);
        let once = reflect(&s.model, &x, &xi).unwrap();
        let twice = reflect(&s.model, &x, &once).unwrap();
        let scale = xi.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (p, q) in twice.iter().zip(&xi) {
            prop_assert!((p - q).abs() <= 1e-12 * scale);
        }
        let dp = s.model.symbol(&x, &once) - s.model.symbol(&x, &xi);
        prop_assert!(dp.abs() <= 1e-12 * scale * scale);
    }

    #[test]
    fn lens_is_homogeneous(t in 0.0..3.0f64, theta in -PI..PI, slope in -0.8..0.8f64, lambda in 0.2..5.0f64) {
        let s = cylinder();
        let opts = FlowOptions::default();
        let src = s.model.classify_covector(&[t, theta], &[-1.0, slope]).unwrap();
        let scaled = s.model.classify_covector(&[t, theta], &[-lambda, lambda * slope]).unwrap();
        prop_assert_eq!(scaled.class, CovectorClass::Hyperbolic);
        let a = lens_map(&s.model, &src, 1, &opts).unwrap();
        let b = lens_map(&s.model, &scaled, 1, &opts).unwrap();
        let db = s.model.chart().wrapped_diff(&a.target.base, &b.target.base);
        prop_assert!(db.iter().all(|d| d.abs() < 1e-8));
        for (x, y) in a.target.covec.iter().zip(&b.target.covec) {
            prop_assert!((lambda * x - y).abs() < 1e-8 * lambda);
        }
    }

    #[test]
    fn region_membership_ignores_winding(t in 0.0..1.0f64, theta in -PI..PI, turns in -3i32..3) {
        let chart = cylinder().model.chart();
        let r = Region::new(vec![0.0, PI - 0.5], vec![1.0, PI + 0.5]);
        let shifted = theta + 2.0 * PI * turns as f64;
        prop_assert_eq!(r.contains(&chart, &[t, theta]), r.contains(&chart, &[t, shifted]));
        let n = r.normalize(&chart, &[t, shifted]);
        prop_assert!(n[1] >= r.lo[1] && n[1] < r.lo[1] + 2.0 * PI);
    }

    #[test]
    fn weak_lens_ignores_probe_order(seed in any::<u64>()) {
        let view = view();
        let mut order: Vec<usize> = (0..view.probes.len()).collect();
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let mut shuffled = view.clone();
        shuffled.probes = order.iter().map(|&i| view.probes[i].clone()).collect();
        let base = canonical_groups(view, &|i| i);
        let permuted = canonical_groups(&shuffled, &|i| order[i]);
        prop_assert_eq!(base, permuted);
    }

    #[test]
    fn weak_lens_ignores_covector_scale(scales in proptest::collection::vec(0.1..10.0f64, 1..8)) {
        let view = view();
        let mut scaled = view.clone();
        for (i, p) in scaled.probes.iter_mut().enumerate() {
            let f = scales[i % scales.len()];
            p.source.covec.iter_mut().for_each(|c| *c *= f);
            for h in &mut p.hits {
                h.covec.iter_mut().for_each(|c| *c *= f);
            }
        }
        prop_assert_eq!(canonical_groups(view, &|i| i), canonical_groups(&scaled, &|i| i));
    }

    #[test]
    fn cone_fit_ignores_direction_scale(f in 0.5..2.0f64, scales in proptest::collection::vec(0.1..10.0f64, 6)) {
        // Null covectors of -dt²/f + ξx² + ξy².
        let dirs: Vec<Vec<f64>> = (0..6)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / 6.0 + 0.1;
                vec![-f.sqrt(), a.cos(), a.sin()]
            })
            .collect();
        let scaled: Vec<Vec<f64>> = dirs.iter().zip(&scales).map(|(d, s)| d.iter().map(|x| x * s).collect()).collect();
        let p = [0.0, 0.0, 0.0];
        let a = fit_conformal_class(&p, &dirs, None).unwrap().q();
        let b = fit_conformal_class(&p, &scaled, None).unwrap().q();
        prop_assert!((a - b).abs().max() < 1e-9);
    }

    #[test]
    fn richardson_cancels_linear_and_quadratic_terms(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, eps in 1e-3..1.0f64) {
        let f = |e: f64| a + b * e + c * e * e;
        prop_assert!((richardson(f(eps), f(eps / 2.0), f(eps / 4.0)) - a).abs() < 1e-12);
    }

    #[test]
    fn polarization_recovers_the_quadratic_form(
        entries in proptest::collection::vec(-2.0..2.0f64, 6),
        basis in proptest::collection::vec(-2.0..2.0f64, 9),
    ) {
        let c = DMatrix::from_fn(3, 3, |i, j| {
            let (i, j) = (i.min(j), i.max(j));
            entries[i * 3 + j - i * (i + 1) / 2]
        });
        let basis: Vec<Vec<f64>> = basis.chunks(3).map(|r| r.to_vec()).collect();
        let z = DMatrix::from_fn(3, 3, |i, j| basis[i][j]);
        prop_assume!(z.determinant().abs() > 0.1);
        let values: Vec<f64> = polarization_set(&basis)
            .iter()
            .map(|e| {
                let e = nalgebra::DVector::from_column_slice(e);
                e.dot(&(&c * &e))
            })
            .collect();
        let got = polarize(&basis, &values);
        prop_assert!((got - c).abs().max() < 1e-8);
    }
}
