//! Broken rays and the lens map on cylinders, against chord geometry.

use lorentz_lens::field::ScalarField;
use lorentz_lens::flow::{reflect, trace_broken, FlowOptions, Window};
use lorentz_lens::geometry::{wrap_angle, CovectorClass};
use lorentz_lens::lens::{lens_differential, lens_inverse, lens_map, symplectic_residual};
use lorentz_lens::scenarios::make_cylinder;

#[test]
fn chords_of_the_flat_cylinder_follow_impact_parameter() {
    let s = make_cylinder(3, 1.0, None, None).unwrap();
    for slope in [0.0, 0.3, -0.55, 0.8] {
        let src = s
            .model
            .classify_covector(&[0.2, 0.4], &[-1.0, slope])
            .unwrap();
        let tr = trace_broken(&s.model, &src, &Window::events(6), &FlowOptions::default()).unwrap();
        assert_eq!(tr.events.len(), 6);
        let chord_t = 2.0 * (1.0 - slope * slope).sqrt();
        let arc = std::f64::consts::PI - 2.0 * slope.abs().asin();
        let mut turn = None;
        for (k, ev) in tr.events.iter().enumerate() {
            let k = (k + 1) as f64;
            let b = &ev.covector.base;
            assert!(
                (b[0] - 0.2 - k * chord_t).abs() < 1e-8,
                "t after {k} chords"
            );
            let d = wrap_angle(b[1] - 0.4);
            let sign = *turn.get_or_insert(if d * wrap_angle(arc) >= 0.0 {
                1.0
            } else {
                -1.0
            });
            assert!(
                wrap_angle(d - sign * k * arc).abs() < 1e-8,
                "angle after {k} chords"
            );
            // Static and rotationally symmetric: the covector is conserved.
            assert!((ev.covector.covec[0] + 1.0).abs() < 1e-9);
            assert!((ev.covector.covec[1] - slope).abs() < 1e-9);
        }
    }
}

#[test]
fn trajectories_stop_at_the_time_bound() {
    let lapse = ScalarField::constant(1.0).plus(
        ScalarField::coord(0)
            .times(ScalarField::coord(0))
            .scaled(0.1),
    );
    let s = make_cylinder(3, 1.0, Some(lapse), None).unwrap();
    for slope in [0.1, 0.5, 0.9] {
        let src = s
            .model
            .classify_covector(&[0.0, 0.0], &[-1.0, slope])
            .unwrap();
        let tr =
            trace_broken(&s.model, &src, &Window::until(7.5), &FlowOptions::default()).unwrap();
        assert!(tr.truncated);
        assert!(tr.events.iter().all(|e| e.covector.base[0] <= 7.5 + 1e-9));
    }
}

#[test]
fn reflection_fixes_the_tangential_part() {
    let s = make_cylinder(3, 1.0, None, None).unwrap();
    let src = s
        .model
        .classify_covector(&[1.0, 0.3], &[-1.0, 0.4])
        .unwrap();
    let tr = trace_broken(&s.model, &src, &Window::events(3), &FlowOptions::default()).unwrap();
    for ev in &tr.events {
        let back = reflect(&s.model, &ev.point, &ev.outgoing).unwrap();
        for (a, b) in back.iter().zip(&ev.incoming) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(s.model.symbol(&ev.point, &ev.outgoing).abs() < 1e-10);
    }
}

#[test]
fn inverse_lens_undoes_the_lens() {
    let opts = FlowOptions::precise();
    for dim in [3, 4] {
        let s = make_cylinder(dim, 1.0, None, None).unwrap();
        let (base, covec) = if dim == 3 {
            (vec![0.5, 0.2], vec![-1.0, 0.35])
        } else {
            (vec![0.5, 1.3, 0.2], vec![-1.0, 0.3, -0.2])
        };
        let src = s.model.classify_covector(&base, &covec).unwrap();
        assert_eq!(src.class, CovectorClass::Hyperbolic);
        for k in 1..=3 {
            let fwd = lens_map(&s.model, &src, k, &opts).unwrap();
            let back = lens_inverse(&s.model, &fwd.target, k, &opts).unwrap();
            let db = s.model.chart().wrapped_diff(&back.target.base, &base);
            assert!(db.iter().all(|d| d.abs() < 1e-9), "dim {dim} k {k}: {db:?}");
            for (a, b) in back.target.covec.iter().zip(&covec) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn lens_differential_is_symplectic_in_four_dimensions() {
    let s = make_cylinder(4, 1.0, None, None).unwrap();
    let src = s
        .model
        .classify_covector(&[0.3, 1.1, -0.4], &[-1.0, 0.2, 0.4])
        .unwrap();
    let d = lens_differential(&s.model, &src, 2, 1e-4, &FlowOptions::precise()).unwrap();
    assert!(symplectic_residual(&d) < 1e-6);
}
