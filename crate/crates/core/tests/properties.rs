use proptest::prelude::*;

use rigcal::frame::build_common_frame;
use rigcal::metrics::{decompose_error, error_stats, trajectory_deviation};
use rigcal::registration::fit_plane_least_squares;
use rigcal::sim::{make_scene, simulate_measurements, NoiseModel};
use rigcal::{calibrate, MeasurementSet, Point3, RansacParams, RigidTransform, UnitQuaternion};

fn point(range: f64) -> impl Strategy<Value = Point3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = UnitQuaternion> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| UnitQuaternion::new(w, x, y, z).unwrap())
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (rotation(), point(0.5)).prop_map(|(r, t)| RigidTransform::new(r, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quaternion_sign_is_canonical(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
        prop_assume!(w * w + x * x + y * y + z * z > 1e-6);
        let q = UnitQuaternion::new(w, x, y, z).unwrap();
        let neg = UnitQuaternion::new(-w, -x, -y, -z).unwrap();
        prop_assert_eq!(q, neg);
        let [qw, qx, qy, qz] = q.to_wxyz();
        prop_assert!((qw * qw + qx * qx + qy * qy + qz * qz - 1.0).abs() < 1e-12);
        let first = [qw, qx, qy, qz].into_iter().find(|c| *c != 0.0).unwrap();
        prop_assert!(first > 0.0);
    }

    #[test]
    fn transforms_are_rigid(t in transform(), p in point(1.0), q in point(1.0)) {
        let d = t.apply(&p).distance(&t.apply(&q));
        prop_assert!((d - p.distance(&q)).abs() < 1e-9);
    }

    #[test]
    fn group_laws(a in transform(), b in transform(), c in transform(), p in point(1.0)) {
        let left = a.compose(&b).compose(&c).apply(&p);
        let right = a.compose(&b.compose(&c)).apply(&p);
        prop_assert!(left.distance(&right) < 1e-9);
        prop_assert!(a.compose(&a.inverse()).apply(&p).distance(&p) < 1e-9);
        prop_assert!(a.inverse().compose(&a).apply(&p).distance(&p) < 1e-9);
        prop_assert!(RigidTransform::IDENTITY.compose(&a).apply(&p).distance(&a.apply(&p)) < 1e-12);
    }

    #[test]
    fn plane_fit_is_rigid_equivariant(
        t in transform(),
        tilt in rotation(),
        heights in prop::collection::vec(-2e-3..2e-3f64, 12),
    ) {
        let pts: Vec<Point3> = heights
            .iter()
            .enumerate()
            .map(|(i, h)| tilt.rotate(&Point3::new((i % 4) as f64 * 0.02, (i / 4) as f64 * 0.03, *h)))
            .collect();
        let moved = fit_plane_least_squares(&t.apply_all(&pts)).unwrap();
        let expected = fit_plane_least_squares(&pts).unwrap().transformed(&t);
        let expected = if expected.normal().dot(&moved.normal()) < 0.0 { expected.flipped() } else { expected };
        prop_assert!(moved.normal().distance(&expected.normal()) < 1e-9);
        prop_assert!((moved.offset() - expected.offset()).abs() < 1e-9);
    }

    #[test]
    fn error_stats_ignore_order(mut xs in prop::collection::vec(0.0..10.0f64, 1..50), seed in any::<u64>()) {
        let a = error_stats(&xs).unwrap();
        let n = xs.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            xs.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = error_stats(&xs).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert!((a.std - b.std).abs() < 1e-12);
        prop_assert_eq!(a.max, b.max);
        prop_assert_eq!(a.n, b.n);
    }

    #[test]
    fn trajectory_deviation_symmetric_and_rigid_invariant(
        a in prop::collection::vec(point(0.1), 2..40),
        noise in prop::collection::vec(point(0.002), 40),
        t in transform(),
    ) {
        let b: Vec<Point3> = a.iter().zip(&noise).map(|(p, n)| *p + *n).collect();
        let ab = trajectory_deviation(&a, &b).unwrap();
        let ba = trajectory_deviation(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        let moved = trajectory_deviation(&t.apply_all(&a), &t.apply_all(&b)).unwrap();
        prop_assert!((moved.std_dev - ab.std_dev).abs() < 1e-9);
        prop_assert!((moved.max_dev - ab.max_dev).abs() < 1e-9);
    }

    #[test]
    fn decomposition_inverts_quadrature(c in 0.0..10.0f64, i in 0.0..10.0f64) {
        let total = (c * c + i * i).sqrt();
        prop_assert!((decompose_error(total, i).unwrap() - c).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn common_frame_is_right_handed_and_faces_the_above_point(seed in any::<u64>(), sigma in 0.0..5e-4f64) {
        let scene = make_scene(seed, 2).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::isotropic(sigma, seed)).unwrap();
        let params = RansacParams { inlier_threshold: 3e-3, ..RansacParams::default() };
        for m in &sets {
            let f = build_common_frame(m, &params).unwrap();
            let r = f.common_to_tool().rotation.to_rotation_matrix();
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-9);
            prop_assert!(f.tool_to_common.apply(&m.above_point()).z > 0.0);
            let first = f.tool_to_common.apply(&m.dot_points()[0]);
            prop_assert!(first.x > 0.0 && first.y.abs() < 1e-9);
        }
    }

    #[test]
    fn frame_is_rigid_motion_equivariant(seed in any::<u64>(), g in transform()) {
        let scene = make_scene(seed, 2).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::isotropic(3e-4, seed)).unwrap();
        let params = RansacParams { inlier_threshold: 3e-3, ..RansacParams::default() };
        let m = &sets[0];
        let moved = MeasurementSet::new(m.tool().clone(), g.apply_all(m.dot_points()), g.apply(&m.above_point())).unwrap();
        let f = build_common_frame(m, &params).unwrap();
        let fg = build_common_frame(&moved, &params).unwrap();
        let expected = f.tool_to_common.compose(&g.inverse());
        let (dt, dr) = fg.tool_to_common.difference(&expected);
        prop_assert!(dt < 1e-9 && dr < 1e-9, "{} {}", dt, dr);
        for (p, q) in m.dot_points().iter().zip(moved.dot_points()) {
            prop_assert!(f.tool_to_common.apply(p).distance(&fg.tool_to_common.apply(q)) < 1e-9);
        }
    }

    #[test]
    fn calibration_ignores_input_order(seed in any::<u64>()) {
        let scene = make_scene(seed, 4).unwrap();
        let sets = simulate_measurements(&scene, &NoiseModel::isotropic(3e-4, seed)).unwrap();
        let params = RansacParams { inlier_threshold: 3e-3, ..RansacParams::default() };
        let mut reversed = sets.clone();
        reversed.reverse();
        prop_assert_eq!(calibrate(&sets, &params).unwrap(), calibrate(&reversed, &params).unwrap());
    }
}
