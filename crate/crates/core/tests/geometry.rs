mod common;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use stereobox::geometry::{
    geodesic_distance, project_to_so3, rectify, transform_corner, PinholeCamera, Pose, Rotation3,
    Shape, StereoRig,
};

fn trace_score(r: &Matrix3<f64>, m: &Matrix3<f64>) -> f64 {
    (r.transpose() * m).trace()
}

/// Random search over SO(3) followed by shrinking random perturbations.
fn brute_force_best_trace(m: &Matrix3<f64>, rng: &mut impl Rng) -> f64 {
    let mut best = Rotation3::identity();
    let mut best_score = trace_score(best.matrix(), m);
    for _ in 0..5000 {
        let r = common::random_rotation(rng);
        let s = trace_score(r.matrix(), m);
        if s > best_score {
            best = r;
            best_score = s;
        }
    }
    let mut scale = 0.3;
    while scale > 1e-5 {
        for _ in 0..200 {
            let axis = Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let delta = Rotation3::from_axis_angle(&axis, scale * rng.random::<f64>());
            let r = Rotation3::from_matrix(best.matrix() * delta.matrix()).unwrap();
            let s = trace_score(r.matrix(), m);
            if s > best_score {
                best = r;
                best_score = s;
            }
        }
        scale *= 0.5;
    }
    best_score
}

#[test]
fn so3_projection_maximizes_trace_against_search() {
    let mut rng = common::rng(11);
    let mut checked = 0;
    while checked < 10 {
        let m = Matrix3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
        if m.determinant() <= 0.0 {
            continue;
        }
        let r = project_to_so3(&m).unwrap();
        let ours = trace_score(r.matrix(), &m);
        let searched = brute_force_best_trace(&m, &mut rng);
        assert!(
            ours >= searched - 1e-9,
            "search beat SVD: {searched} > {ours}"
        );
        assert!(
            ours - searched < 1e-3,
            "search too far: {ours} vs {searched}"
        );
        checked += 1;
    }
}

#[test]
fn so3_projection_of_scaled_identity() {
    let r = project_to_so3(&(Matrix3::identity() * 2.0)).unwrap();
    assert!((r.matrix() - Matrix3::identity()).amax() < 1e-15);
}

#[test]
fn so3_projection_rejects_rank_one() {
    let v = Vector3::new(1.0, 2.0, 3.0);
    assert!(project_to_so3(&(v * v.transpose())).is_err());
}

fn matrix_strategy() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-10.0f64..10.0).prop_map(|a| Matrix3::from_row_slice(&a))
}

proptest! {
    #[test]
    fn so3_projection_is_a_rotation(m in matrix_strategy()) {
        let sv = m.singular_values();
        prop_assume!(sv.min() > 1e-6);
        let r = project_to_so3(&m).unwrap();
        let rm = r.matrix();
        prop_assert!((rm.transpose() * rm - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((rm.determinant() - 1.0).abs() < 1e-9);
        // Idempotent on its own output.
        let again = project_to_so3(rm).unwrap();
        prop_assert!((again.matrix() - rm).amax() < 1e-12);
    }

    #[test]
    fn geodesic_distance_is_a_metric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = common::random_rotation(&mut rng);
        let b = common::random_rotation(&mut rng);
        let c = common::random_rotation(&mut rng);
        let ab = geodesic_distance(&a, &b);
        prop_assert_eq!(ab, geodesic_distance(&b, &a));
        prop_assert!(geodesic_distance(&a, &a) < 1e-7);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
        prop_assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-9);
    }

    #[test]
    fn projection_jacobian_matches_differences(
        x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.5f64..5.0,
    ) {
        let cam = PinholeCamera::new(800.0, 760.0, 820.0, 616.0, 1640, 1232).unwrap();
        let p = Vector3::new(x, y, z);
        let j = cam.projection_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = h;
            let fd = (cam.project(&(p + e)).unwrap() - cam.project(&(p - e)).unwrap()) / (2.0 * h);
            let col = j.column(k);
            let rel = (fd - col).norm() / col.norm().max(1.0);
            prop_assert!(rel < 1e-5, "column {} rel {}", k, rel);
        }
    }
}

#[test]
fn transform_corner_rotates_then_translates() {
    let pose = Pose::new(
        Rotation3::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2),
        Vector3::new(1.0, 0.0, 0.0),
    )
    .unwrap();
    let shape = Shape::new(2.0, 1.0, 1.0).unwrap();
    let p = transform_corner(&pose, &shape, &Vector3::new(0.5, 0.0, 0.0));
    assert!((p - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
}

fn toed_in_rig(rng: &mut impl Rng) -> StereoRig {
    let cam = PinholeCamera::new(800.0, 800.0, 820.0, 616.0, 1640, 1232).unwrap();
    let axis = Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5);
    let r = Rotation3::from_axis_angle(&axis, 0.05 * rng.random::<f64>());
    let baseline = Vector3::new(0.08 + 0.1 * rng.random::<f64>(), 0.01, -0.005);
    let t = -(r.matrix() * baseline);
    StereoRig::new(cam, cam, Pose::new(r, t).unwrap()).unwrap()
}

fn stereo_pair(rig: &StereoRig, p: &Vector3<f64>) -> (Vector2<f64>, Vector2<f64>) {
    let right = rig.t_right_from_left.transform_point(p);
    (
        rig.left.project(p).unwrap(),
        rig.right.project(&right).unwrap(),
    )
}

#[test]
fn noiseless_correspondences_share_rectified_rows() {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rig = toed_in_rig(&mut rng);
        let p = Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 1.6 - 0.8,
            1.0 + 4.0 * rng.random::<f64>(),
        );
        let (l, r) = stereo_pair(&rig, &p);
        let (rl, rr) = rectify(&rig, &l, &r).unwrap();
        worst = worst.max((rl.y - rr.y).abs());
    }
    assert!(worst < 1e-6, "worst |dy| = {worst:e}");
}

#[test]
fn vertical_offset_survives_rectification() {
    let mut rng = common::rng(4);
    let rig = common::default_rig();
    for _ in 0..100 {
        let p = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() * 0.8 - 0.4,
            1.5 + 1.5 * rng.random::<f64>(),
        );
        let (l, r) = stereo_pair(&rig, &p);
        let (rl, rr) = rectify(&rig, &l, &(r + Vector2::new(0.0, 5.0))).unwrap();
        let dy = (rl.y - rr.y).abs();
        assert!((dy - 5.0).abs() < 0.1, "dy = {dy}");
    }
}
