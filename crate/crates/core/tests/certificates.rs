mod common;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use stereobox::certificates::{
    cert_2d, cert_epipolar, certify_state, convex_hull, iou, rasterize_convex, render_silhouettes,
    select_pseudo_labels, silhouette_mask, BitMask, CertificateThresholds, LabelSource,
};
use stereobox::estimator::{solve, BoxState, SolverConfig};
use stereobox::geometry::{PinholeCamera, Pose, Rotation3, Shape};
use stereobox::synthetic::SceneConfig;
use stereobox::View;

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a - o).perp(&(b - o))
}

fn in_triangle(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> bool {
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// A point lies in the convex hull of a set iff it lies in some triangle of
/// three of its points.
fn in_hull(p: &Vector2<f64>, pts: &[Vector2<f64>]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if in_triangle(p, &pts[i], &pts[j], &pts[k]) {
                    return true;
                }
            }
        }
    }
    false
}

fn brute_force_silhouette(pts: &[Vector2<f64>], width: u32, height: u32) -> BitMask {
    let (lo_x, hi_x) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.x), h.max(p.x)));
    let (lo_y, hi_y) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.y), h.max(p.y)));
    BitMask::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        fx >= lo_x && fx <= hi_x && fy >= lo_y && fy <= hi_y && in_hull(&Vector2::new(fx, fy), pts)
    })
}

#[test]
fn silhouettes_match_point_in_hull_oracle() {
    let mut rng = common::rng(21);
    let rig = common::default_rig();
    for _ in 0..50 {
        let state = common::boxed(
            common::random_rotation(&mut rng),
            [
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() * 0.6 - 0.3,
                1.2 + 2.0 * rng.random::<f64>(),
            ],
            [
                0.05 + 0.4 * rng.random::<f64>(),
                0.05 + 0.4 * rng.random::<f64>(),
                0.05 + 0.4 * rng.random::<f64>(),
            ],
        );
        let masks = render_silhouettes(&state, &rig).unwrap();
        for view in View::BOTH {
            let cam = rig.camera(view);
            let pts = state.project_corners(&rig, view).unwrap();
            let oracle = brute_force_silhouette(&pts, cam.width, cam.height);
            assert_eq!(masks.get(view), &oracle);
            assert_eq!(iou(masks.get(view), masks.get(view)).unwrap(), 1.0);
        }
    }
}

#[test]
fn silhouettes_are_digitally_convex() {
    let mut rng = common::rng(22);
    let cam = PinholeCamera::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
    for _ in 0..20 {
        let pose = Pose::new(
            common::random_rotation(&mut rng),
            Vector3::new(0.1 * (rng.random::<f64>() - 0.5), 0.0, 2.0),
        )
        .unwrap();
        let mask = silhouette_mask(&cam, &pose, &Shape::new(0.3, 0.2, 0.4).unwrap()).unwrap();
        let mut centers = Vec::new();
        for y in 0..cam.height {
            for x in 0..cam.width {
                if mask.get(x, y) {
                    centers.push(Vector2::new(x as f64, y as f64));
                }
            }
        }
        let hull = convex_hull(&centers);
        assert_eq!(rasterize_convex(&hull, cam.width, cam.height), mask);
    }
}

#[test]
fn unit_cube_on_axis_is_a_centered_square() {
    let cam = PinholeCamera::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
    let pose = Pose::new(Rotation3::identity(), Vector3::new(0.0, 0.0, 10.0)).unwrap();
    let mask = silhouette_mask(&cam, &pose, &Shape::new(1.0, 1.0, 1.0).unwrap()).unwrap();
    // The near face spans 100 * 0.5 / 9.5 = 5.26 px either side of the
    // principal point, which covers pixel centers 45..=55.
    let expect = BitMask::from_fn(100, 100, |x, y| {
        (45..=55).contains(&x) && (45..=55).contains(&y)
    });
    assert_eq!(mask, expect);
    assert_eq!(mask.area(), 121);
}

#[test]
fn two_d_certificate_on_truth_and_on_a_displaced_box() {
    let cfg = SceneConfig {
        depth_range: [2.0, 2.0],
        dims_range: [0.23, 0.23],
        ..Default::default()
    };
    let (scene, _) = common::frame(&cfg, 0);
    let c = cert_2d(&scene.truth, &scene.rig, &scene.masks, 0.05).unwrap();
    assert!(c.pass);
    assert_eq!((c.iou_left, c.iou_right), (1.0, 1.0));

    let off = common::shifted(&scene.truth, Vector3::new(1.0, 0.0, 0.0));
    let c = cert_2d(&off, &scene.rig, &scene.masks, 0.05).unwrap();
    assert!(!c.pass);
    assert!(c.iou_left < 0.05 && c.iou_right < 0.05);
}

#[test]
fn epipolar_certificate_on_clean_and_shifted_pairs() {
    let (scene, _) = common::frame(&SceneConfig::default(), 3);
    for i in 0..8 {
        let l = scene.clean_keypoints(View::Left)[i];
        let r = scene.clean_keypoints(View::Right)[i];
        let (pass, dy) = cert_epipolar(&l, &r, &scene.rig, 20.0).unwrap();
        assert!(pass && dy < 1e-6, "corner {i}: {dy}");
        let (pass, dy) =
            cert_epipolar(&l, &(r + Vector2::new(0.0, 30.0)), &scene.rig, 20.0).unwrap();
        assert!(!pass && dy > 20.0);
    }
}

#[test]
fn truth_with_clean_keypoints_gives_sixteen_predicted_labels() {
    let thresholds = CertificateThresholds::default();
    for index in 0..10 {
        let (scene, obs) = common::frame(&SceneConfig::default(), index);
        let res = solve(
            &obs,
            &scene.rig,
            &SolverConfig::default(),
            Some(scene.truth),
        )
        .unwrap();
        let report =
            select_pseudo_labels(&res, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
        assert!(report.accepted);
        assert_eq!(report.labels.len(), 16);
        assert!(report
            .labels
            .iter()
            .all(|l| l.source == LabelSource::Predicted && l.stereo_checked));
    }
}

#[test]
fn grossly_wrong_corner_is_replaced_by_its_reprojection() {
    let thresholds = CertificateThresholds::default();
    let (scene, mut obs) = common::frame(&SceneConfig::default(), 4);
    let corner = 5;
    for view in View::BOTH {
        obs.view_mut(view)
            .iter_mut()
            .find(|k| k.corner_index == corner)
            .unwrap()
            .pixel += Vector2::new(36.0, 48.0);
    }
    let report = certify_state(&scene.truth, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
    assert!(report.accepted);
    assert_eq!(report.labels.len(), 16);
    for label in &report.labels {
        let expect = if label.corner_index == corner {
            LabelSource::Reprojected
        } else {
            LabelSource::Predicted
        };
        assert_eq!(label.source, expect);
        let truth = scene.clean_keypoints(label.view)[label.corner_index];
        assert!((Vector2::from(label.pixel) - truth).norm() < 1e-9);
    }
}

#[test]
fn vertically_split_corner_emits_no_label() {
    let thresholds = CertificateThresholds::default();
    let (scene, mut obs) = common::frame(&SceneConfig::default(), 5);
    // Under the residual threshold, so the detections are kept, but far
    // apart in rectified rows.
    let corner = 2;
    let kp = obs
        .right
        .iter_mut()
        .find(|k| k.corner_index == corner)
        .unwrap();
    kp.pixel += Vector2::new(0.0, 30.0);
    let report = certify_state(&scene.truth, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
    assert!(report.accepted);
    assert_eq!(report.labels.len(), 14);
    assert!(report.labels.iter().all(|l| l.corner_index != corner));
}

#[test]
fn monocular_corner_skips_the_epipolar_check() {
    let thresholds = CertificateThresholds::default();
    let (scene, mut obs) = common::frame(&SceneConfig::default(), 6);
    obs.right.retain(|k| k.corner_index != 0);
    let report = certify_state(&scene.truth, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
    let label = report.labels.iter().find(|l| l.corner_index == 0).unwrap();
    assert_eq!(label.view, View::Left);
    assert!(!label.stereo_checked);
    assert_eq!(report.labels.len(), 15);
}

#[test]
fn failed_solve_is_rejected_without_labels() {
    let thresholds = CertificateThresholds::default();
    let (scene, obs) = common::frame(&common::noisy(1.0), 7);
    let start = BoxState {
        pose: Pose::new(
            Rotation3::identity(),
            scene.truth.pose.translation + Vector3::new(0.15, 0.1, 0.0),
        )
        .unwrap(),
        shape: scene.truth.shape,
    };
    let capped = SolverConfig {
        max_iters: 1,
        ..Default::default()
    };
    let res = solve(&obs, &scene.rig, &capped, Some(start)).unwrap();
    let report = select_pseudo_labels(&res, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
    assert!(
        report.min_iou() < 1.0 - thresholds.eps_2d,
        "iou {}",
        report.min_iou()
    );
    assert!(!report.accepted);
    assert!(report.labels.is_empty());
}

fn mask_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<bool>, Vec<bool>)> {
    let bits = || prop::collection::vec(any::<bool>(), 64);
    (bits(), bits(), bits())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_monotone((a, b, extra) in mask_strategy()) {
        let ma = BitMask::from_bits(8, 8, a.clone()).unwrap();
        let mb = BitMask::from_bits(8, 8, b.clone()).unwrap();
        let ab = iou(&ma, &mb).unwrap();
        prop_assert_eq!(ab, iou(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, a == b);

        // Adding the same pixels to both never lowers the overlap.
        let grow = |m: &[bool]| m.iter().zip(&extra).map(|(x, e)| *x || *e).collect::<Vec<_>>();
        let ga = BitMask::from_bits(8, 8, grow(&a)).unwrap();
        let gb = BitMask::from_bits(8, 8, grow(&b)).unwrap();
        prop_assert!(iou(&ga, &gb).unwrap() >= ab - 1e-15);
    }

    #[test]
    fn no_labels_when_the_two_d_check_fails(index in 0u64..500, dx in -0.3f64..0.3, dz in -0.3f64..0.3) {
        let thresholds = CertificateThresholds::default();
        let (scene, obs) = common::frame(&common::noisy(2.0), index);
        let est = common::shifted(&scene.truth, Vector3::new(dx, 0.0, dz));
        let report = certify_state(&est, &obs, &scene.rig, &scene.masks, &thresholds).unwrap();
        prop_assert_eq!(report.accepted, report.pass_2d);
        if !report.pass_2d {
            prop_assert!(report.labels.is_empty());
        }
    }
}
