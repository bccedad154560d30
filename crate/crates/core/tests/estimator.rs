mod common;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

use stereobox::estimator::{
    initialize, objective, relaxed_objective, relaxed_objective_gradient, residuals, solve,
    symmetry_candidates, triangulate_corners, BoxState, FrameObservation, RobustLossConfig,
    SolverConfig,
};
use stereobox::geometry::{cube_rotation_group, geodesic_distance, Rotation3, StereoRig};
use stereobox::pipeline::align_to_truth;
use stereobox::synthetic::{RotationSampling, SceneConfig};
use stereobox::{Error, View};

/// Straight-line pinhole projection of corner `i`, independent of the
/// library's transform helpers.
fn naive_projection(state: &BoxState, rig: &StereoRig, view: View, i: usize) -> Vector2<f64> {
    let sign = |b: usize| if (i >> b) & 1 == 1 { 0.5 } else { -0.5 };
    let d = state.shape.dims();
    let local = Vector3::new(sign(0) * d[0], sign(1) * d[1], sign(2) * d[2]);
    let mut p = state.pose.rotation.matrix() * local + state.pose.translation;
    if view == View::Right {
        let t = &rig.t_right_from_left;
        p = t.rotation.matrix() * p + t.translation;
    }
    let cam = rig.camera(view);
    Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy)
}

#[test]
fn residuals_match_naive_projection() {
    let mut rng = common::rng(5);
    let cfg = common::noisy(3.0);
    for index in 0..20 {
        let (scene, obs) = common::frame(&cfg, index);
        let state = common::shifted(
            &scene.truth,
            Vector3::from_fn(|_, _| 0.05 * (rng.random::<f64>() - 0.5)),
        );
        let res = residuals(&state, &obs, &scene.rig).unwrap();
        assert_eq!(res.len(), obs.len());
        for r in &res {
            let kp = obs.get(r.view, r.corner_index).unwrap();
            let expect = naive_projection(&state, &scene.rig, r.view, r.corner_index) - kp.pixel;
            assert!((r.delta - expect).norm() < 1e-9);
        }
    }
}

#[test]
fn residuals_at_truth_vanish_and_track_perturbations() {
    let cfg = SceneConfig::default();
    let (scene, mut obs) = common::frame(&cfg, 0);
    let res = residuals(&scene.truth, &obs, &scene.rig).unwrap();
    assert!(res.iter().all(|r| r.delta.norm() < 1e-9));
    assert_eq!(
        objective(&scene.truth, &obs, &scene.rig, &RobustLossConfig::squared()).unwrap(),
        0.0
    );

    obs.left[2].pixel += Vector2::new(3.0, 4.0);
    let res = residuals(&scene.truth, &obs, &scene.rig).unwrap();
    for r in &res {
        if r.view == View::Left && r.corner_index == obs.left[2].corner_index {
            assert!((r.delta - Vector2::new(-3.0, -4.0)).norm() < 1e-9);
        } else {
            assert!(r.delta.norm() < 1e-9);
        }
    }
}

fn gradient_error(loss: RobustLossConfig, rng: &mut impl Rng, index: u64) -> f64 {
    let (scene, obs) = common::frame(&common::noisy(2.0), index);
    let truth = scene.truth;
    // A relaxed state: rotation block off the manifold, pose and size off truth.
    let m = truth.pose.rotation.matrix()
        * Rotation3::from_axis_angle(
            &Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5),
            0.2 * rng.random::<f64>(),
        )
        .matrix()
        + Matrix3::from_fn(|_, _| 0.05 * (rng.random::<f64>() - 0.5));
    let t = truth.pose.translation + Vector3::from_fn(|_, _| 0.1 * (rng.random::<f64>() - 0.5));
    let d = truth
        .shape
        .dims()
        .map(|v| v * (0.8 + 0.4 * rng.random::<f64>()));

    let rig = &scene.rig;
    let (_, gm, gt, gd) = relaxed_objective_gradient(&m, &t, &d, &obs, rig, &loss).unwrap();
    let f = |m: &Matrix3<f64>, t: &Vector3<f64>, d: &Vector3<f64>| {
        relaxed_objective(m, t, d, &obs, rig, &loss).unwrap()
    };
    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for k in 0..9 {
        let mut e = Matrix3::zeros();
        e[k] = h;
        numeric.push((f(&(m + e), &t, &d) - f(&(m - e), &t, &d)) / (2.0 * h));
        analytic.push(gm[k]);
    }
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = h;
        numeric.push((f(&m, &(t + e), &d) - f(&m, &(t - e), &d)) / (2.0 * h));
        analytic.push(gt[k]);
        numeric.push((f(&m, &t, &(d + e)) - f(&m, &t, &(d - e))) / (2.0 * h));
        analytic.push(gd[k]);
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = common::rng(17);
    for loss in [
        RobustLossConfig::squared(),
        RobustLossConfig::geman_mcclure(10.0),
    ] {
        for index in 0..100 {
            let rel = gradient_error(loss, &mut rng, index);
            assert!(rel < 1e-5, "{loss:?} frame {index}: relative error {rel:e}");
        }
    }
}

#[test]
fn initialization_lands_near_truth() {
    let cfg = SceneConfig::default();
    let solver = SolverConfig::default();
    for index in 0..100 {
        let (scene, obs) = common::frame(&cfg, index);
        let init = initialize(&obs, &scene.rig, &solver).unwrap();
        let err = (init.pose.translation - scene.truth.pose.translation).norm();
        assert!(err < 0.05, "frame {index}: {err} m");
    }
}

#[test]
fn initialization_needs_a_stereo_match() {
    let (scene, mut obs) = common::frame(&SceneConfig::default(), 0);
    obs.right.clear();
    assert!(matches!(
        initialize(&obs, &scene.rig, &SolverConfig::default()),
        Err(Error::InsufficientObservations(_))
    ));
}

#[test]
fn identity_rotation_picks_identity_candidate() {
    let cfg = SceneConfig {
        rotation: RotationSampling::AxisLimited { max_angle: 0.0 },
        ..Default::default()
    };
    let solver = SolverConfig::default();
    for index in 0..10 {
        let (scene, obs) = common::frame(&cfg, index);
        let pts = triangulate_corners(&obs, &scene.rig);
        let center = pts.iter().map(|(_, p)| p).sum::<Vector3<f64>>() / pts.len() as f64;
        let cands =
            symmetry_candidates(&obs, &scene.rig, &solver, center, *scene.truth.shape.dims());
        assert_eq!(cands.len(), 24);
        assert!(cands[0].symmetry.is_identity(), "frame {index}");
        assert!(cands[0].objective < cands[1].objective);
    }
}

#[test]
fn noiseless_frames_recover_truth() {
    let cfg = SceneConfig::default();
    for index in 0..20 {
        let (scene, obs) = common::frame(&cfg, index);
        let res = solve(&obs, &scene.rig, &SolverConfig::default(), None).unwrap();
        let a = align_to_truth(&res.state, &scene.truth);
        let t = (res.state.pose.translation - scene.truth.pose.translation).norm();
        let r = geodesic_distance(&a.state.pose.rotation, &scene.truth.pose.rotation);
        let s = (a.state.shape.dims() - scene.truth.shape.dims()).norm();
        assert!(
            t < 1e-3 && r < 1e-3 && s < 1e-3,
            "frame {index}: {t} {r} {s}"
        );
    }
}

#[test]
fn noisy_frames_reach_the_truth_basin() {
    let cfg = common::noisy(2.0);
    let solver = SolverConfig::default();
    for index in 0..20 {
        let (scene, obs) = common::frame(&cfg, index);
        let res = solve(&obs, &scene.rig, &solver, None).unwrap();
        let at_truth = objective(&scene.truth, &obs, &scene.rig, &solver.loss).unwrap();
        assert!(res.converged, "frame {index} did not converge");
        assert!(
            res.objective <= at_truth + 1e-6,
            "frame {index}: {} > {at_truth}",
            res.objective
        );
    }
}

#[test]
fn solver_stays_at_truth_on_noiseless_frames() {
    let cfg = SceneConfig::default();
    for index in 0..20 {
        let (scene, obs) = common::frame(&cfg, index);
        let res = solve(
            &obs,
            &scene.rig,
            &SolverConfig::default(),
            Some(scene.truth),
        )
        .unwrap();
        assert!(res.objective <= 1e-10, "frame {index}: {}", res.objective);
    }
}

#[test]
fn solve_rejects_small_frames() {
    let (scene, mut obs) = common::frame(&SceneConfig::default(), 0);
    obs.left.truncate(3);
    obs.right.truncate(2);
    assert!(matches!(
        solve(&obs, &scene.rig, &SolverConfig::default(), None),
        Err(Error::InsufficientObservations(_))
    ));
}

/// Observations renamed so that corner `i` of the symmetric state sees what
/// corner `corner_map[i]` of the original state saw.
fn relabeled(obs: &FrameObservation, corner_map: &[usize; 8]) -> FrameObservation {
    let mut out = obs.clone();
    for view in View::BOTH {
        for kp in out.view_mut(view) {
            kp.corner_index = corner_map
                .iter()
                .position(|&j| j == kp.corner_index)
                .unwrap();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_is_invariant_under_cube_symmetries(index in 0u64..1000, sigma in 0.0f64..4.0) {
        let (scene, obs) = common::frame(&common::noisy(sigma), index);
        for loss in [RobustLossConfig::squared(), RobustLossConfig::geman_mcclure(10.0)] {
            let base = objective(&scene.truth, &obs, &scene.rig, &loss).unwrap();
            for g in cube_rotation_group() {
                let (pose, shape) = g.apply(&scene.truth.pose, &scene.truth.shape);
                let state = BoxState { pose, shape };
                let f = objective(&state, &relabeled(&obs, &g.corner_map), &scene.rig, &loss).unwrap();
                prop_assert!((f - base).abs() <= 1e-9 * base.max(1.0), "{} vs {}", f, base);
            }
        }
    }

    #[test]
    fn objective_history_never_increases(index in 0u64..1000, sigma in 0.0f64..8.0, gm in any::<bool>()) {
        let (scene, obs) = common::frame(&common::noisy(sigma), index);
        let loss = if gm { RobustLossConfig::geman_mcclure(10.0) } else { RobustLossConfig::squared() };
        let solver = SolverConfig { loss, max_iters: 300, ..Default::default() };
        let start = common::shifted(&scene.truth, Vector3::new(0.05, -0.03, 0.1));
        let res = solve(&obs, &scene.rig, &solver, Some(start)).unwrap();
        prop_assert_eq!(res.history.len(), res.iterations + 1);
        prop_assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*res.history.last().unwrap(), res.objective);
        prop_assert!(res.state.shape.dims().min() >= solver.shape_floor);
    }
}
