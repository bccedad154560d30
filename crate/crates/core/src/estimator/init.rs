//! Initial box state from stereo-matched corners.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::objective::{Problem, RelaxedState};
use super::{solve, BoxState, FrameObservation, SolverConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_cube_corners, cube_rotation_group, project_to_so3, CubeSymmetry, Pose, Shape,
    StereoRig,
};

/// Per-axis size used when too few corners triangulate to measure extents.
pub const FALLBACK_DIM: f64 = 0.2;

/// Largest accepted ratio between a triangulated depth and the median.
pub const DEPTH_OUTLIER_RATIO: f64 = 1.5;

const PROCRUSTES_ITERS: usize = 50;

/// Descent iterations spent on each restart before picking the best.
pub const RESTART_ITERS: usize = 60;

/// Midpoint of the shortest segment between the two viewing rays of a
/// left/right pixel pair, in left-camera coordinates. `None` for
/// (near-)parallel rays.
pub fn triangulate_midpoint(
    rig: &StereoRig,
    left: &Vector2<f64>,
    right: &Vector2<f64>,
) -> Option<Vector3<f64>> {
    let r = rig.t_right_from_left.rotation.matrix();
    let t = rig.t_right_from_left.translation;
    let o1 = Vector3::zeros();
    let d1 = rig.left.backproject(left).normalize();
    let o2 = -(r.transpose() * t);
    let d2 = (r.transpose() * rig.right.backproject(right)).normalize();

    let w0 = o1 - o2;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = 1.0 - b * b;
    if denom < 1e-14 {
        return None;
    }
    let s1 = (b * e - d) / denom;
    let s2 = (e - b * d) / denom;
    Some(((o1 + d1 * s1) + (o2 + d2 * s2)) * 0.5)
}

/// Triangulates every corner observed in both views, as `(corner, point)`.
pub fn triangulate_corners(obs: &FrameObservation, rig: &StereoRig) -> Vec<(usize, Vector3<f64>)> {
    let mut out = Vec::new();
    for l in &obs.left {
        if let Some(r) = obs.right.iter().find(|r| r.corner_index == l.corner_index) {
            if let Some(p) = triangulate_midpoint(rig, &l.pixel, &r.pixel) {
                out.push((l.corner_index, p));
            }
        }
    }
    out.sort_by_key(|(c, _)| *c);
    out
}

/// Drops triangulated corners that land behind either camera or whose depth
/// is off from the median by more than [`DEPTH_OUTLIER_RATIO`]. Noisy
/// disparities on a short baseline throw single points far away.
pub fn plausible_points(
    points: &[(usize, Vector3<f64>)],
    rig: &StereoRig,
    depth_min: f64,
) -> Vec<(usize, Vector3<f64>)> {
    let in_front: Vec<_> = points
        .iter()
        .filter(|(_, p)| p.z > depth_min && rig.t_right_from_left.transform_point(p).z > depth_min)
        .copied()
        .collect();
    if in_front.is_empty() {
        return in_front;
    }
    let mut depths: Vec<f64> = in_front.iter().map(|(_, p)| p.z).collect();
    depths.sort_by(f64::total_cmp);
    let median = depths[depths.len() / 2];
    in_front
        .into_iter()
        .filter(|(_, p)| p.z <= median * DEPTH_OUTLIER_RATIO && p.z * DEPTH_OUTLIER_RATIO >= median)
        .collect()
}

/// A candidate from the cube-symmetry search.
#[derive(Debug, Clone, Copy)]
pub struct SymmetryCandidate {
    pub symmetry: CubeSymmetry,
    pub state: BoxState,
    pub objective: f64,
}

/// Evaluates the objective at each of the 24 cube rotations applied to an
/// axis-aligned box with the given center and extents. Candidates that put a
/// corner behind a camera are skipped. Sorted by objective, best first.
pub fn symmetry_candidates(
    obs: &FrameObservation,
    rig: &StereoRig,
    cfg: &SolverConfig,
    center: Vector3<f64>,
    extents: Vector3<f64>,
) -> Vec<SymmetryCandidate> {
    let problem = Problem {
        obs,
        rig,
        loss: cfg.loss,
        depth_min: cfg.depth_min,
    };
    let base_pose = Pose::from_translation(center);
    let base_shape = Shape::from_vector(extents).expect("extents clamped positive");
    let mut out: Vec<SymmetryCandidate> = cube_rotation_group()
        .into_iter()
        .filter_map(|g| {
            let (pose, shape) = g.apply(&base_pose, &base_shape);
            let state = BoxState { pose, shape };
            let objective = problem.value(&RelaxedState::from_box(&state)).ok()?;
            objective.is_finite().then_some(SymmetryCandidate {
                symmetry: g,
                state,
                objective,
            })
        })
        .collect();
    out.sort_by(|a, b| a.objective.total_cmp(&b.objective));
    out
}

/// Starting state for [`solve`](super::solve).
///
/// Triangulates stereo-matched corners, drops implausible depths, places an axis-aligned box at their
/// centroid with their bounding extents, picks the best of the 24 cube
/// rotations by objective, then runs a short descent from each of the 24
/// rotated boxes (and from their Procrustes fits to the triangulated corners)
/// and returns the lowest-objective result.
pub fn initialize(obs: &FrameObservation, rig: &StereoRig, cfg: &SolverConfig) -> Result<BoxState> {
    let raw = triangulate_corners(obs, rig);
    if raw.is_empty() {
        return Err(Error::InsufficientObservations(format!(
            "frame {} has no corner observed in both views",
            obs.frame_id
        )));
    }
    let points = plausible_points(&raw, rig, cfg.depth_min);
    if points.is_empty() {
        return Err(Error::InsufficientObservations(format!(
            "frame {}: no stereo-matched corner triangulates in front of both cameras",
            obs.frame_id
        )));
    }
    let n = points.len() as f64;
    let center = points.iter().map(|(_, p)| p).sum::<Vector3<f64>>() / n;
    let extents = if points.len() >= 4 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (_, p) in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).map(|v| v.max(cfg.shape_floor))
    } else {
        Vector3::repeat(FALLBACK_DIM.max(cfg.shape_floor))
    };

    let candidates = symmetry_candidates(obs, rig, cfg, center, extents);
    let best = candidates.first().ok_or_else(|| {
        Error::InsufficientObservations(format!(
            "frame {}: no initial orientation keeps the box in front of both cameras",
            obs.frame_id
        ))
    })?;

    // Each restart seeds a short descent run: from the axis-aligned candidate
    // and, with enough corners, from its Procrustes refinement against the
    // triangulated points. Triangulated depth is noisy, so neither start is
    // trusted on its own score.
    let short = SolverConfig {
        max_iters: RESTART_ITERS,
        ..*cfg
    };
    let mut chosen = (best.state, best.objective);
    for cand in &candidates {
        let refined = if points.len() >= 4 {
            procrustes_refine(&points, &cand.state, cfg.shape_floor)
        } else {
            None
        };
        for start in std::iter::once(cand.state).chain(refined) {
            if let Ok(res) = solve(obs, rig, &short, Some(start)) {
                if res.objective < chosen.1 {
                    chosen = (res.state, res.objective);
                }
            }
        }
    }
    Ok(chosen.0)
}

/// Alternating least squares for `min sum |R diag(d) u_i + t - X_i|^2`.
fn procrustes_refine(
    points: &[(usize, Vector3<f64>)],
    start: &BoxState,
    shape_floor: f64,
) -> Option<BoxState> {
    let cube = canonical_cube_corners();
    let mut r = *start.pose.rotation.matrix();
    let mut t = start.pose.translation;
    let mut d = *start.shape.dims();
    for _ in 0..PROCRUSTES_ITERS {
        let n = points.len() as f64;
        t = points
            .iter()
            .map(|(i, x)| x - r * d.component_mul(&cube.corners[*i]))
            .sum::<Vector3<f64>>()
            / n;
        let cross: Matrix3<f64> = points
            .iter()
            .map(|(i, x)| (x - t) * d.component_mul(&cube.corners[*i]).transpose())
            .sum();
        r = *project_to_so3(&cross).ok()?.matrix();
        let mut num = Vector3::zeros();
        let mut den = Vector3::zeros();
        for (i, x) in points {
            let u = cube.corners[*i];
            num += (r.transpose() * (x - t)).component_mul(&u);
            den += u.component_mul(&u);
        }
        d = num.component_div(&den).map(|v| v.max(shape_floor));
    }
    let rotation = project_to_so3(&r).ok()?;
    Some(BoxState {
        pose: Pose::new(rotation, t).ok()?,
        shape: Shape::from_vector(d).ok()?,
    })
}
