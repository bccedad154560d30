//! Two-view perspective-n-point estimation of box pose and dimensions.
//!
//! The unknowns are a rigid object-to-left-camera pose and the per-axis
//! dimensions `(a, b, c)` scaling the canonical unit cube. Given corner
//! keypoints from both cameras, [`solve`] minimizes
//!
//! ```text
//! sum_i rho(|proj_l(T S u_i) - y_l_i|^2) + sum_j rho(|proj_r(T_rl T S u_j) - y_r_j|^2)
//! ```
//!
//! by gradient descent. The rotation is treated as an unconstrained 3x3
//! matrix during each step and projected back onto SO(3) with an SVD after
//! it; dimensions are clamped at a floor.

mod init;
mod objective;

pub use init::{
    initialize, symmetry_candidates, triangulate_corners, triangulate_midpoint, SymmetryCandidate,
};
pub use objective::{geman_mcclure, LossKind, Residual, RobustLossConfig};

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    canonical_cube_corners, project_to_so3, transform_corner, Pose, Shape, StereoRig,
    DEFAULT_DEPTH_MIN, NUM_CORNERS,
};
use crate::View;
use objective::{Problem, RelaxedState};

/// Fewest keypoints (both views together) accepted by [`solve`].
pub const MIN_OBSERVATIONS: usize = 6;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
const METRIC_SPREAD: f64 = 1e6;
const MAX_STEP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation {
    pub corner_index: usize,
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

impl KeypointObservation {
    pub fn new(corner_index: usize, pixel: Vector2<f64>, confidence: f64) -> Self {
        KeypointObservation {
            corner_index,
            pixel,
            confidence,
        }
    }
}

/// Detected corners of one box in both views of one stereo frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameObservation {
    pub frame_id: String,
    pub left: Vec<KeypointObservation>,
    pub right: Vec<KeypointObservation>,
}

impl FrameObservation {
    pub fn view(&self, view: View) -> &[KeypointObservation] {
        match view {
            View::Left => &self.left,
            View::Right => &self.right,
        }
    }

    pub fn view_mut(&mut self, view: View) -> &mut Vec<KeypointObservation> {
        match view {
            View::Left => &mut self.left,
            View::Right => &mut self.right,
        }
    }

    pub fn get(&self, view: View, corner: usize) -> Option<&KeypointObservation> {
        self.view(view).iter().find(|k| k.corner_index == corner)
    }

    pub fn len(&self) -> usize {
        self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_solvable(&self) -> bool {
        self.len() >= MIN_OBSERVATIONS
    }

    /// Checks corner indices, finiteness and per-view uniqueness.
    pub fn validate(&self) -> Result<()> {
        for view in View::BOTH {
            let mut seen = [false; NUM_CORNERS];
            for kp in self.view(view) {
                if kp.corner_index >= NUM_CORNERS {
                    return Err(Error::invalid(
                        "observation",
                        format!("corner index {} out of range", kp.corner_index),
                    ));
                }
                if !(kp.pixel.x.is_finite() && kp.pixel.y.is_finite()) {
                    return Err(Error::invalid("observation", "non-finite pixel"));
                }
                if std::mem::replace(&mut seen[kp.corner_index], true) {
                    return Err(Error::DuplicateCorner {
                        frame: self.frame_id.clone(),
                        view,
                        corner: kp.corner_index,
                    });
                }
            }
        }
        Ok(())
    }

    /// Keeps only keypoints whose confidence exceeds `eps_conf`.
    pub fn filter_confidence(&mut self, eps_conf: f64) {
        self.left.retain(|k| k.confidence > eps_conf);
        self.right.retain(|k| k.confidence > eps_conf);
    }
}

/// Pose (object to left camera) and dimensions of one cuboid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxState {
    pub pose: Pose,
    pub shape: Shape,
}

impl BoxState {
    /// Corner `i` in left-camera coordinates.
    pub fn corner(&self, i: usize) -> nalgebra::Vector3<f64> {
        transform_corner(
            &self.pose,
            &self.shape,
            &canonical_cube_corners().corners[i],
        )
    }

    /// Corner `i` projected into `view`.
    pub fn project_corner(&self, rig: &StereoRig, view: View, i: usize) -> Result<Vector2<f64>> {
        // Same operation order as the objective, so a frame rendered from a
        // state has exactly zero residual at that state.
        let q = self.corner(i);
        let p = match view {
            View::Left => q,
            View::Right => rig.t_right_from_left.transform_point(&q),
        };
        rig.camera(view).project(&p).map_err(|e| e.at(view, i))
    }

    /// All eight corners projected into `view`.
    pub fn project_corners(&self, rig: &StereoRig, view: View) -> Result<[Vector2<f64>; 8]> {
        let mut out = [Vector2::zeros(); 8];
        for (i, px) in out.iter_mut().enumerate() {
            *px = self.project_corner(rig, view, i)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// First trial step; later steps start from a Barzilai-Borwein estimate.
    pub step_size: f64,
    pub grad_tol: f64,
    /// Lower bound on every box dimension, meters.
    pub shape_floor: f64,
    pub loss: RobustLossConfig,
    pub depth_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 2000,
            step_size: 1e-2,
            grad_tol: 1e-8,
            shape_floor: 1e-3,
            loss: RobustLossConfig::default(),
            depth_min: DEFAULT_DEPTH_MIN,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid(
                "solver config",
                "max_iters must be positive",
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(
                "solver config",
                "step_size must be positive",
            ));
        }
        if !(self.shape_floor > 0.0) {
            return Err(Error::invalid(
                "solver config",
                "shape_floor must be positive",
            ));
        }
        if !(self.grad_tol >= 0.0) || !(self.depth_min >= 0.0) {
            return Err(Error::invalid("solver config", "negative tolerance"));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub state: BoxState,
    /// One per observation: left keypoints first, then right, in input order.
    pub residuals: Vec<Residual>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl SolveResult {
    pub fn residual(&self, view: View, corner: usize) -> Option<&Residual> {
        self.residuals
            .iter()
            .find(|r| r.view == view && r.corner_index == corner)
    }
}

/// Per-keypoint residuals of `state` against `obs`, left view first.
pub fn residuals(
    state: &BoxState,
    obs: &FrameObservation,
    rig: &StereoRig,
) -> Result<Vec<Residual>> {
    problem(obs, rig, RobustLossConfig::squared(), DEFAULT_DEPTH_MIN)
        .residuals(&RelaxedState::from_box(state))
}

pub fn objective(
    state: &BoxState,
    obs: &FrameObservation,
    rig: &StereoRig,
    loss: &RobustLossConfig,
) -> Result<f64> {
    problem(obs, rig, *loss, DEFAULT_DEPTH_MIN).value(&RelaxedState::from_box(state))
}

/// `(value, d/dM, d/dt, d/d(a,b,c))`.
pub type RelaxedGradient = (
    f64,
    Matrix3<f64>,
    nalgebra::Vector3<f64>,
    nalgebra::Vector3<f64>,
);

/// Objective and its gradient at a state whose rotation block is an
/// arbitrary 3x3 matrix (the relaxed problem the solver steps in).
pub fn relaxed_objective_gradient(
    m: &Matrix3<f64>,
    t: &nalgebra::Vector3<f64>,
    dims: &nalgebra::Vector3<f64>,
    obs: &FrameObservation,
    rig: &StereoRig,
    loss: &RobustLossConfig,
) -> Result<RelaxedGradient> {
    let x = RelaxedState {
        m: *m,
        t: *t,
        d: *dims,
    };
    let (f, g) = problem(obs, rig, *loss, DEFAULT_DEPTH_MIN).value_and_gradient(&x)?;
    Ok((f, g.m, g.t, g.d))
}

/// Objective at a relaxed state (rotation block unconstrained).
pub fn relaxed_objective(
    m: &Matrix3<f64>,
    t: &nalgebra::Vector3<f64>,
    dims: &nalgebra::Vector3<f64>,
    obs: &FrameObservation,
    rig: &StereoRig,
    loss: &RobustLossConfig,
) -> Result<f64> {
    let x = RelaxedState {
        m: *m,
        t: *t,
        d: *dims,
    };
    problem(obs, rig, *loss, DEFAULT_DEPTH_MIN).value(&x)
}

fn problem<'a>(
    obs: &'a FrameObservation,
    rig: &'a StereoRig,
    loss: RobustLossConfig,
    depth_min: f64,
) -> Problem<'a> {
    Problem {
        obs,
        rig,
        loss,
        depth_min,
    }
}

/// Maps a relaxed point back to the feasible set: rotation onto SO(3),
/// dimensions onto `[floor, inf)`.
fn project_feasible(x: &RelaxedState, floor: f64) -> Result<RelaxedState> {
    Ok(RelaxedState {
        m: *project_to_so3(&x.m)?.matrix(),
        t: x.t,
        d: x.d.map(|v| v.max(floor)),
    })
}

/// Normalizes a Gauss-Newton diagonal to unit mean and bounds its spread so
/// a parameter the data barely constrains cannot take an unbounded step.
fn metric_from(diag: &RelaxedState) -> RelaxedState {
    let mean = diag.dot(&RelaxedState::ones()) / 15.0;
    if !(mean.is_finite() && mean > 0.0) {
        return RelaxedState::ones();
    }
    diag.map(|v| (v / mean).clamp(METRIC_SPREAD.recip(), METRIC_SPREAD))
}

/// Gradient restricted to directions that stay feasible to first order:
/// the tangent space of SO(3) at `r` for the rotation, and no push below the
/// floor for dimensions already on it.
fn projected_gradient(x: &RelaxedState, g: &RelaxedState, floor: f64) -> RelaxedState {
    let rtg = x.m.transpose() * g.m;
    let skew = (rtg - rtg.transpose()) * 0.5;
    let mut d = g.d;
    for k in 0..3 {
        if x.d[k] <= floor && d[k] > 0.0 {
            d[k] = 0.0;
        }
    }
    RelaxedState {
        m: x.m * skew,
        t: g.t,
        d,
    }
}

/// Fits a box to `obs` by projected gradient descent with backtracking.
///
/// Starts from `init` or, when absent, from [`initialize`]. Every trial step
/// moves against the feasible part of the relaxed gradient, divided by a
/// diagonal metric fixed at the start point, then projects the rotation onto
/// SO(3) and clamps the dimensions; a step is accepted once it satisfies the
/// Armijo condition, so the objective never increases. Iteration stops when
/// the projected gradient norm falls to `grad_tol`, when no step along the
/// gradient lowers the objective any more, or after `max_iters` steps.
pub fn solve(
    obs: &FrameObservation,
    rig: &StereoRig,
    cfg: &SolverConfig,
    init: Option<BoxState>,
) -> Result<SolveResult> {
    cfg.validate()?;
    obs.validate()?;
    if !obs.is_solvable() {
        return Err(Error::InsufficientObservations(format!(
            "frame {} has {} keypoints, need at least {MIN_OBSERVATIONS}",
            obs.frame_id,
            obs.len()
        )));
    }
    let start = match init {
        Some(s) => s,
        None => initialize(obs, rig, cfg)?,
    };
    let problem = problem(obs, rig, cfg.loss, cfg.depth_min);

    let mut x = RelaxedState::from_box(&start);
    let (mut f, mut g) = problem.value_and_gradient(&x)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    // Fixed diagonal change of variables: rotation, translation and size
    // move pixels at very different rates, and plain steps crawl along the
    // poorly resolved depth direction.
    let metric = metric_from(&problem.gauss_newton_diagonal(&x)?);
    let mut history = vec![f];
    let mut alpha = cfg.step_size;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let pg = projected_gradient(&x, &g, cfg.shape_floor);
        if pg.norm_squared().sqrt() <= cfg.grad_tol {
            converged = true;
            break;
        }
        let dir = pg.component_div(&metric);

        let mut step = alpha;
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..MAX_HALVINGS {
            let trial = project_feasible(&x.axpy(-step, &dir), cfg.shape_floor)?;
            if let Ok((ft, gt)) = problem.value_and_gradient(&trial) {
                if ft.is_finite() {
                    saw_finite = true;
                    let decrease = g.dot(&trial.sub(&x));
                    if ft <= f + ARMIJO * decrease && decrease < 0.0 {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((next, f_next, g_next)) = accepted else {
            if !saw_finite {
                return Err(Error::NonFiniteObjective(iterations));
            }
            // No step along the gradient lowers the objective at floating-point
            // resolution: stationary as far as this precision can tell.
            converged = true;
            break;
        };
        iterations += 1;

        // Barzilai-Borwein trial length for the next iteration, measured on
        // the feasible (projected) gradients.
        let s = next.sub(&x);
        let y = projected_gradient(&next, &g_next, cfg.shape_floor).sub(&pg);
        let sy = s.dot(&y);
        alpha = if sy > 0.0 {
            (s.component_mul(&metric).dot(&s) / sy).min(MAX_STEP)
        } else {
            step * 2.0
        };

        x = next;
        f = f_next;
        g = g_next;
        history.push(f);
    }

    let rotation = project_to_so3(&x.m)?;
    let state = BoxState {
        pose: Pose::new(rotation, x.t)?,
        shape: Shape::from_vector(x.d)?,
    };
    let residuals = problem.residuals(&RelaxedState::from_box(&state))?;
    Ok(SolveResult {
        state,
        residuals,
        objective: f,
        iterations,
        converged,
        history,
    })
}
