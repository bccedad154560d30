//! Reprojection residuals, robust losses and the analytic gradient of the
//! two-view objective.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{BoxState, FrameObservation};
use crate::error::{Error, Result};
use crate::geometry::{canonical_cube_corners, StereoRig};
use crate::View;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    GemanMcclure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustLossConfig {
    pub kind: LossKind,
    /// Geman-McClure scale in pixels.
    pub scale_c: f64,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        RobustLossConfig {
            kind: LossKind::Squared,
            scale_c: 10.0,
        }
    }
}

impl RobustLossConfig {
    pub fn squared() -> Self {
        RobustLossConfig {
            kind: LossKind::Squared,
            ..Default::default()
        }
    }

    pub fn geman_mcclure(scale_c: f64) -> Self {
        RobustLossConfig {
            kind: LossKind::GemanMcclure,
            scale_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_c > 0.0 && self.scale_c.is_finite()) {
            return Err(Error::invalid("loss", "scale_c must be positive"));
        }
        Ok(())
    }

    /// Loss of a residual with squared norm `sq`.
    pub fn rho(&self, sq: f64) -> f64 {
        match self.kind {
            LossKind::Squared => sq,
            LossKind::GemanMcclure => {
                let c2 = self.scale_c * self.scale_c;
                c2 * sq / (sq + c2)
            }
        }
    }

    /// Derivative of [`rho`](Self::rho) with respect to the squared norm.
    pub fn rho_prime(&self, sq: f64) -> f64 {
        match self.kind {
            LossKind::Squared => 1.0,
            LossKind::GemanMcclure => {
                let c2 = self.scale_c * self.scale_c;
                let den = sq + c2;
                c2 * c2 / (den * den)
            }
        }
    }
}

/// Geman-McClure penalty `c^2 r^2 / (r^2 + c^2)` of a residual norm `r`.
pub fn geman_mcclure(r: f64, c: f64) -> f64 {
    RobustLossConfig::geman_mcclure(c).rho(r * r)
}

/// Reprojection error of one observed keypoint: reprojected minus observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub view: View,
    pub corner_index: usize,
    pub delta: Vector2<f64>,
}

impl Residual {
    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }
}

/// Box parameters with the rotation constraint relaxed to a general 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RelaxedState {
    pub m: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub d: Vector3<f64>,
}

impl RelaxedState {
    pub fn from_box(state: &BoxState) -> Self {
        RelaxedState {
            m: *state.pose.rotation.matrix(),
            t: state.pose.translation,
            d: *state.shape.dims(),
        }
    }

    pub fn component_mul(&self, w: &RelaxedState) -> RelaxedState {
        RelaxedState {
            m: self.m.component_mul(&w.m),
            t: self.t.component_mul(&w.t),
            d: self.d.component_mul(&w.d),
        }
    }

    pub fn component_div(&self, w: &RelaxedState) -> RelaxedState {
        RelaxedState {
            m: self.m.component_div(&w.m),
            t: self.t.component_div(&w.t),
            d: self.d.component_div(&w.d),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RelaxedState {
        RelaxedState {
            m: self.m.map(&f),
            t: self.t.map(&f),
            d: self.d.map(&f),
        }
    }

    pub fn dot(&self, other: &RelaxedState) -> f64 {
        self.m.dot(&other.m) + self.t.dot(&other.t) + self.d.dot(&other.d)
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn sub(&self, other: &RelaxedState) -> RelaxedState {
        RelaxedState {
            m: self.m - other.m,
            t: self.t - other.t,
            d: self.d - other.d,
        }
    }

    pub fn axpy(&self, alpha: f64, dir: &RelaxedState) -> RelaxedState {
        RelaxedState {
            m: self.m + dir.m * alpha,
            t: self.t + dir.t * alpha,
            d: self.d + dir.d * alpha,
        }
    }

    pub fn zero() -> Self {
        RelaxedState {
            m: Matrix3::zeros(),
            t: Vector3::zeros(),
            d: Vector3::zeros(),
        }
    }

    pub fn ones() -> Self {
        RelaxedState {
            m: Matrix3::repeat(1.0),
            t: Vector3::repeat(1.0),
            d: Vector3::repeat(1.0),
        }
    }
}

/// The two-view reprojection objective for one frame.
pub(crate) struct Problem<'a> {
    pub obs: &'a FrameObservation,
    pub rig: &'a StereoRig,
    pub loss: RobustLossConfig,
    pub depth_min: f64,
}

impl Problem<'_> {
    fn observations(&self) -> impl Iterator<Item = (View, &super::KeypointObservation)> {
        self.obs
            .left
            .iter()
            .map(|k| (View::Left, k))
            .chain(self.obs.right.iter().map(|k| (View::Right, k)))
    }

    fn view_point(&self, view: View, q: &Vector3<f64>) -> Vector3<f64> {
        match view {
            View::Left => *q,
            View::Right => self.rig.t_right_from_left.transform_point(q),
        }
    }

    pub fn residuals(&self, x: &RelaxedState) -> Result<Vec<Residual>> {
        let cube = canonical_cube_corners();
        self.observations()
            .map(|(view, kp)| {
                let u = cube.corners[kp.corner_index];
                let q = x.m * x.d.component_mul(&u) + x.t;
                let p = self.view_point(view, &q);
                let px = self
                    .rig
                    .camera(view)
                    .project_with_depth_min(&p, self.depth_min)
                    .map_err(|e| e.at(view, kp.corner_index))?;
                Ok(Residual {
                    view,
                    corner_index: kp.corner_index,
                    delta: px - kp.pixel,
                })
            })
            .collect()
    }

    pub fn value(&self, x: &RelaxedState) -> Result<f64> {
        Ok(self
            .residuals(x)?
            .iter()
            .map(|r| self.loss.rho(r.delta.norm_squared()))
            .sum())
    }

    /// Objective value and its gradient with respect to `(M, t, d)`.
    pub fn value_and_gradient(&self, x: &RelaxedState) -> Result<(f64, RelaxedState)> {
        let cube = canonical_cube_corners();
        let r_rl = self.rig.t_right_from_left.rotation.matrix();
        let mut value = 0.0;
        let mut grad = RelaxedState::zero();
        for (view, kp) in self.observations() {
            let u = cube.corners[kp.corner_index];
            let su = x.d.component_mul(&u);
            let q = x.m * su + x.t;
            let p = self.view_point(view, &q);
            let camera = self.rig.camera(view);
            let px = camera
                .project_with_depth_min(&p, self.depth_min)
                .map_err(|e| e.at(view, kp.corner_index))?;
            let delta = px - kp.pixel;
            let sq = delta.norm_squared();
            value += self.loss.rho(sq);

            let g_delta = delta * (2.0 * self.loss.rho_prime(sq));
            let g_p = camera.projection_jacobian(&p).transpose() * g_delta;
            let g_q = match view {
                View::Left => g_p,
                View::Right => r_rl.transpose() * g_p,
            };
            grad.m += g_q * su.transpose();
            grad.t += g_q;
            grad.d += (x.m.transpose() * g_q).component_mul(&u);
        }
        Ok((value, grad))
    }

    /// Diagonal of the Gauss-Newton matrix `JᵀJ` of the stacked pixel
    /// residuals, laid out like the state. The rotation block is replaced by
    /// its mean so that scaling by it keeps rotation steps isotropic.
    pub fn gauss_newton_diagonal(&self, x: &RelaxedState) -> Result<RelaxedState> {
        let cube = canonical_cube_corners();
        let r_rl = self.rig.t_right_from_left.rotation.matrix();
        let mut diag = RelaxedState::zero();
        for (view, kp) in self.observations() {
            let u = cube.corners[kp.corner_index];
            let su = x.d.component_mul(&u);
            let p = self.view_point(view, &(x.m * su + x.t));
            let jp = self.rig.camera(view).projection_jacobian(&p);
            let a = match view {
                View::Left => jp,
                View::Right => jp * r_rl,
            };
            let am = a * x.m;
            for k in 0..2 {
                for i in 0..3 {
                    diag.t[i] += a[(k, i)].powi(2);
                    diag.d[i] += (am[(k, i)] * u[i]).powi(2);
                    for j in 0..3 {
                        diag.m[(i, j)] += (a[(k, i)] * su[j]).powi(2);
                    }
                }
            }
        }
        diag.m = Matrix3::repeat(diag.m.mean());
        Ok(diag)
    }
}
