//! Pinhole projection, rigid and scaling transforms, SO(3) utilities and
//! stereo rectification.
//!
//! Image coordinates are pixel-center anchored: `(0, 0)` is the center of the
//! top-left pixel, so pixel `(i, j)` covers `[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)`.

mod rectify;
mod symmetry;

pub use rectify::{rectify, Rectifier};
pub use symmetry::{cube_rotation_group, CubeSymmetry};

use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest depth (meters) at which a point is still considered in front of
/// a camera.
pub const DEFAULT_DEPTH_MIN: f64 = 1e-6;

const ROTATION_TOL: f64 = 1e-9;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and `det = +1` within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation", "non-finite entries"));
        }
        let ortho = (m * m.transpose() - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid(
                "rotation",
                format!("not in SO(3): |RR^T - I| = {ortho:.3e}, det = {det}"),
            ));
        }
        Ok(Rotation3(m))
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Rotation3(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Rigid transform `p -> R p + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite translation"));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Rotation3::identity(),
            translation: t,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads a 4x4 homogeneous transform; the last row must be `[0 0 0 1]`.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let last = m.row(3);
        if (last - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax() > ROTATION_TOL {
            return Err(Error::invalid(
                "pose",
                "last row of transform is not [0 0 0 1]",
            ));
        }
        let r = Rotation3::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Pose::new(r, m.fixed_view::<3, 1>(0, 3).into_owned())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    /// `(a * b)(p) = a(b(p))`
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.matrix() * rhs.translation + self.translation,
        }
    }
}

/// Box dimensions `(a, b, c)` in meters: the anisotropic scaling of the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    dims: Vector3<f64>,
}

impl Shape {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        Shape::from_vector(Vector3::new(a, b, c))
    }

    pub fn from_vector(dims: Vector3<f64>) -> Result<Self> {
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(Shape { dims })
        } else {
            Err(Error::invalid(
                "shape",
                format!("dimensions must be positive, got {:?}", dims.as_slice()),
            ))
        }
    }

    pub fn dims(&self) -> &Vector3<f64> {
        &self.dims
    }

    /// Componentwise `S u`.
    pub fn scale(&self, u: &Vector3<f64>) -> Vector3<f64> {
        self.dims.component_mul(u)
    }
}

/// Ideal pinhole camera (no distortion). Intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("camera", "principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "image size must be positive"));
        }
        Ok(())
    }

    /// Projects a camera-frame point with the default depth cutoff.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_with_depth_min(p, DEFAULT_DEPTH_MIN)
    }

    pub fn project_with_depth_min(&self, p: &Vector3<f64>, depth_min: f64) -> Result<Vector2<f64>> {
        if !(p.z > depth_min) {
            return Err(Error::PointBehindCamera {
                depth: p.z,
                view: None,
                corner: None,
            });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Derivative of [`project`](Self::project) with respect to the point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Normalized viewing ray `K^-1 [u v 1]^T` (z = 1).
    pub fn backproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Whether `pixel` lies on the image, using pixel-center coordinates.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

/// Two calibrated cameras and the transform taking left-camera coordinates
/// to right-camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: PinholeCamera,
    pub right: PinholeCamera,
    pub t_right_from_left: Pose,
}

impl StereoRig {
    pub fn new(left: PinholeCamera, right: PinholeCamera, t_right_from_left: Pose) -> Result<Self> {
        left.validate()?;
        right.validate()?;
        let baseline = t_right_from_left.translation.norm();
        if !(baseline > 0.0) {
            return Err(Error::DegenerateBaseline(baseline));
        }
        Ok(StereoRig {
            left,
            right,
            t_right_from_left,
        })
    }

    pub fn camera(&self, view: crate::View) -> &PinholeCamera {
        match view {
            crate::View::Left => &self.left,
            crate::View::Right => &self.right,
        }
    }

    /// Object-to-camera pose for `view`, given the object-to-left pose.
    pub fn view_pose(&self, view: crate::View, pose: &Pose) -> Pose {
        match view {
            crate::View::Left => *pose,
            crate::View::Right => self.t_right_from_left * *pose,
        }
    }

    pub fn baseline(&self) -> f64 {
        self.t_right_from_left.translation.norm()
    }
}

/// The eight corners of the axis-aligned unit cube centered at the origin.
///
/// Corner `i` has coordinate bits `x = i & 1`, `y = (i >> 1) & 1`,
/// `z = (i >> 2) & 1`, with bit 0 mapping to `-0.5` and bit 1 to `+0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalCube {
    pub corners: [Vector3<f64>; 8],
}

pub const NUM_CORNERS: usize = 8;

pub fn canonical_cube_corners() -> CanonicalCube {
    let bit = |i: usize, b: usize| if (i >> b) & 1 == 1 { 0.5 } else { -0.5 };
    let corners = std::array::from_fn(|i| Vector3::new(bit(i, 0), bit(i, 1), bit(i, 2)));
    CanonicalCube { corners }
}

/// `R (S u) + t`
pub fn transform_corner(pose: &Pose, shape: &Shape, u: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(&shape.scale(u))
}

/// Nearest rotation in Frobenius norm, `U diag(1, 1, det(U V^T)) V^T`.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation3> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateMatrix([f64::NAN; 3]));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateMatrix([f64::NAN; 3])),
    };
    let mut sv = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] < 1e-12 {
        return Err(Error::DegenerateMatrix(sv));
    }
    // The sign correction belongs on the smallest singular direction.
    let smallest = (0..3)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap_or(2);
    let d = (u * v_t).determinant().signum();
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[smallest] = d;
    let r = u * Matrix3::from_diagonal(&diag) * v_t;
    Ok(Rotation3(r))
}

/// Angle of `r1^T r2`, in `[0, pi]`.
pub fn geodesic_distance(r1: &Rotation3, r2: &Rotation3) -> f64 {
    // atan2 keeps full precision near 0 where acos of the trace does not.
    let r = r1.matrix().transpose() * r2.matrix();
    let cos = (r.trace() - 1.0) / 2.0;
    let sin = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        / 2.0;
    sin.atan2(cos)
}
