use nalgebra::{Matrix3, Vector2, Vector3};

use super::{PinholeCamera, StereoRig};
use crate::error::{Error, Result};

/// Rectifying rotations for a stereo rig.
///
/// Both views are rotated into a common frame whose x-axis is the baseline,
/// and reprojected with the left intrinsics. Corresponding points then share
/// their y-coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Rectifier {
    /// Maps left-camera ray directions into the rectified frame.
    rect_from_left: Matrix3<f64>,
    /// Maps right-camera ray directions into the rectified frame.
    rect_from_right: Matrix3<f64>,
    left: PinholeCamera,
    right: PinholeCamera,
}

impl Rectifier {
    pub fn new(rig: &StereoRig) -> Result<Self> {
        let r = rig.t_right_from_left.rotation.matrix();
        let t = rig.t_right_from_left.translation;
        let baseline = t.norm();
        if !(baseline >= 1e-9) {
            return Err(Error::DegenerateBaseline(baseline));
        }

        // Right camera center expressed in the left frame.
        let right_center = -(r.transpose() * t);
        let mut x_axis = right_center / baseline;
        // Keep the rectified image upright: x points the same way as the left x-axis.
        if x_axis.x < 0.0 {
            x_axis = -x_axis;
        }
        let mean_axis = Vector3::z() + r.transpose() * Vector3::z();
        let y_raw = mean_axis.cross(&x_axis);
        let y_norm = y_raw.norm();
        if y_norm < 1e-12 {
            return Err(Error::DegenerateBaseline(baseline));
        }
        let y_axis = y_raw / y_norm;
        let z_axis = x_axis.cross(&y_axis);

        let rect_from_left =
            Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
        let rect_from_right = rect_from_left * r.transpose();
        Ok(Rectifier {
            rect_from_left,
            rect_from_right,
            left: rig.left,
            right: rig.right,
        })
    }

    pub fn rectify_left(&self, pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
        let ray = self.rect_from_left * self.left.backproject(pixel);
        self.left.project_with_depth_min(&ray, 0.0)
    }

    pub fn rectify_right(&self, pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
        let ray = self.rect_from_right * self.right.backproject(pixel);
        self.left.project_with_depth_min(&ray, 0.0)
    }

    pub fn rectify_pair(
        &self,
        kp_left: &Vector2<f64>,
        kp_right: &Vector2<f64>,
    ) -> Result<(Vector2<f64>, Vector2<f64>)> {
        Ok((self.rectify_left(kp_left)?, self.rectify_right(kp_right)?))
    }
}

/// Maps a left/right keypoint pair into the rectified frame of `rig`.
pub fn rectify(
    rig: &StereoRig,
    kp_left: &Vector2<f64>,
    kp_right: &Vector2<f64>,
) -> Result<(Vector2<f64>, Vector2<f64>)> {
    Rectifier::new(rig)?.rectify_pair(kp_left, kp_right)
}
