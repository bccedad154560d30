//! Synthetic stereo scenes with known ground truth.
//!
//! Each scene is a single box at a random pose seen by a fixed stereo rig,
//! with noiseless corner projections and rendered silhouettes. Scene `index`
//! of a config draws from its own ChaCha8 stream of `seed`, so any scene can
//! be regenerated alone and generation order does not matter.

use nalgebra::{UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificates::{render_silhouettes, ViewMasks};
use crate::error::{Error, Result};
use crate::estimator::{BoxState, FrameObservation, KeypointObservation};
use crate::geometry::{PinholeCamera, Pose, Rotation3, Shape, StereoRig, NUM_CORNERS};
use crate::View;

pub const MAX_ATTEMPTS: usize = 1000;

/// Length scale of the synthetic confidence proxy `exp(-|perturbation| / 20)`.
pub const CONFIDENCE_SCALE_PX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RotationSampling {
    /// Haar-uniform over SO(3).
    Uniform,
    /// Uniform axis, angle uniform in `[0, max_angle]` radians.
    AxisLimited { max_angle: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Per-axis box size range, meters.
    pub dims_range: [f64; 2],
    /// Box center depth range in the left camera, meters.
    pub depth_range: [f64; 2],
    pub rotation: RotationSampling,
    pub baseline: f64,
    /// Rotation angle (radians, random axis) between the two cameras.
    pub rig_rotation: f64,
    pub camera: PinholeCamera,
    pub noise_sigma: f64,
    pub outlier_rate: f64,
    pub outlier_magnitude: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            dims_range: [0.1, 0.4],
            depth_range: [1.5, 3.0],
            rotation: RotationSampling::Uniform,
            baseline: 0.12,
            rig_rotation: 0.02,
            camera: PinholeCamera {
                fx: 800.0,
                fy: 800.0,
                cx: 820.0,
                cy: 616.0,
                width: 1640,
                height: 1232,
            },
            noise_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 50.0,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !range_ok(self.dims_range) {
            return Err(Error::invalid(
                "scene config",
                "dims_range must be positive and ordered",
            ));
        }
        if !range_ok(self.depth_range) {
            return Err(Error::invalid(
                "scene config",
                "depth_range must be positive and ordered",
            ));
        }
        if !(self.baseline > 0.0) {
            return Err(Error::invalid("scene config", "baseline must be positive"));
        }
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(self.outlier_rate) || !rate_ok(self.dropout_rate) {
            return Err(Error::invalid("scene config", "rates must be in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.outlier_magnitude >= 0.0) {
            return Err(Error::invalid("scene config", "noise must be non-negative"));
        }
        if let RotationSampling::AxisLimited { max_angle } = self.rotation {
            if !(max_angle >= 0.0) {
                return Err(Error::invalid(
                    "scene config",
                    "max_angle must be non-negative",
                ));
            }
        }
        self.camera.validate()
    }

    /// The stereo rig shared by every scene of this config: identical
    /// cameras, right camera `baseline` meters along the left x-axis and
    /// rotated by `rig_rotation` about a seed-dependent axis.
    pub fn rig(&self) -> Result<StereoRig> {
        let mut rng = stream(self.seed, u64::MAX);
        let axis = random_unit_vector(&mut rng);
        let r = Rotation3::from_axis_angle(&axis, self.rig_rotation);
        let center = Vector3::new(self.baseline, 0.0, 0.0);
        let t = -(r.matrix() * center);
        StereoRig::new(self.camera, self.camera, Pose::new(r, t)?)
    }
}

/// A generated frame with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub index: u64,
    pub frame_id: String,
    pub truth: BoxState,
    pub rig: StereoRig,
    /// Noiseless projections of the eight corners, left then right.
    pub clean: [[Vector2<f64>; NUM_CORNERS]; 2],
    pub masks: ViewMasks,
}

impl SyntheticScene {
    pub fn clean_keypoints(&self, view: View) -> &[Vector2<f64>; NUM_CORNERS] {
        match view {
            View::Left => &self.clean[0],
            View::Right => &self.clean[1],
        }
    }

    /// All sixteen corners as noiseless observations with confidence 1.
    pub fn clean_observation(&self) -> FrameObservation {
        let kps = |view| {
            self.clean_keypoints(view)
                .iter()
                .enumerate()
                .map(|(i, p)| KeypointObservation::new(i, *p, 1.0))
                .collect()
        };
        FrameObservation {
            frame_id: self.frame_id.clone(),
            left: kps(View::Left),
            right: kps(View::Right),
        }
    }
}

pub fn frame_id(index: u64) -> String {
    format!("frame_{index:06}")
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn sample_rotation(rng: &mut impl Rng, mode: RotationSampling) -> Rotation3 {
    match mode {
        RotationSampling::Uniform => {
            let q = loop {
                let v = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
                let n: f64 = v.norm();
                if n > 1e-9 {
                    break v / n;
                }
            };
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q));
            Rotation3::from_matrix_unchecked(*q.to_rotation_matrix().matrix())
        }
        RotationSampling::AxisLimited { max_angle } => {
            let axis = random_unit_vector(rng);
            Rotation3::from_axis_angle(&axis, rng.random::<f64>() * max_angle)
        }
    }
}

fn uniform_in(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn project_all(state: &BoxState, rig: &StereoRig) -> Option<[[Vector2<f64>; NUM_CORNERS]; 2]> {
    let mut out = [[Vector2::zeros(); NUM_CORNERS]; 2];
    for (slot, view) in out.iter_mut().zip(View::BOTH) {
        let px = state.project_corners(rig, view).ok()?;
        if !px.iter().all(|p| rig.camera(view).contains(p)) {
            return None;
        }
        *slot = px;
    }
    Some(out)
}

/// Generates scene `index`, resampling the box until all sixteen corner
/// projections land inside both images.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let rig = cfg.rig()?;
    let mut rng = stream(cfg.seed, 2 * index);
    for _ in 0..MAX_ATTEMPTS {
        let dims = Vector3::from_fn(|_, _| uniform_in(&mut rng, cfg.dims_range));
        let rotation = sample_rotation(&mut rng, cfg.rotation);
        let depth = uniform_in(&mut rng, cfg.depth_range);
        let pixel = Vector2::new(
            rng.random::<f64>() * cfg.camera.width as f64 - 0.5,
            rng.random::<f64>() * cfg.camera.height as f64 - 0.5,
        );
        let center = cfg.camera.backproject(&pixel) * depth;
        let truth = BoxState {
            pose: Pose::new(rotation, center)?,
            shape: Shape::from_vector(dims)?,
        };
        if let Some(clean) = project_all(&truth, &rig) {
            let masks = render_silhouettes(&truth, &rig)?;
            return Ok(SyntheticScene {
                index,
                frame_id: frame_id(index),
                truth,
                rig,
                clean,
                masks,
            });
        }
    }
    Err(Error::SamplingExhausted(MAX_ATTEMPTS))
}

/// Simulated detections: per keypoint, dropout, then either Gaussian noise
/// or (with `outlier_rate`) an offset of `outlier_magnitude` pixels in a
/// random direction. Confidence decays with the size of the perturbation.
pub fn corrupt_observations(scene: &SyntheticScene, cfg: &SceneConfig) -> FrameObservation {
    let mut rng = stream(cfg.seed, 2 * scene.index + 1);
    let mut obs = FrameObservation {
        frame_id: scene.frame_id.clone(),
        ..Default::default()
    };
    for view in View::BOTH {
        for (i, clean) in scene.clean_keypoints(view).iter().enumerate() {
            // Draw every variate unconditionally so the stream layout does not
            // depend on the rates.
            let drop_u = rng.random::<f64>();
            let outlier_u = rng.random::<f64>();
            let gauss = Vector2::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            if drop_u < cfg.dropout_rate {
                continue;
            }
            let perturbation = if outlier_u < cfg.outlier_rate {
                Vector2::new(angle.cos(), angle.sin()) * cfg.outlier_magnitude
            } else {
                gauss * cfg.noise_sigma
            };
            let confidence = (-perturbation.norm() / CONFIDENCE_SCALE_PX).exp();
            obs.view_mut(view).push(KeypointObservation::new(
                i,
                clean + perturbation,
                confidence,
            ));
        }
    }
    obs
}

/// Ground-truth silhouettes of a scene in both views.
pub fn render_gt_masks(scene: &SyntheticScene) -> Result<ViewMasks> {
    let masks = render_silhouettes(&scene.truth, &scene.rig)?;
    if masks.left.is_empty() || masks.right.is_empty() {
        log::warn!("{}: ground-truth silhouette is empty", scene.frame_id);
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, 3).unwrap();
        let b = generate_scene(&cfg, 3).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.masks, b.masks);
        let c = generate_scene(&cfg, 4).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn impossible_depth_exhausts() {
        let cfg = SceneConfig {
            depth_range: [1e-4, 2e-4],
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&cfg, 0),
            Err(Error::SamplingExhausted(_))
        ));
    }

    #[test]
    fn noiseless_and_dropout_boundaries() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(&cfg, 0).unwrap();
        assert_eq!(
            corrupt_observations(&scene, &cfg),
            scene.clean_observation()
        );

        let all_drop = SceneConfig {
            dropout_rate: 1.0,
            ..cfg
        };
        let obs = corrupt_observations(&scene, &all_drop);
        assert!(obs.left.is_empty() && obs.right.is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SceneConfig {
            dropout_rate: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SceneConfig {
            dims_range: [0.4, 0.1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
