#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stereobox::estimator::{BoxState, FrameObservation};
use stereobox::geometry::{Pose, Rotation3, Shape, StereoRig};
use stereobox::synthetic::{corrupt_observations, generate_scene, SceneConfig, SyntheticScene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation3 {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
    Rotation3::from_matrix(*q.to_rotation_matrix().matrix()).unwrap()
}

pub fn default_rig() -> StereoRig {
    SceneConfig::default().rig().unwrap()
}

pub fn noisy(sigma: f64) -> SceneConfig {
    SceneConfig {
        noise_sigma: sigma,
        ..Default::default()
    }
}

pub fn frame(cfg: &SceneConfig, index: u64) -> (SyntheticScene, FrameObservation) {
    let scene = generate_scene(cfg, index).unwrap();
    let obs = corrupt_observations(&scene, cfg);
    (scene, obs)
}

/// `state` moved by `offset` in the left camera frame.
pub fn shifted(state: &BoxState, offset: Vector3<f64>) -> BoxState {
    BoxState {
        pose: Pose::new(state.pose.rotation, state.pose.translation + offset).unwrap(),
        shape: state.shape,
    }
}

pub fn boxed(rotation: Rotation3, t: [f64; 3], dims: [f64; 3]) -> BoxState {
    BoxState {
        pose: Pose::new(rotation, Vector3::from(t)).unwrap(),
        shape: Shape::new(dims[0], dims[1], dims[2]).unwrap(),
    }
}
