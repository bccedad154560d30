//! On-disk formats: calibration, per-frame detection files, batch results,
//! pseudo-label datasets and prompt files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certificates::{BitMask, ViewMasks};
use crate::error::{Error, Result};
use crate::estimator::{BoxState, FrameObservation, KeypointObservation};
use crate::geometry::{
    project_to_so3, PinholeCamera, Pose, Rotation3, Shape, StereoRig, NUM_CORNERS,
};
use crate::View;

/// Reads and deserializes a JSON file, reporting the field path of any
/// schema violation.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(path, &text)
}

pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize to JSON");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

/// A rigid transform as either nested rows or 16 row-major numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrix4Json {
    Rows([[f64; 4]; 4]),
    Flat([f64; 16]),
}

impl Matrix4Json {
    pub fn to_matrix(&self) -> Matrix4<f64> {
        match self {
            Matrix4Json::Rows(rows) => Matrix4::from_fn(|i, j| rows[i][j]),
            Matrix4Json::Flat(v) => Matrix4::from_row_slice(v),
        }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Matrix4Json::Rows(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
    }
}

/// Stereo calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub left: PinholeCamera,
    pub right: PinholeCamera,
    pub t_right_from_left: Matrix4Json,
}

impl Calibration {
    pub fn from_rig(rig: &StereoRig) -> Self {
        Calibration {
            left: rig.left,
            right: rig.right,
            t_right_from_left: Matrix4Json::from_matrix(&rig.t_right_from_left.to_homogeneous()),
        }
    }

    pub fn to_rig(&self) -> Result<StereoRig> {
        self.left.validate()?;
        self.right.validate()?;
        let pose = Pose::from_homogeneous(&self.t_right_from_left.to_matrix())?;
        StereoRig::new(self.left, self.right, pose)
    }

    pub fn load(path: &Path) -> Result<StereoRig> {
        let calib: Calibration = read_json(path)?;
        calib.to_rig().map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            path: "t_right_from_left".into(),
            message: e.to_string(),
        })
    }
}

/// One detected keypoint as stored in detection files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointRecord {
    pub corner_index: usize,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl From<&KeypointObservation> for KeypointRecord {
    fn from(k: &KeypointObservation) -> Self {
        KeypointRecord {
            corner_index: k.corner_index,
            x: k.pixel.x,
            y: k.pixel.y,
            confidence: k.confidence,
        }
    }
}

impl From<&KeypointRecord> for KeypointObservation {
    fn from(k: &KeypointRecord) -> Self {
        KeypointObservation::new(k.corner_index, Vector2::new(k.x, k.y), k.confidence)
    }
}

/// Box state as stored on disk: row-major rotation, translation and
/// per-axis dimensions, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub dims: [f64; 3],
}

impl From<&BoxState> for StateRecord {
    fn from(s: &BoxState) -> Self {
        let r = s.pose.rotation.matrix();
        StateRecord {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: s.pose.translation.into(),
            dims: (*s.shape.dims()).into(),
        }
    }
}

impl StateRecord {
    /// Rebuilds the state. Valid rotations are kept bit-for-bit; ones within
    /// 1e-6 of orthonormal are re-projected onto SO(3) to absorb rounding in
    /// hand-written files.
    pub fn to_state(&self) -> Result<BoxState> {
        let m = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let rotation = match Rotation3::from_matrix(m) {
            Ok(r) => r,
            Err(_) => {
                let r = project_to_so3(&m)?;
                if (r.matrix() - m).abs().max() > 1e-6 {
                    return Err(Error::invalid("rotation", "matrix is not a rotation"));
                }
                r
            }
        };
        let [a, b, c] = self.dims;
        Ok(BoxState {
            pose: Pose::new(rotation, Vector3::from(self.translation))?,
            shape: Shape::new(a, b, c)?,
        })
    }
}

/// Noise-free corner projections stored with synthetic frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub left: Vec<[f64; 2]>,
    pub right: Vec<[f64; 2]>,
}

/// Per-frame detection file. Synthetic scene dumps use the same schema with
/// the optional ground-truth fields filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFile {
    pub frame_id: String,
    pub left: Vec<KeypointRecord>,
    pub right: Vec<KeypointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<StateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<CleanRecord>,
    /// Calibration file the frame was generated against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<String>,
}

impl FrameFile {
    pub fn from_observation(obs: &FrameObservation) -> Self {
        FrameFile {
            frame_id: obs.frame_id.clone(),
            left: obs.left.iter().map(KeypointRecord::from).collect(),
            right: obs.right.iter().map(KeypointRecord::from).collect(),
            truth: None,
            clean: None,
            rig: None,
        }
    }

    pub fn observation(&self) -> FrameObservation {
        FrameObservation {
            frame_id: self.frame_id.clone(),
            left: self.left.iter().map(KeypointObservation::from).collect(),
            right: self.right.iter().map(KeypointObservation::from).collect(),
        }
    }

    /// Schema checks serde cannot express, reported with field paths.
    fn check(&self, file: &Path) -> Result<()> {
        let fail = |path: String, message: String| Error::Parse {
            file: file.to_path_buf(),
            path,
            message: format!("frame {}: {message}", self.frame_id),
        };
        for view in View::BOTH {
            let kps = match view {
                View::Left => &self.left,
                View::Right => &self.right,
            };
            for (i, k) in kps.iter().enumerate() {
                if k.corner_index >= NUM_CORNERS {
                    return Err(fail(
                        format!("{view}[{i}].corner_index"),
                        format!("corner_index {} outside 0..{NUM_CORNERS}", k.corner_index),
                    ));
                }
                if !(k.x.is_finite() && k.y.is_finite()) {
                    return Err(fail(format!("{view}[{i}]"), "non-finite pixel".into()));
                }
                if !(0.0..=1.0).contains(&k.confidence) {
                    return Err(fail(
                        format!("{view}[{i}].confidence"),
                        format!("confidence {} outside [0, 1]", k.confidence),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A detection file after confidence gating.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedFrame {
    pub observation: FrameObservation,
    /// Whether enough keypoints survived gating to attempt a solve.
    pub solvable: bool,
    pub truth: Option<BoxState>,
    pub source: PathBuf,
}

/// Parses one detection file and drops keypoints with confidence
/// `<= eps_conf`.
pub fn ingest_detection_file(path: &Path, eps_conf: f64) -> Result<IngestedFrame> {
    check_eps_conf(eps_conf)?;
    let file: FrameFile = read_json(path)?;
    file.check(path)?;
    let mut observation = file.observation();
    observation.validate()?;
    observation.filter_confidence(eps_conf);
    let truth = match &file.truth {
        Some(t) => Some(t.to_state().map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            path: "truth".into(),
            message: format!("frame {}: {e}", file.frame_id),
        })?),
        None => None,
    };
    Ok(IngestedFrame {
        solvable: observation.is_solvable(),
        observation,
        truth,
        source: path.to_path_buf(),
    })
}

pub(crate) fn check_eps_conf(eps_conf: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps_conf) {
        Ok(())
    } else {
        Err(Error::invalid(
            "eps_conf",
            format!("{eps_conf} outside [0, 1]"),
        ))
    }
}

/// `*.json` files directly inside `dir`, sorted by name.
pub fn detection_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Ingests every detection file in `dir`, or a single file. Fails on the
/// first file that does not parse.
pub fn ingest_detections(path: &Path, eps_conf: f64) -> Result<Vec<IngestedFrame>> {
    scan_detections(path, eps_conf)?
        .into_iter()
        .map(|slot| match slot {
            FrameInput::Ready(f) => Ok(f),
            FrameInput::Failed { error, .. } => Err(error),
        })
        .collect()
}

/// Like [`ingest_detections`] but keeps going past bad files, recording each
/// failure in place.
pub fn scan_detections(path: &Path, eps_conf: f64) -> Result<Vec<FrameInput>> {
    check_eps_conf(eps_conf)?;
    let files = if path.is_dir() {
        detection_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    Ok(files
        .into_iter()
        .map(|p| match ingest_detection_file(&p, eps_conf) {
            Ok(f) => FrameInput::Ready(f),
            Err(error) => FrameInput::Failed {
                frame_id: file_stem(&p),
                error,
            },
        })
        .collect())
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One slot of a batch: a parsed frame or the error that replaced it.
#[derive(Debug)]
pub enum FrameInput {
    Ready(IngestedFrame),
    Failed { frame_id: String, error: Error },
}

impl FrameInput {
    pub fn frame_id(&self) -> &str {
        match self {
            FrameInput::Ready(f) => &f.observation.frame_id,
            FrameInput::Failed { frame_id, .. } => frame_id,
        }
    }
}

pub fn mask_path(dir: &Path, frame_id: &str, view: View) -> PathBuf {
    dir.join(format!("{frame_id}_{view}.pgm"))
}

/// Loads `<frame_id>_left.pgm` and `<frame_id>_right.pgm` from `dir`.
pub fn load_masks(dir: &Path, frame_id: &str) -> Result<ViewMasks> {
    Ok(ViewMasks {
        left: BitMask::load_pgm(&mask_path(dir, frame_id, View::Left))?,
        right: BitMask::load_pgm(&mask_path(dir, frame_id, View::Right))?,
    })
}

pub fn save_masks(dir: &Path, frame_id: &str, masks: &ViewMasks) -> Result<()> {
    for view in View::BOTH {
        masks.get(view).save_pgm(&mask_path(dir, frame_id, view))?;
    }
    Ok(())
}

/// Ground-truth states keyed by frame id, read from detection files that
/// carry a `truth` field. Files without one are skipped.
pub fn load_truths(dir: &Path) -> Result<std::collections::BTreeMap<String, BoxState>> {
    let mut out = std::collections::BTreeMap::new();
    let files = if dir.is_dir() {
        detection_files(dir)?
    } else {
        vec![dir.to_path_buf()]
    };
    for p in files {
        let file: FrameFile = read_json(&p)?;
        if let Some(t) = file.truth {
            let state = t.to_state().map_err(|e| Error::Parse {
                file: p.clone(),
                path: "truth".into(),
                message: e.to_string(),
            })?;
            out.insert(file.frame_id, state);
        }
    }
    Ok(out)
}

/// Segmentation prompt points for one view of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFile {
    pub frame_id: String,
    pub view: View,
    pub strategy: crate::sampling::Strategy,
    pub seed: u64,
    pub points: Vec<[f64; 2]>,
}
