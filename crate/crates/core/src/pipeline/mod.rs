//! Batch orchestration: ingest detections, solve, certify and emit
//! pseudo-labels, plus evaluation against ground truth.

mod analysis;
mod formats;
mod metrics;

pub use analysis::{
    certificate_correlation_report, spearman, BinSpec, Binning, CorrelationReport, Crossover,
    EpipolarBinRow, IouBinRow, ResidualBinRow,
};
pub use formats::{
    detection_files, ingest_detection_file, ingest_detections, load_masks, load_truths, mask_path,
    read_json, save_masks, scan_detections, to_json_string, write_json, Calibration, CleanRecord,
    FrameFile, FrameInput, IngestedFrame, KeypointRecord, Matrix4Json, PromptFile, StateRecord,
};
pub use metrics::{
    align_to_truth, corner_rmse, empirical_cdf, evaluate, label_errors, truth_from_keypoints,
    Alignment, EvalSummary, FrameEval,
};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::render_silhouettes;
use crate::certificates::{
    certify_state, CertificateReport, CertificateThresholds, PseudoLabel, ViewMasks,
};
use crate::error::{Error, Result};
use crate::estimator::{initialize, solve, BoxState, FrameObservation, SolverConfig};
use crate::geometry::StereoRig;

/// Where certification reads segmentation masks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Render silhouettes of the ground-truth box carried by each frame.
    #[default]
    GroundTruth,
    /// Read `<frame_id>_<view>.pgm` files from `mask_dir`.
    ExternalFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Keypoints with confidence at or below this are discarded on ingest.
    pub eps_conf: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub thresholds: CertificateThresholds,
    #[serde(default)]
    pub mask_source: MaskSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub parallelism: usize,
}

impl RunConfig {
    pub fn new(eps_conf: f64) -> Self {
        RunConfig {
            eps_conf,
            solver: SolverConfig::default(),
            thresholds: CertificateThresholds::default(),
            mask_source: MaskSource::GroundTruth,
            mask_dir: None,
            parallelism: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        formats::check_eps_conf(self.eps_conf)?;
        self.solver.validate()?;
        self.thresholds.validate()?;
        if self.mask_source == MaskSource::ExternalFiles && self.mask_dir.is_none() {
            return Err(Error::invalid(
                "mask_dir",
                "required when mask_source is external_files",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Solved,
    /// Too few keypoints survived confidence gating.
    Unsolvable,
    /// The frame could not be read, solved or certified.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub left: Vec<KeypointRecord>,
    pub right: Vec<KeypointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub state: StateRecord,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything the pipeline knows about one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub status: FrameStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CertificateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameRecord {
    fn failed(frame_id: &str, observation: Option<ObservationRecord>, error: &Error) -> Self {
        FrameRecord {
            frame_id: frame_id.to_owned(),
            status: FrameStatus::Failed,
            observation,
            estimate: None,
            report: None,
            error: Some(error.to_string()),
        }
    }

    pub fn observation(&self) -> Option<FrameObservation> {
        self.observation.as_ref().map(|o| FrameObservation {
            frame_id: self.frame_id.clone(),
            left: o.left.iter().map(Into::into).collect(),
            right: o.right.iter().map(Into::into).collect(),
        })
    }

    pub fn state(&self) -> Option<Result<BoxState>> {
        self.estimate.as_ref().map(|e| e.state.to_state())
    }

    pub fn is_accepted(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.accepted)
    }

    /// Why the frame yields no pseudo-labels; empty for accepted frames.
    pub fn rejection_reasons(&self, thresholds: &CertificateThresholds) -> Vec<String> {
        match (&self.status, &self.report) {
            (FrameStatus::Unsolvable, _) | (FrameStatus::Failed, _) => vec![self
                .error
                .clone()
                .unwrap_or_else(|| format!("{:?}", self.status).to_lowercase())],
            (FrameStatus::Solved, None) => vec!["not certified".into()],
            (FrameStatus::Solved, Some(r)) if r.accepted => Vec::new(),
            (FrameStatus::Solved, Some(r)) => {
                let mut reasons = Vec::new();
                for (view, iou) in [("left", r.iou_left), ("right", r.iou_right)] {
                    if iou <= 1.0 - thresholds.eps_2d {
                        reasons.push(format!(
                            "{view} IoU {iou:.4} not above {:.4}",
                            1.0 - thresholds.eps_2d
                        ));
                    }
                }
                if reasons.is_empty() {
                    reasons.push("2D check failed".into());
                }
                reasons
            }
        }
    }
}

fn observation_record(obs: &FrameObservation) -> ObservationRecord {
    ObservationRecord {
        left: obs.left.iter().map(KeypointRecord::from).collect(),
        right: obs.right.iter().map(KeypointRecord::from).collect(),
    }
}

/// Initializes and solves one ingested frame.
pub fn estimate_frame(input: &FrameInput, rig: &StereoRig, solver: &SolverConfig) -> FrameRecord {
    let frame = match input {
        FrameInput::Ready(f) => f,
        FrameInput::Failed { frame_id, error } => {
            return FrameRecord::failed(frame_id, None, error)
        }
    };
    let obs = &frame.observation;
    let observation = Some(observation_record(obs));
    if !frame.solvable {
        return FrameRecord {
            frame_id: obs.frame_id.clone(),
            status: FrameStatus::Unsolvable,
            observation,
            estimate: None,
            report: None,
            error: Some(format!(
                "{} keypoints after confidence gating, need {}",
                obs.len(),
                crate::estimator::MIN_OBSERVATIONS
            )),
        };
    }
    let solved = initialize(obs, rig, solver).and_then(|init| solve(obs, rig, solver, Some(init)));
    match solved {
        Ok(res) => FrameRecord {
            frame_id: obs.frame_id.clone(),
            status: FrameStatus::Solved,
            observation,
            estimate: Some(EstimateRecord {
                state: StateRecord::from(&res.state),
                objective: res.objective,
                iterations: res.iterations,
                converged: res.converged,
            }),
            report: None,
            error: None,
        },
        Err(e) => FrameRecord::failed(&obs.frame_id, observation, &e),
    }
}

/// Attaches a certificate report to a solved record. Other records pass
/// through unchanged; a mask or certification error turns the record into a
/// failure that keeps its estimate.
pub fn certify_record(
    record: &FrameRecord,
    rig: &StereoRig,
    masks: Result<ViewMasks>,
    thresholds: &CertificateThresholds,
) -> FrameRecord {
    if record.status != FrameStatus::Solved {
        return record.clone();
    }
    let report = (|| {
        let state = record
            .state()
            .ok_or_else(|| Error::invalid("record", "solved frame without estimate"))??;
        let obs = record
            .observation()
            .ok_or_else(|| Error::invalid("record", "solved frame without observations"))?;
        certify_state(&state, &obs, rig, &masks?, thresholds)
    })();
    let mut out = record.clone();
    match report {
        Ok(r) => out.report = Some(r),
        Err(e) => {
            out.status = FrameStatus::Failed;
            out.error = Some(e.to_string());
        }
    }
    out
}

/// Runs `f` on a pool of `workers` threads (0 = rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

fn masks_for(input: &FrameInput, rig: &StereoRig, cfg: &RunConfig) -> Result<ViewMasks> {
    let FrameInput::Ready(frame) = input else {
        return Err(Error::invalid("frame", "not ingested"));
    };
    let frame_id = &frame.observation.frame_id;
    match cfg.mask_source {
        MaskSource::GroundTruth => {
            let truth = frame
                .truth
                .ok_or_else(|| Error::MissingTruth(frame_id.clone()))?;
            render_silhouettes(&truth, rig)
        }
        MaskSource::ExternalFiles => {
            let dir = cfg
                .mask_dir
                .as_deref()
                .ok_or_else(|| Error::invalid("mask_dir", "not set"))?;
            load_masks(dir, frame_id)
        }
    }
}

/// Solves, certifies and selects pseudo-labels for every frame. Per-frame
/// failures become records; the output order matches `frames`.
pub fn run_batch(
    frames: &[FrameInput],
    rig: &StereoRig,
    cfg: &RunConfig,
) -> Result<Vec<FrameRecord>> {
    cfg.validate()?;
    Ok(with_workers(cfg.parallelism, || {
        frames
            .par_iter()
            .map(|input| {
                let est = estimate_frame(input, rig, &cfg.solver);
                if est.status != FrameStatus::Solved {
                    return est;
                }
                certify_record(&est, rig, masks_for(input, rig, cfg), &cfg.thresholds)
            })
            .collect()
    }))
}

/// Results of a batch together with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFile {
    pub calibration: Calibration,
    pub eps_conf: f64,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<CertificateThresholds>,
    pub frames: Vec<FrameRecord>,
}

impl BatchFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn rig(&self) -> Result<StereoRig> {
        self.calibration.to_rig()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateScores {
    pub iou_left: f64,
    pub iou_right: f64,
    /// Largest rectified y-disagreement; absent when no corner was seen twice.
    pub max_ydiff: Option<f64>,
    pub residual_passes: usize,
    pub residual_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedFrame {
    pub frame_id: String,
    pub labels: Vec<PseudoLabel>,
    pub scores: CertificateScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedFrame {
    pub frame_id: String,
    pub reasons: Vec<String>,
}

/// Pseudo-label dataset: certified labels per accepted frame, and the
/// reasons every other frame was left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelDataset {
    pub thresholds: CertificateThresholds,
    pub accepted: Vec<AcceptedFrame>,
    pub rejected: Vec<RejectedFrame>,
}

impl PseudoLabelDataset {
    pub fn from_records(records: &[FrameRecord], thresholds: &CertificateThresholds) -> Self {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for rec in records {
            match &rec.report {
                Some(r) if r.accepted => accepted.push(AcceptedFrame {
                    frame_id: rec.frame_id.clone(),
                    labels: r.labels.clone(),
                    scores: CertificateScores {
                        iou_left: r.iou_left,
                        iou_right: r.iou_right,
                        max_ydiff: r.max_ydiff(),
                        residual_passes: r.keypoints.iter().filter(|k| k.pass_res).count(),
                        residual_total: r.keypoints.len(),
                    },
                }),
                _ => rejected.push(RejectedFrame {
                    frame_id: rec.frame_id.clone(),
                    reasons: rec.rejection_reasons(thresholds),
                }),
            }
        }
        PseudoLabelDataset {
            thresholds: *thresholds,
            accepted,
            rejected,
        }
    }

    pub fn label_count(&self) -> usize {
        self.accepted.iter().map(|a| a.labels.len()).sum()
    }
}

/// Writes the pseudo-label dataset for `records` to `path`.
pub fn emit_pseudo_label_dataset(
    records: &[FrameRecord],
    thresholds: &CertificateThresholds,
    path: &Path,
) -> Result<PseudoLabelDataset> {
    let dataset = PseudoLabelDataset::from_records(records, thresholds);
    write_json(path, &dataset)?;
    Ok(dataset)
}

/// Paths written by [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub calibration: PathBuf,
    pub detections: PathBuf,
    pub masks: PathBuf,
    pub frames: usize,
}

/// Generates `count` scenes and writes `calib.json`, one detection file per
/// frame under `detections/` (with truth and clean projections) and the
/// ground-truth silhouettes under `masks/`.
pub fn write_synthetic_dataset(
    cfg: &crate::synthetic::SceneConfig,
    count: u64,
    out: &Path,
) -> Result<SyntheticDataset> {
    use crate::synthetic::{corrupt_observations, generate_scene};
    cfg.validate()?;
    let detections = out.join("detections");
    let masks = out.join("masks");
    for dir in [&detections, &masks] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let calibration = out.join("calib.json");
    write_json(&calibration, &Calibration::from_rig(&cfg.rig()?))?;

    (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
        let scene = generate_scene(cfg, i)?;
        let obs = corrupt_observations(&scene, cfg);
        let mut file = FrameFile::from_observation(&obs);
        file.truth = Some(StateRecord::from(&scene.truth));
        file.clean = Some(CleanRecord {
            left: scene.clean[0].iter().map(|p| [p.x, p.y]).collect(),
            right: scene.clean[1].iter().map(|p| [p.x, p.y]).collect(),
        });
        file.rig = Some("../calib.json".into());
        write_json(&detections.join(format!("{}.json", scene.frame_id)), &file)?;
        save_masks(&masks, &scene.frame_id, &scene.masks)
    })?;
    Ok(SyntheticDataset {
        calibration,
        detections,
        masks,
        frames: count as usize,
    })
}
