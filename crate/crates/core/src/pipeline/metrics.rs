//! Pose, rotation and shape errors against ground truth, and keypoint error
//! distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FrameRecord;
use crate::certificates::PseudoLabel;
use crate::error::{Error, Result};
use crate::estimator::{initialize, solve, BoxState, FrameObservation, SolverConfig};
use crate::geometry::{
    cube_rotation_group, geodesic_distance, CubeSymmetry, StereoRig, NUM_CORNERS,
};

/// Root mean square distance between same-index corners of two boxes.
pub fn corner_rmse(a: &BoxState, b: &BoxState) -> f64 {
    let sum: f64 = (0..NUM_CORNERS)
        .map(|i| (a.corner(i) - b.corner(i)).norm_squared())
        .sum();
    (sum / NUM_CORNERS as f64).sqrt()
}

/// An estimate re-expressed under the cube symmetry that best matches truth.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub symmetry: CubeSymmetry,
    pub state: BoxState,
    pub corner_rmse: f64,
}

/// Picks the cube rotation (with its dims permutation) that minimizes corner
/// RMSE between `est` and `truth`. Ties go to the earlier group element.
pub fn align_to_truth(est: &BoxState, truth: &BoxState) -> Alignment {
    let mut best: Option<Alignment> = None;
    for g in cube_rotation_group() {
        let (pose, shape) = g.apply(&est.pose, &est.shape);
        let state = BoxState { pose, shape };
        let rmse = corner_rmse(&state, truth);
        if best.as_ref().is_none_or(|b| rmse < b.corner_rmse) {
            best = Some(Alignment {
                symmetry: g,
                state,
                corner_rmse: rmse,
            });
        }
    }
    best.expect("group is nonempty")
}

/// Pixel distance of each label from the true projection of its corner.
pub fn label_errors(labels: &[PseudoLabel], truth: &BoxState, rig: &StereoRig) -> Result<Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            let gt = truth.project_corner(rig, l.view, l.corner_index)?;
            Ok((nalgebra::Vector2::from(l.pixel) - gt).norm())
        })
        .collect()
}

/// Empirical CDF at each distinct sample: `(value, fraction <= value)`.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub frame_id: String,
    pub translation_error: f64,
    pub rotation_error: f64,
    pub shape_error: f64,
    pub corner_rmse: f64,
    /// Certification outcome, when the record was certified.
    pub accepted: Option<bool>,
    /// RMS pixel error of the emitted pseudo-labels, when there are any.
    pub label_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean translation error (m) over solved frames.
    pub ape: f64,
    /// Mean geodesic rotation error (rad) after symmetry alignment.
    pub are: f64,
    /// Mean L2 dimension error (m) after symmetry alignment.
    pub ase: f64,
    /// Error CDF of emitted pseudo-labels.
    pub rmse_cdf: Vec<(f64, f64)>,
    /// Error CDF of every detected keypoint that entered a solve.
    pub rmse_cdf_all_predicted: Vec<(f64, f64)>,
    pub frames: Vec<FrameEval>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalSummary {
    /// One row per evaluated frame followed by a `mean` row.
    pub fn frames_csv(&self) -> String {
        let mut s = String::from(
            "frame_id,translation_error_m,rotation_error_rad,shape_error_m,corner_rmse_m,accepted,label_rmse_px\n",
        );
        for f in &self.frames {
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&f.frame_id),
                f.translation_error,
                f.rotation_error,
                f.shape_error,
                f.corner_rmse,
                f.accepted.map(|a| a.to_string()).unwrap_or_default(),
                opt(f.label_rmse),
            );
        }
        s += &format!("mean,{},{},{},,,\n", self.ape, self.are, self.ase);
        s
    }

    /// Both error CDFs, tagged `certified` and `all_predicted`.
    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("set,error_px,fraction\n");
        for (set, cdf) in [
            ("certified", &self.rmse_cdf),
            ("all_predicted", &self.rmse_cdf_all_predicted),
        ] {
            for (x, f) in cdf {
                s += &format!("{set},{x},{f}\n");
            }
        }
        s
    }
}

fn rms(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores every solved record against `truths`. Unsolved records are
/// skipped; a solved record without a truth is an error.
pub fn evaluate(
    records: &[FrameRecord],
    truths: &BTreeMap<String, BoxState>,
    rig: &StereoRig,
) -> Result<EvalSummary> {
    let mut frames = Vec::new();
    let mut certified = Vec::new();
    let mut predicted = Vec::new();
    for rec in records.iter().filter(|r| r.estimate.is_some()) {
        let truth = truths
            .get(&rec.frame_id)
            .ok_or_else(|| Error::MissingTruth(rec.frame_id.clone()))?;
        let est = rec.state().expect("filtered on estimate")?;
        let aligned = align_to_truth(&est, truth);
        let label_err = match &rec.report {
            Some(r) => label_errors(&r.labels, truth, rig)?,
            None => Vec::new(),
        };
        if let Some(obs) = rec.observation() {
            predicted.extend(observation_errors(&obs, truth, rig)?);
        }
        certified.extend_from_slice(&label_err);
        frames.push(FrameEval {
            frame_id: rec.frame_id.clone(),
            translation_error: (est.pose.translation - truth.pose.translation).norm(),
            rotation_error: geodesic_distance(&aligned.state.pose.rotation, &truth.pose.rotation),
            shape_error: (aligned.state.shape.dims() - truth.shape.dims()).norm(),
            corner_rmse: aligned.corner_rmse,
            accepted: rec.report.as_ref().map(|r| r.accepted),
            label_rmse: rms(&label_err),
        });
    }
    Ok(EvalSummary {
        ape: mean(frames.iter().map(|f| f.translation_error)),
        are: mean(frames.iter().map(|f| f.rotation_error)),
        ase: mean(frames.iter().map(|f| f.shape_error)),
        rmse_cdf: empirical_cdf(&certified),
        rmse_cdf_all_predicted: empirical_cdf(&predicted),
        frames,
    })
}

fn observation_errors(
    obs: &FrameObservation,
    truth: &BoxState,
    rig: &StereoRig,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(obs.len());
    for view in crate::View::BOTH {
        for kp in obs.view(view) {
            out.push((kp.pixel - truth.project_corner(rig, view, kp.corner_index)?).norm());
        }
    }
    Ok(out)
}

/// Pseudo ground truth for frames without a true pose: the solver's answer
/// on hand-labeled keypoints.
pub fn truth_from_keypoints(
    labeled: &FrameObservation,
    rig: &StereoRig,
    solver: &SolverConfig,
) -> Result<BoxState> {
    let init = initialize(labeled, rig, solver)?;
    Ok(solve(labeled, rig, solver, Some(init))?.state)
}
