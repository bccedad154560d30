//! Certificates deciding which keypoints of a fitted box become pseudo-labels.
//!
//! Three checks are chained:
//!
//! 1. **2D**: the silhouette of the fitted box must overlap the observed
//!    segmentation mask with IoU above `1 - eps_2d`, in both views. A frame
//!    failing this emits nothing.
//! 2. **Residual**: a keypoint whose reprojection residual is below `eps_res`
//!    keeps its detected position; otherwise the reprojected corner replaces
//!    it.
//! 3. **Epipolar**: after rectification the chosen left and right pixels of a
//!    corner must agree in y within `eps_epi`. Corners seen in only one view
//!    skip this check.

mod mask;

pub use mask::{
    convex_hull, rasterize_convex, render_silhouettes, silhouette_mask, BitMask, ViewMasks,
};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{BoxState, FrameObservation, SolveResult};
use crate::geometry::{Rectifier, StereoRig, NUM_CORNERS};
use crate::View;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateThresholds {
    /// The 2D check passes when IoU exceeds `1 - eps_2d`.
    pub eps_2d: f64,
    /// Residual norm (pixels) below which a detection is trusted.
    pub eps_res: f64,
    /// Largest rectified y-disagreement (pixels) accepted for a stereo pair.
    pub eps_epi: f64,
}

impl Default for CertificateThresholds {
    fn default() -> Self {
        CertificateThresholds {
            eps_2d: 0.05,
            eps_res: 42.0,
            eps_epi: 20.0,
        }
    }
}

impl CertificateThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_2d > 0.0 && self.eps_2d < 1.0) {
            return Err(Error::invalid("thresholds", "eps_2d must be in (0, 1)"));
        }
        if !(self.eps_res > 0.0) || !(self.eps_epi > 0.0) {
            return Err(Error::invalid(
                "thresholds",
                "eps_res and eps_epi must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Predicted,
    Reprojected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub view: View,
    pub corner_index: usize,
    pub pixel: [f64; 2],
    pub source: LabelSource,
    /// False when the corner was seen in one view only, so no epipolar
    /// check could be made.
    pub stereo_checked: bool,
}

/// Residual-certificate outcome for one observed keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointCertificate {
    pub view: View,
    pub corner_index: usize,
    pub predicted: [f64; 2],
    pub reprojected: [f64; 2],
    pub residual_norm: f64,
    pub pass_res: bool,
    pub source: LabelSource,
    /// The pixel selected by the residual check (predicted or reprojected).
    pub chosen: [f64; 2],
}

/// Epipolar-certificate outcome for one corner observed in both views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpipolarCertificate {
    pub corner_index: usize,
    pub ydiff: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub frame_id: String,
    pub iou_left: f64,
    pub iou_right: f64,
    pub pass_2d: bool,
    pub keypoints: Vec<KeypointCertificate>,
    pub epipolar: Vec<EpipolarCertificate>,
    pub accepted: bool,
    pub labels: Vec<PseudoLabel>,
}

impl CertificateReport {
    pub fn min_iou(&self) -> f64 {
        self.iou_left.min(self.iou_right)
    }

    /// Largest rectified y-disagreement over stereo-observed corners.
    pub fn max_ydiff(&self) -> Option<f64> {
        self.epipolar.iter().map(|e| e.ydiff).reduce(f64::max)
    }

    /// Labels that would be emitted if the 2D check were ignored.
    pub fn candidate_labels(&self) -> Vec<PseudoLabel> {
        self.keypoints
            .iter()
            .filter_map(|k| {
                let epi = self
                    .epipolar
                    .iter()
                    .find(|e| e.corner_index == k.corner_index);
                match epi {
                    Some(e) if !e.pass => None,
                    _ => Some(PseudoLabel {
                        view: k.view,
                        corner_index: k.corner_index,
                        pixel: k.chosen,
                        source: k.source,
                        stereo_checked: epi.is_some(),
                    }),
                }
            })
            .collect()
    }
}

/// Intersection over union of two equally sized masks; two empty masks
/// count as identical.
pub fn iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += (x & y).count_ones() as usize;
        union += (x | y).count_ones() as usize;
    }
    if union == 0 {
        log::warn!("IoU of two empty masks");
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cert2d {
    pub pass: bool,
    pub iou_left: f64,
    pub iou_right: f64,
}

/// Whether both per-view IoUs clear `1 - eps_2d`.
pub fn passes_2d(iou_left: f64, iou_right: f64, eps_2d: f64) -> bool {
    iou_left.min(iou_right) > 1.0 - eps_2d
}

/// Compares the silhouettes of `est` with the observed masks in both views.
pub fn cert_2d(est: &BoxState, rig: &StereoRig, masks: &ViewMasks, eps_2d: f64) -> Result<Cert2d> {
    let rendered = render_silhouettes(est, rig)?;
    let iou_left = iou(&masks.left, &rendered.left)?;
    let iou_right = iou(&masks.right, &rendered.right)?;
    Ok(Cert2d {
        pass: passes_2d(iou_left, iou_right, eps_2d),
        iou_left,
        iou_right,
    })
}

/// Residual check: `(pass, source)` with `source` the pixel to label with.
pub fn cert_residual(residual: &Vector2<f64>, eps_res: f64) -> (bool, LabelSource) {
    if residual.norm() < eps_res {
        (true, LabelSource::Predicted)
    } else {
        (false, LabelSource::Reprojected)
    }
}

/// Epipolar check: `(pass, |y'_l - y'_r|)` after rectification.
pub fn cert_epipolar(
    kp_left: &Vector2<f64>,
    kp_right: &Vector2<f64>,
    rig: &StereoRig,
    eps_epi: f64,
) -> Result<(bool, f64)> {
    epipolar_with(&Rectifier::new(rig)?, kp_left, kp_right, eps_epi)
}

fn epipolar_with(
    rect: &Rectifier,
    kp_left: &Vector2<f64>,
    kp_right: &Vector2<f64>,
    eps_epi: f64,
) -> Result<(bool, f64)> {
    let (l, r) = rect.rectify_pair(kp_left, kp_right)?;
    let ydiff = (l.y - r.y).abs();
    Ok((ydiff < eps_epi, ydiff))
}

/// Runs all three certificates on a solved frame and collects the
/// pseudo-labels it admits.
///
/// The residual and epipolar outcomes are recorded for every keypoint even
/// when the 2D check fails, so that rejected frames can still be analyzed;
/// only `labels` is emptied.
pub fn select_pseudo_labels(
    est: &SolveResult,
    obs: &FrameObservation,
    rig: &StereoRig,
    masks: &ViewMasks,
    thresholds: &CertificateThresholds,
) -> Result<CertificateReport> {
    certify_state(&est.state, obs, rig, masks, thresholds)
}

/// [`select_pseudo_labels`] for a bare estimate, e.g. one read back from disk.
pub fn certify_state(
    state: &BoxState,
    obs: &FrameObservation,
    rig: &StereoRig,
    masks: &ViewMasks,
    thresholds: &CertificateThresholds,
) -> Result<CertificateReport> {
    let c2d = cert_2d(state, rig, masks, thresholds.eps_2d)?;
    let rectifier = Rectifier::new(rig)?;

    let mut keypoints = Vec::with_capacity(obs.len());
    for view in View::BOTH {
        for kp in obs.view(view) {
            let reprojected = state.project_corner(rig, view, kp.corner_index)?;
            let residual = reprojected - kp.pixel;
            let (pass_res, source) = cert_residual(&residual, thresholds.eps_res);
            let chosen = match source {
                LabelSource::Predicted => kp.pixel,
                LabelSource::Reprojected => reprojected,
            };
            keypoints.push(KeypointCertificate {
                view,
                corner_index: kp.corner_index,
                predicted: kp.pixel.into(),
                reprojected: reprojected.into(),
                residual_norm: residual.norm(),
                pass_res,
                source,
                chosen: chosen.into(),
            });
        }
    }

    let mut epipolar = Vec::new();
    for corner in 0..NUM_CORNERS {
        let find = |view| {
            keypoints
                .iter()
                .find(|k: &&KeypointCertificate| k.view == view && k.corner_index == corner)
        };
        if let (Some(l), Some(r)) = (find(View::Left), find(View::Right)) {
            let (pass, ydiff) = epipolar_with(
                &rectifier,
                &l.chosen.into(),
                &r.chosen.into(),
                thresholds.eps_epi,
            )?;
            epipolar.push(EpipolarCertificate {
                corner_index: corner,
                ydiff,
                pass,
            });
        }
    }

    let mut report = CertificateReport {
        frame_id: obs.frame_id.clone(),
        iou_left: c2d.iou_left,
        iou_right: c2d.iou_right,
        pass_2d: c2d.pass,
        keypoints,
        epipolar,
        accepted: c2d.pass,
        labels: Vec::new(),
    };
    if report.accepted {
        report.labels = report
            .candidate_labels()
            .into_iter()
            .filter(|l| rig.camera(l.view).contains(&l.pixel.into()))
            .collect();
    }
    Ok(report)
}
