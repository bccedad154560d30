//! Binned comparisons of certificate scores against ground-truth keypoint
//! error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FrameRecord;
use crate::error::{Error, Result};
use crate::estimator::BoxState;
use crate::geometry::StereoRig;
use crate::View;

/// Pixel-error differences below this count as ties in the residual table.
const TIE_PX: f64 = 1e-6;

/// `count` equal-width bins over `[lo, hi)`. Values outside are clamped into
/// the first or last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl BinSpec {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi && count > 0) {
            return Err(Error::invalid("bins", format!("[{lo}, {hi}) x {count}")));
        }
        Ok(BinSpec { lo, hi, count })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn index(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.width()).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(self.count - 1)
        }
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    /// Bins over the smaller of the two per-view IoUs.
    pub iou: BinSpec,
    /// Bins over keypoint residual norms, in pixels.
    pub residual: BinSpec,
    /// Bins over rectified y-disagreement, in pixels.
    pub ydiff: BinSpec,
    /// Bins with fewer samples are listed but left out of the correlations
    /// and the crossover scan.
    pub min_count: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Binning {
            iou: BinSpec {
                lo: 0.0,
                hi: 1.0,
                count: 20,
            },
            residual: BinSpec {
                lo: 0.0,
                hi: 120.0,
                count: 24,
            },
            ydiff: BinSpec {
                lo: 0.0,
                hi: 80.0,
                count: 16,
            },
            min_count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouBinRow {
    pub lo: f64,
    pub hi: f64,
    pub frames: usize,
    /// Mean over frames of the RMS pixel error of their would-be labels.
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBinRow {
    pub lo: f64,
    pub hi: f64,
    pub keypoints: usize,
    /// Detection closer to the true projection than the reprojection.
    pub predicted_better: usize,
    pub reprojected_better: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpipolarBinRow {
    pub lo: f64,
    pub hi: f64,
    pub pairs: usize,
    /// Mean over stereo pairs of the RMS error of the two chosen pixels.
    pub mean_rmse: f64,
}

/// A bin edge where the majority choice between detection and reprojection
/// changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub residual: f64,
    /// True when detections win below the edge and reprojections above.
    pub predicted_to_reprojected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub binning: Binning,
    pub iou: Vec<IouBinRow>,
    pub residual: Vec<ResidualBinRow>,
    pub epipolar: Vec<EpipolarBinRow>,
    /// Rank correlation of IoU bin center against mean RMSE.
    pub spearman_iou: f64,
    /// Rank correlation of y-difference bin center against mean RMSE.
    pub spearman_epipolar: f64,
    pub crossovers: Vec<Crossover>,
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side has fewer than two distinct values.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn center(lo: f64, hi: f64) -> f64 {
    (lo + hi) / 2.0
}

/// Builds the three certificate-versus-error tables from certified records.
/// Records without a report are ignored; a certified record whose truth is
/// missing is an error.
pub fn certificate_correlation_report(
    records: &[FrameRecord],
    truths: &BTreeMap<String, BoxState>,
    rig: &StereoRig,
    binning: &Binning,
) -> Result<CorrelationReport> {
    let mut iou_acc = vec![(0usize, 0.0f64); binning.iou.count];
    let mut res_acc = vec![(0usize, 0usize, 0usize); binning.residual.count];
    let mut epi_acc = vec![(0usize, 0.0f64); binning.ydiff.count];

    for rec in records {
        let Some(report) = &rec.report else { continue };
        let truth = truths
            .get(&rec.frame_id)
            .ok_or_else(|| Error::MissingTruth(rec.frame_id.clone()))?;
        let gt = |view: View, corner: usize| truth.project_corner(rig, view, corner);

        let candidates = report.candidate_labels();
        let errs = super::label_errors(&candidates, truth, rig)?;
        if !errs.is_empty() {
            let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
            let slot = &mut iou_acc[binning.iou.index(report.min_iou())];
            slot.0 += 1;
            slot.1 += rmse;
        }

        let mut chosen_err = BTreeMap::new();
        for k in &report.keypoints {
            let g = gt(k.view, k.corner_index)?;
            let pred = (nalgebra::Vector2::from(k.predicted) - g).norm();
            let reproj = (nalgebra::Vector2::from(k.reprojected) - g).norm();
            let slot = &mut res_acc[binning.residual.index(k.residual_norm)];
            slot.0 += 1;
            if pred + TIE_PX < reproj {
                slot.1 += 1;
            } else if reproj + TIE_PX < pred {
                slot.2 += 1;
            }
            chosen_err.insert(
                (k.view, k.corner_index),
                (nalgebra::Vector2::from(k.chosen) - g).norm(),
            );
        }

        for e in &report.epipolar {
            let (Some(l), Some(r)) = (
                chosen_err.get(&(View::Left, e.corner_index)),
                chosen_err.get(&(View::Right, e.corner_index)),
            ) else {
                continue;
            };
            let slot = &mut epi_acc[binning.ydiff.index(e.ydiff)];
            slot.0 += 1;
            slot.1 += ((l * l + r * r) / 2.0).sqrt();
        }
    }

    let iou: Vec<IouBinRow> = iou_acc
        .iter()
        .enumerate()
        .map(|(k, &(n, s))| {
            let (lo, hi) = binning.iou.edges(k);
            IouBinRow {
                lo,
                hi,
                frames: n,
                mean_rmse: if n > 0 { s / n as f64 } else { f64::NAN },
            }
        })
        .collect();
    let residual: Vec<ResidualBinRow> = res_acc
        .iter()
        .enumerate()
        .map(|(k, &(n, p, r))| {
            let (lo, hi) = binning.residual.edges(k);
            ResidualBinRow {
                lo,
                hi,
                keypoints: n,
                predicted_better: p,
                reprojected_better: r,
            }
        })
        .collect();
    let epipolar: Vec<EpipolarBinRow> = epi_acc
        .iter()
        .enumerate()
        .map(|(k, &(n, s))| {
            let (lo, hi) = binning.ydiff.edges(k);
            EpipolarBinRow {
                lo,
                hi,
                pairs: n,
                mean_rmse: if n > 0 { s / n as f64 } else { f64::NAN },
            }
        })
        .collect();

    let (xi, yi): (Vec<f64>, Vec<f64>) = iou
        .iter()
        .filter(|r| r.frames >= binning.min_count.max(1))
        .map(|r| (center(r.lo, r.hi), r.mean_rmse))
        .unzip();
    let (xe, ye): (Vec<f64>, Vec<f64>) = epipolar
        .iter()
        .filter(|r| r.pairs >= binning.min_count.max(1))
        .map(|r| (center(r.lo, r.hi), r.mean_rmse))
        .unzip();

    Ok(CorrelationReport {
        binning: *binning,
        spearman_iou: spearman(&xi, &yi),
        spearman_epipolar: spearman(&xe, &ye),
        crossovers: crossovers(&residual, binning.min_count),
        iou,
        residual,
        epipolar,
    })
}

/// Edges between consecutive nonempty residual bins whose majorities differ.
fn crossovers(rows: &[ResidualBinRow], min_count: usize) -> Vec<Crossover> {
    let majority: Vec<(f64, bool)> = rows
        .iter()
        .filter(|r| r.keypoints >= min_count && r.predicted_better != r.reprojected_better)
        .map(|r| (r.lo, r.predicted_better > r.reprojected_better))
        .collect();
    majority
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| Crossover {
            residual: w[1].0,
            predicted_to_reprojected: w[0].1,
        })
        .collect()
}

impl CorrelationReport {
    /// Mean RMSE over pairs in `ydiff` bins entirely below `split` and over
    /// bins entirely at or above it.
    pub fn epipolar_split(&self, split: f64) -> (f64, f64) {
        let pooled = |rows: Vec<&EpipolarBinRow>| {
            let n: usize = rows.iter().map(|r| r.pairs).sum();
            let s: f64 = rows
                .iter()
                .filter(|r| r.pairs > 0)
                .map(|r| r.mean_rmse * r.pairs as f64)
                .sum();
            if n > 0 {
                s / n as f64
            } else {
                f64::NAN
            }
        };
        (
            pooled(self.epipolar.iter().filter(|r| r.hi <= split).collect()),
            pooled(self.epipolar.iter().filter(|r| r.lo >= split).collect()),
        )
    }

    pub fn iou_csv(&self) -> String {
        let mut s = String::from("iou_lo,iou_hi,frames,mean_rmse_px\n");
        for r in &self.iou {
            let _ = writeln!(s, "{},{},{},{}", r.lo, r.hi, r.frames, r.mean_rmse);
        }
        s
    }

    pub fn residual_csv(&self) -> String {
        let mut s = String::from(
            "residual_lo_px,residual_hi_px,keypoints,predicted_better,reprojected_better\n",
        );
        for r in &self.residual {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.lo, r.hi, r.keypoints, r.predicted_better, r.reprojected_better
            );
        }
        s
    }

    pub fn epipolar_csv(&self) -> String {
        let mut s = String::from("ydiff_lo_px,ydiff_hi_px,pairs,mean_rmse_px\n");
        for r in &self.epipolar {
            let _ = writeln!(s, "{},{},{},{}", r.lo, r.hi, r.pairs, r.mean_rmse);
        }
        s
    }

    /// Writes `iou_vs_rmse.csv`, `residual_vs_choice.csv` and
    /// `epipolar_vs_rmse.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("iou_vs_rmse.csv", self.iou_csv()),
            ("residual_vs_choice.csv", self.residual_csv()),
            ("epipolar_vs_rmse.csv", self.epipolar_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
