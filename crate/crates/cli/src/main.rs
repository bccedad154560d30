use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use stereobox::certificates::CertificateThresholds;
use stereobox::pipeline::{
    certificate_correlation_report, certify_record, emit_pseudo_label_dataset, estimate_frame,
    evaluate, load_masks, load_truths, read_json, scan_detections, with_workers, write_json,
    write_synthetic_dataset, BatchFile, Binning, Calibration, FrameStatus, PromptFile, RunConfig,
};
use stereobox::sampling::{sample, ConvexPolygon, Strategy};
use stereobox::synthetic::SceneConfig;
use stereobox::{Error, View};

#[derive(Parser)]
#[command(
    name = "stereobox",
    version,
    about = "Stereo box fitting and certified pseudo-labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, detections and masks.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a box to every detection file.
    Estimate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the certificates on estimated frames.
    Certify {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Write the pseudo-label dataset from certified frames.
    PseudoLabel {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample segmentation prompts inside each projected box.
    SamplePrompts {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = PossibleValuesParser::new(["axis_aligned", "uniform_simplex", "adaptive_simplex"]))]
        strategy: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare estimates against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate certificate scores against ground-truth keypoint error.
    CertAnalysis {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding the default bins.
        #[arg(long)]
        binning: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth { config, count, out } => synth(&config, count, &out),
        Command::Estimate {
            detections,
            calib,
            config,
            out,
            workers,
        } => estimate(&detections, &calib, &config, &out, workers),
        Command::Certify {
            results,
            masks,
            thresholds,
            out,
            workers,
        } => certify(&results, &masks, &thresholds, &out, workers),
        Command::PseudoLabel { reports, out } => pseudo_label(&reports, &out),
        Command::SamplePrompts {
            results,
            strategy,
            n,
            seed,
            out,
        } => sample_prompts(&results, &strategy, n, seed, &out),
        Command::Eval {
            results,
            truth,
            out,
        } => eval(&results, &truth, &out),
        Command::CertAnalysis {
            reports,
            truth,
            out,
            binning,
        } => cert_analysis(&reports, &truth, &out, binning.as_deref()),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn synth(config: &Path, count: u64, out: &Path) -> CliResult {
    let cfg: SceneConfig = read_json(config)?;
    let ds = write_synthetic_dataset(&cfg, count, out)?;
    println!(
        "wrote {} frames: {} {} {}",
        ds.frames,
        ds.calibration.display(),
        ds.detections.display(),
        ds.masks.display()
    );
    Ok(())
}

fn estimate(
    detections: &Path,
    calib: &Path,
    config: &Path,
    out: &Path,
    workers: Option<usize>,
) -> CliResult {
    let mut cfg: RunConfig = read_json(config)?;
    if let Some(w) = workers {
        cfg.parallelism = w;
    }
    cfg.validate()?;
    let rig = Calibration::load(calib)?;
    let inputs = scan_detections(detections, cfg.eps_conf)?;
    let frames = with_workers(cfg.parallelism, || {
        inputs
            .par_iter()
            .map(|f| estimate_frame(f, &rig, &cfg.solver))
            .collect::<Vec<_>>()
    });
    let solved = frames
        .iter()
        .filter(|f| f.status == FrameStatus::Solved)
        .count();
    let batch = BatchFile {
        calibration: Calibration::from_rig(&rig),
        eps_conf: cfg.eps_conf,
        solver: cfg.solver,
        thresholds: None,
        frames,
    };
    write_json(out, &batch)?;
    println!("{solved}/{} frames solved", batch.frames.len());
    Ok(())
}

fn certify(
    results: &Path,
    masks: &Path,
    thresholds: &Path,
    out: &Path,
    workers: usize,
) -> CliResult {
    let mut batch = BatchFile::load(results)?;
    let thresholds: CertificateThresholds = read_json(thresholds)?;
    thresholds.validate()?;
    let rig = batch.rig()?;
    let frames = with_workers(workers, || {
        batch
            .frames
            .par_iter()
            .map(|rec| {
                if rec.status != FrameStatus::Solved {
                    return rec.clone();
                }
                certify_record(rec, &rig, load_masks(masks, &rec.frame_id), &thresholds)
            })
            .collect::<Vec<_>>()
    });
    batch.frames = frames;
    batch.thresholds = Some(thresholds);
    write_json(out, &batch)?;
    let accepted = batch.frames.iter().filter(|f| f.is_accepted()).count();
    println!("{accepted}/{} frames accepted", batch.frames.len());
    Ok(())
}

fn pseudo_label(reports: &Path, out: &Path) -> CliResult {
    let batch = BatchFile::load(reports)?;
    let thresholds = batch.thresholds.ok_or_else(|| Error::Parse {
        file: reports.to_path_buf(),
        path: "thresholds".into(),
        message: "not a certified batch; run certify first".into(),
    })?;
    let ds = emit_pseudo_label_dataset(&batch.frames, &thresholds, out)?;
    println!(
        "{} accepted frames, {} labels, {} rejected",
        ds.accepted.len(),
        ds.label_count(),
        ds.rejected.len()
    );
    Ok(())
}

fn sample_prompts(results: &Path, strategy: &str, n: usize, seed: u64, out: &Path) -> CliResult {
    let strategy: Strategy = strategy.parse().map_err(Failure::Usage)?;
    if n == 0 {
        return Err(Failure::Usage("--n must be positive".into()));
    }
    let batch = BatchFile::load(results)?;
    let rig = batch.rig()?;
    create_dir(out)?;
    let mut written = 0;
    for rec in &batch.frames {
        let Some(state) = rec.state() else { continue };
        let state = state?;
        for view in View::BOTH {
            let corners = state.project_corners(&rig, view)?;
            let batch =
                ConvexPolygon::hull_of(&corners).and_then(|poly| sample(&poly, strategy, n, seed));
            let points = match batch {
                Ok(b) => b.points,
                Err(e) => {
                    log::warn!("{} {view}: no prompts ({e})", rec.frame_id);
                    continue;
                }
            };
            let file = PromptFile {
                frame_id: rec.frame_id.clone(),
                view,
                strategy,
                seed,
                points: points.iter().map(|p| [p.x, p.y]).collect(),
            };
            write_json(&out.join(format!("{}_{view}.json", rec.frame_id)), &file)?;
            written += 1;
        }
    }
    println!("wrote {written} prompt files");
    Ok(())
}

fn eval(results: &Path, truth: &Path, out: &Path) -> CliResult {
    let batch = BatchFile::load(results)?;
    let rig = batch.rig()?;
    let truths = load_truths(truth)?;
    let summary = evaluate(&batch.frames, &truths, &rig)?;
    write_text(out, &summary.frames_csv())?;
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let cdf = out.with_file_name(format!("{stem}_cdf.csv"));
    write_text(&cdf, &summary.cdf_csv())?;
    println!(
        "frames {} APE {:.6} m ARE {:.6} rad ASE {:.6} m",
        summary.frames.len(),
        summary.ape,
        summary.are,
        summary.ase
    );
    Ok(())
}

fn cert_analysis(reports: &Path, truth: &Path, out: &Path, binning: Option<&Path>) -> CliResult {
    let batch = BatchFile::load(reports)?;
    let rig = batch.rig()?;
    let truths = load_truths(truth)?;
    let binning: Binning = match binning {
        Some(p) => read_json(p)?,
        None => Binning::default(),
    };
    let report = certificate_correlation_report(&batch.frames, &truths, &rig, &binning)?;
    report.write_csvs(out)?;
    println!(
        "spearman(iou, rmse) {:.3}  spearman(ydiff, rmse) {:.3}",
        report.spearman_iou, report.spearman_epipolar
    );
    for c in &report.crossovers {
        let dir = if c.predicted_to_reprojected {
            "detections -> reprojections"
        } else {
            "reprojections -> detections"
        };
        println!("crossover at {:.1} px ({dir})", c.residual);
    }
    Ok(())
}
