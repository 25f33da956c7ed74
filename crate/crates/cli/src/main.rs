//! `occwarp` — occlusion-aware reconstruction pipeline on the command line.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags or arguments),
//! 2 on data errors (missing or ill-formed inputs, invalid parameter
//! values). Every subcommand prints a JSON report to standard output and
//! writes its artifacts under `--out-dir`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use occwarp::grid::Mask;
use occwarp::io;
use occwarp::loss::NormalizationMode;
use occwarp::metrics::{ate, depth_metrics, flow_metrics};
use occwarp::occlusion::occlusion_mask;
use occwarp::synth::random_suite;
use occwarp::warp::warp_with_flow;
use occwarp::{Error, Result};
use occwarp_cli::config::RunConfig;
use occwarp_cli::pipeline::{
    analyze, gradcheck_sweep, run_demo, write_analysis_artifacts, write_mask_set, write_scene_pair,
    FrameInputs, MaskSummary,
};
use serde::Serialize;

fn parse_norm(s: &str) -> std::result::Result<NormalizationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "occwarp",
    version,
    about = "Occlusion-aware image reconstruction: synthetic scenes, occlusion masks, warping, losses, gradient checks, and evaluation metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render seeded synthetic scene pairs with reference depth, flow, and
    /// occlusion.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// How many pairs to render (>1 writes pair_NNN subdirectories).
        #[arg(long, default_value_t = 1)]
        pairs: usize,
    },
    /// Compute the edge/overlap/blank occlusion cues for a frame pair.
    Masks {
        #[arg(long)]
        depth_t: PathBuf,
        #[arg(long)]
        depth_s: PathBuf,
        /// Camera JSON: intrinsics plus the pose mapping frame-t points
        /// into frame s.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mutual masking rounds.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Warp an image by a dense flow field.
    Warp {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full loss pipeline on a frame pair and report every term.
    Losses {
        #[arg(long)]
        image_t: PathBuf,
        #[arg(long)]
        image_s: PathBuf,
        #[arg(long)]
        depth_t: PathBuf,
        #[arg(long)]
        depth_s: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Flow-branch input; defaults to the rigid flow from depth and
        /// pose.
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_parser = parse_norm)]
        norm: Option<NormalizationMode>,
    },
    /// Check the analytic gradients against central finite differences on
    /// random instances.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Depth error and accuracy metrics between two PFM depth maps.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// PGM validity mask; defaults to every pixel.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Upper depth clamp.
        #[arg(long, default_value_t = 80.0)]
        cap: f64,
        /// Skip the median ground-truth/prediction scale alignment.
        #[arg(long)]
        no_median_scale: bool,
    },
    /// Endpoint error and outlier fraction between two .flo flow fields.
    EvalFlow {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
    },
    /// Absolute trajectory error between two pose-per-line text files.
    EvalPose {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// End-to-end synthetic run: scene, masks, reconstruction, error maps,
    /// and a JSON of all loss terms.
    Demo {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_parser = parse_norm)]
        norm: Option<NormalizationMode>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn print_report<T: Serialize>(report: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(report).expect("reports serialize")
    );
}

fn read_valid_mask(path: Option<&Path>, height: usize, width: usize) -> Result<Mask> {
    match path {
        Some(path) => io::read_mask_pgm(path),
        None => Mask::filled(height, width, 1),
    }
}

#[derive(Serialize)]
struct SynthReport {
    seed: u64,
    pairs: usize,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct MasksReport {
    #[serde(flatten)]
    summary: MaskSummary,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct WarpReport {
    height: usize,
    width: usize,
    resampled: usize,
    out_of_bounds: usize,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct LossesReport {
    config: RunConfig,
    masks: MaskSummary,
    losses: occwarp_cli::pipeline::LossReport,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct PoseReport {
    ate: f64,
    poses: usize,
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out_dir,
            config,
            seed,
            pairs,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.apply_overrides(seed, None, None, None)?;
            let suite = random_suite(cfg.seed, pairs)?;
            let mut artifacts = Vec::new();
            if pairs == 1 {
                artifacts.extend(write_scene_pair(&suite[0], &out_dir)?);
            } else {
                for (i, pair) in suite.iter().enumerate() {
                    let sub = format!("pair_{i:03}");
                    for name in write_scene_pair(pair, &out_dir.join(&sub))? {
                        artifacts.push(format!("{sub}/{name}"));
                    }
                }
            }
            artifacts.sort();
            print_report(&SynthReport {
                seed: cfg.seed,
                pairs,
                artifacts,
            });
        }
        Command::Masks {
            depth_t,
            depth_s,
            camera,
            out_dir,
            config,
            iters,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.apply_overrides(None, iters, None, None)?;
            let depth_t = io::read_depth_pfm(&depth_t)?;
            let depth_s = io::read_depth_pfm(&depth_s)?;
            let (k, pose) = io::read_camera_json(&camera)?;
            let bundle = occlusion_mask(&depth_t, &depth_s, &pose, &k, cfg.iterations)?;
            let mut artifacts = write_mask_set(&bundle, &out_dir)?;
            artifacts.sort();
            print_report(&MasksReport {
                summary: MaskSummary::of(&bundle),
                artifacts,
            });
        }
        Command::Warp {
            image,
            flow,
            out_dir,
        } => {
            let image = io::read_image(&image)?;
            let flow = io::read_flo(&flow)?;
            let (warped, valid) = warp_with_flow(&image, &flow)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            io::write_image_ppm(out_dir.join("warped.ppm"), &warped)?;
            io::write_mask_pgm(out_dir.join("valid.pgm"), &valid)?;
            print_report(&WarpReport {
                height: warped.height(),
                width: warped.width(),
                resampled: valid.count_ones(),
                out_of_bounds: valid.count_zeros(),
                artifacts: vec!["valid.pgm".into(), "warped.ppm".into()],
            });
        }
        Command::Losses {
            image_t,
            image_s,
            depth_t,
            depth_s,
            camera,
            flow,
            out_dir,
            config,
            iters,
            levels,
            norm,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.apply_overrides(None, iters, levels, norm)?;
            let img_t = io::read_image(&image_t)?;
            let img_s = io::read_image(&image_s)?;
            let depth_t = io::read_depth_pfm(&depth_t)?;
            let depth_s = io::read_depth_pfm(&depth_s)?;
            let (k, pose_t_to_s) = io::read_camera_json(&camera)?;
            let mut inputs = FrameInputs {
                img_t,
                img_s,
                depth_t,
                depth_s,
                k,
                pose_t_to_s,
                // Placeholder until the branch input is settled below.
                flow: occwarp::grid::FlowField::zeros(2, 2)?,
            };
            inputs.flow = match flow {
                Some(path) => io::read_flo(&path)?,
                None => inputs.rigid_flow(),
            };
            let analysis = analyze(&inputs, &cfg)?;
            let mut artifacts = write_mask_set(&analysis.bundle, &out_dir)?;
            artifacts.extend(write_analysis_artifacts(&inputs, &analysis, &out_dir)?);
            artifacts.sort();
            print_report(&LossesReport {
                config: cfg,
                masks: MaskSummary::of(&analysis.bundle),
                losses: analysis.report,
                artifacts,
            });
        }
        Command::Gradcheck {
            size,
            trials,
            config,
            seed,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.apply_overrides(seed, None, None, None)?;
            let summary = gradcheck_sweep(size, trials, cfg.seed, 1e-4)?;
            print_report(&summary);
        }
        Command::EvalDepth {
            pred,
            gt,
            valid,
            cap,
            no_median_scale,
        } => {
            let pred = io::read_depth_pfm(&pred)?;
            let gt = io::read_depth_pfm(&gt)?;
            let valid = read_valid_mask(valid.as_deref(), gt.height(), gt.width())?;
            let metrics = depth_metrics(&pred, &gt, &valid, cap, !no_median_scale)?;
            print_report(&metrics);
        }
        Command::EvalFlow { pred, gt, valid } => {
            let pred = io::read_flo(&pred)?;
            let gt = io::read_flo(&gt)?;
            let valid = read_valid_mask(valid.as_deref(), gt.height(), gt.width())?;
            let metrics = flow_metrics(&pred, &gt, &valid)?;
            print_report(&metrics);
        }
        Command::EvalPose { pred, gt } => {
            let pred = io::read_trajectory(&pred)?;
            let gt = io::read_trajectory(&gt)?;
            let error = ate(&gt, &pred)?;
            print_report(&PoseReport {
                ate: error,
                poses: gt.len(),
            });
        }
        Command::Demo {
            out_dir,
            config,
            seed,
            iters,
            levels,
            norm,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            cfg.apply_overrides(seed, iters, levels, norm)?;
            let report = run_demo(&cfg, &out_dir)?;
            print_report(&report);
        }
    }
    Ok(())
}
