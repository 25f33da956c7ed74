//! Composition of the library's public operations into the subcommand
//! pipelines: frame-pair analysis (masks, reconstruction, every loss term
//! across the pyramid), the synthetic demo, and the gradient-check sweep.

use std::fs;
use std::path::Path;

use occwarp::camera::{project_depth, rigid_flow, Intrinsics, Pose, Z_EPS};
use occwarp::grid::{DepthMap, DisparityMap, FlowField, Image, Mask};
use occwarp::io;
use occwarp::loss::grad::{
    flow_gradcheck_mask, gradcheck_disparity, gradcheck_flow, projection_gradcheck_mask,
    GradCheckReport,
};
use occwarp::loss::{
    consistency_loss, recon_loss_depth_pose, recon_loss_flow, robust_penalty,
    smoothness_depth_pose, smoothness_flow, total_depth_pose_loss, total_flow_loss,
    DepthPoseLossParts, ErrorMap, FlowScaleParts, RobustLossConfig,
};
use occwarp::nalgebra::Vector3;
use occwarp::occlusion::{occlusion_mask, MaskBundle};
use occwarp::synth::{gt_flow, gt_occlusion, random_suite, render, ScenePair};
use occwarp::warp::{
    bilinear_sample, downsample_flow_half, downsample_mask_min, pyramid, warp_with_flow,
};
use occwarp::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

/// Everything the loss pipeline consumes for one frame pair. `pose_t_to_s`
/// maps reference-frame (t) camera points into the other frame (s); `flow`
/// is the flow-branch input, typically an estimate or the reference flow.
pub struct FrameInputs {
    pub img_t: Image,
    pub img_s: Image,
    pub depth_t: DepthMap,
    pub depth_s: DepthMap,
    pub k: Intrinsics,
    pub pose_t_to_s: Pose,
    pub flow: FlowField,
}

impl FrameInputs {
    /// The rigid flow induced by the depth map and relative pose — the
    /// default flow-branch input when no estimate is supplied.
    pub fn rigid_flow(&self) -> FlowField {
        rigid_flow(&self.depth_t, &self.pose_t_to_s, &self.k).0
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CueSummary {
    /// Pixels the cue masks out.
    pub masked: usize,
    pub fraction: f64,
}

impl CueSummary {
    fn of(mask: &Mask) -> Self {
        let masked = mask.count_zeros();
        Self {
            masked,
            fraction: masked as f64 / (mask.height() * mask.width()) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaskSummary {
    pub iterations_used: usize,
    pub edge: CueSummary,
    pub overlap: CueSummary,
    pub blank: CueSummary,
    pub combined: CueSummary,
}

impl MaskSummary {
    pub fn of(bundle: &MaskBundle) -> Self {
        Self {
            iterations_used: bundle.iterations_used,
            edge: CueSummary::of(&bundle.edge),
            overlap: CueSummary::of(&bundle.overlap),
            blank: CueSummary::of(&bundle.blank),
            combined: CueSummary::of(&bundle.combined),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DepthPoseReport {
    pub recon: f64,
    pub smooth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowLevelReport {
    pub level: usize,
    pub recon: f64,
    pub consistency: f64,
    pub smooth: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub depth_pose: DepthPoseReport,
    pub flow_levels: Vec<FlowLevelReport>,
    pub flow_total: f64,
}

/// Full analysis of one frame pair: the occlusion cues, the depth/pose
/// reconstruction with its error map and below-mean mask, and every loss
/// term.
pub struct PairAnalysis {
    pub bundle: MaskBundle,
    pub reconstruction: Image,
    pub sample_mask: Mask,
    pub error_map: ErrorMap,
    pub below_mean: Mask,
    pub report: LossReport,
}

/// Run the whole loss pipeline on one frame pair.
///
/// The depth/pose branch runs at full resolution. The flow branch runs on a
/// mean-pooled image pyramid; flows are pooled and halved per level, the
/// full-resolution occlusion cues are min-pooled (a masked pixel stays
/// masked at every scale), and the below-mean mask is recomputed per level
/// from that level's error map.
pub fn analyze(inputs: &FrameInputs, cfg: &RunConfig) -> Result<PairAnalysis> {
    cfg.validate()?;

    let bundle = occlusion_mask(
        &inputs.depth_t,
        &inputs.depth_s,
        &inputs.pose_t_to_s,
        &inputs.k,
        cfg.iterations,
    )?;
    let proj = project_depth(&inputs.depth_t, &inputs.pose_t_to_s, &inputs.k, Z_EPS);
    let (reconstruction, sample_mask) = bilinear_sample(&inputs.img_s, &proj)?;
    let occ = bundle.combined.product(&sample_mask)?;
    let error_map = robust_penalty(&inputs.img_t, &reconstruction, &cfg.robust)?;
    let (recon_dp, below_mean) =
        recon_loss_depth_pose(&inputs.img_t, &reconstruction, &occ, &cfg.robust)?;
    let disparity = inputs.depth_t.reciprocal();
    let smooth_dp = smoothness_depth_pose(&disparity, &inputs.img_t, cfg.norm)?;
    let dp_parts = DepthPoseLossParts {
        recon: recon_dp,
        smooth: smooth_dp,
    };
    let dp_total = total_depth_pose_loss(&dp_parts, &cfg.weights)?;

    let ts = pyramid(&inputs.img_t, cfg.levels)?;
    let ss = pyramid(&inputs.img_s, cfg.levels)?;
    let mut flow_l = inputs.flow.clone();
    let mut rigid_l = inputs.rigid_flow();
    let mut occ_l = bundle.combined.clone();
    let mut edge_l = bundle.edge.clone();
    let mut blank_l = bundle.blank.clone();
    let mut parts = Vec::with_capacity(cfg.levels);
    let mut flow_levels = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        if level > 0 {
            flow_l = downsample_flow_half(&flow_l)?;
            rigid_l = downsample_flow_half(&rigid_l)?;
            occ_l = downsample_mask_min(&occ_l)?;
            edge_l = downsample_mask_min(&edge_l)?;
            blank_l = downsample_mask_min(&blank_l)?;
        }
        let (x_hat, samp) = warp_with_flow(&ss[level], &flow_l)?;
        let occ_f = occ_l.product(&samp)?;
        let (recon, lm_f) = recon_loss_flow(&ts[level], &x_hat, &occ_f, &cfg.robust)?;
        let consistency =
            consistency_loss(&rigid_l, &flow_l, &edge_l, &blank_l, &lm_f, &cfg.robust)?;
        let smooth = smoothness_flow(&flow_l, &ts[level])?;
        let part = FlowScaleParts {
            recon,
            consistency,
            smooth,
        };
        let total = total_flow_loss(std::slice::from_ref(&part), &cfg.weights)?;
        parts.push(part);
        flow_levels.push(FlowLevelReport {
            level,
            recon,
            consistency,
            smooth,
            total,
        });
    }
    let flow_total = total_flow_loss(&parts, &cfg.weights)?;

    Ok(PairAnalysis {
        bundle,
        reconstruction,
        sample_mask,
        error_map,
        below_mean,
        report: LossReport {
            depth_pose: DepthPoseReport {
                recon: dp_parts.recon,
                smooth: dp_parts.smooth,
                total: dp_total,
            },
            flow_levels,
            flow_total,
        },
    })
}

// ── artifact writing ─────────────────────────────────────────────────────

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Render one synthetic pair into `dir`: both views, both depths, the
/// reference flow with its validity mask, the ray-cast occlusion mask, and
/// the camera file (intrinsics plus the t-to-s pose). Returns the file
/// names written.
pub fn write_scene_pair(pair: &ScenePair, dir: &Path) -> Result<Vec<String>> {
    ensure_dir(dir)?;
    let (img_t, depth_t) = render(&pair.scene, &pair.cam_t);
    let (img_s, depth_s) = render(&pair.scene, &pair.cam_s);
    let (flow, flow_valid) = gt_flow(&pair.scene, &pair.cam_t, &pair.cam_s);
    let occluded = gt_occlusion(&pair.scene, &pair.cam_t, &pair.cam_s);

    io::write_image_ppm(dir.join("view_t.ppm"), &img_t)?;
    io::write_image_ppm(dir.join("view_s.ppm"), &img_s)?;
    io::write_pfm(dir.join("depth_t.pfm"), depth_t.as_grid())?;
    io::write_pfm(dir.join("depth_s.pfm"), depth_s.as_grid())?;
    io::write_flo(dir.join("gt_flow.flo"), &flow)?;
    io::write_mask_pgm(dir.join("gt_flow_valid.pgm"), &flow_valid)?;
    io::write_mask_pgm(dir.join("gt_occlusion.pgm"), &occluded)?;
    io::write_camera_json(dir.join("camera.json"), &pair.cam_t.k, &pair.pose_t_to_s())?;
    Ok(vec![
        "camera.json".into(),
        "depth_s.pfm".into(),
        "depth_t.pfm".into(),
        "gt_flow.flo".into(),
        "gt_flow_valid.pgm".into(),
        "gt_occlusion.pgm".into(),
        "view_s.ppm".into(),
        "view_t.ppm".into(),
    ])
}

/// Write the four occlusion cues as PGM masks. Returns the file names.
pub fn write_mask_set(bundle: &MaskBundle, dir: &Path) -> Result<Vec<String>> {
    ensure_dir(dir)?;
    io::write_mask_pgm(dir.join("edge.pgm"), &bundle.edge)?;
    io::write_mask_pgm(dir.join("overlap.pgm"), &bundle.overlap)?;
    io::write_mask_pgm(dir.join("blank.pgm"), &bundle.blank)?;
    io::write_mask_pgm(dir.join("combined.pgm"), &bundle.combined)?;
    Ok(vec![
        "blank.pgm".into(),
        "combined.pgm".into(),
        "edge.pgm".into(),
        "overlap.pgm".into(),
    ])
}

/// Write the analysis artifacts: the reconstruction, the absolute
/// difference image, the per-pixel robust error map, and the below-mean
/// mask. Returns the file names.
pub fn write_analysis_artifacts(
    inputs: &FrameInputs,
    analysis: &PairAnalysis,
    dir: &Path,
) -> Result<Vec<String>> {
    ensure_dir(dir)?;
    let (h, w) = (inputs.img_t.height(), inputs.img_t.width());
    let difference = Image::from_fn(h, w, inputs.img_t.channels(), |r, c, ch| {
        (inputs.img_t.at(r, c, ch) - analysis.reconstruction.at(r, c, ch)).abs()
    })?;
    io::write_image_ppm(dir.join("warped.ppm"), &analysis.reconstruction)?;
    io::write_image_ppm(dir.join("difference.ppm"), &difference)?;
    io::write_pfm(dir.join("error_map.pfm"), analysis.error_map.as_grid())?;
    io::write_mask_pgm(dir.join("less_than_mean.pgm"), &analysis.below_mean)?;
    Ok(vec![
        "difference.ppm".into(),
        "error_map.pfm".into(),
        "less_than_mean.pgm".into(),
        "warped.ppm".into(),
    ])
}

// ── demo ─────────────────────────────────────────────────────────────────

#[derive(Serialize)]
pub struct DemoReport {
    pub config: RunConfig,
    pub masks: MaskSummary,
    pub losses: LossReport,
    pub artifacts: Vec<String>,
}

/// Sample one synthetic pair from the seeded suite, run the full pipeline
/// with the reference flow as the flow-branch input, and write every
/// artifact (scene files, masks, reconstruction, error maps, loss JSON)
/// into `dir`.
pub fn run_demo(cfg: &RunConfig, dir: &Path) -> Result<DemoReport> {
    cfg.validate()?;
    let pair = random_suite(cfg.seed, 1)?
        .into_iter()
        .next()
        .expect("a one-pair suite");
    let mut artifacts = write_scene_pair(&pair, dir)?;

    let (img_t, depth_t) = render(&pair.scene, &pair.cam_t);
    let (img_s, depth_s) = render(&pair.scene, &pair.cam_s);
    let (flow, _) = gt_flow(&pair.scene, &pair.cam_t, &pair.cam_s);
    let inputs = FrameInputs {
        img_t,
        img_s,
        depth_t,
        depth_s,
        k: pair.cam_t.k,
        pose_t_to_s: pair.pose_t_to_s(),
        flow,
    };
    let analysis = analyze(&inputs, cfg)?;
    artifacts.extend(write_mask_set(&analysis.bundle, dir)?);
    artifacts.extend(write_analysis_artifacts(&inputs, &analysis, dir)?);

    let report = DemoReport {
        config: *cfg,
        masks: MaskSummary::of(&analysis.bundle),
        losses: analysis.report.clone(),
        artifacts: Vec::new(),
    };
    let losses_path = dir.join("losses.json");
    let text = serde_json::to_string_pretty(&report.losses).expect("report serializes") + "\n";
    fs::write(&losses_path, text).map_err(|e| Error::io(&losses_path, e))?;
    artifacts.push("losses.json".into());
    artifacts.sort();

    Ok(DemoReport {
        artifacts,
        ..report
    })
}

// ── gradient-check sweep ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AggregateGradReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub compared: usize,
}

impl AggregateGradReport {
    fn new() -> Self {
        Self {
            max_rel: 0.0,
            mean_rel: 0.0,
            compared: 0,
        }
    }

    fn add(&mut self, report: &GradCheckReport) {
        self.max_rel = self.max_rel.max(report.max_rel);
        // Weighted running mean over all compared entries.
        let total = self.compared + report.compared;
        if total > 0 {
            self.mean_rel = (self.mean_rel * self.compared as f64
                + report.mean_rel * report.compared as f64)
                / total as f64;
        }
        self.compared = total;
    }
}

#[derive(Serialize)]
pub struct GradcheckSummary {
    pub size: usize,
    pub trials: usize,
    pub step: f64,
    pub flow: AggregateGradReport,
    pub disparity: AggregateGradReport,
}

/// Compare both analytic gradient operators against central finite
/// differences on `trials` random instances of `size` x `size`. Flow
/// displacements and pose-projected positions are kept away from the
/// bilinear kernel's grid lines, where the sampler is not differentiable.
pub fn gradcheck_sweep(
    size: usize,
    trials: usize,
    seed: u64,
    step: f64,
) -> Result<GradcheckSummary> {
    if size < 8 {
        return Err(Error::param(format!(
            "gradient checks need at least 8x8 grids, got {size}"
        )));
    }
    if trials == 0 {
        return Err(Error::param("trials must be at least 1"));
    }
    // The chain rule under test is the same for any Charbonnier radius, but
    // the finite-difference oracle's truncation error scales with the loss's
    // third derivative (~ step^2 / eps^2). A wider radius keeps that noise
    // two orders of magnitude below the comparison tolerance at the default
    // step without weakening the check.
    let cfg = RobustLossConfig {
        eps: 0.1,
        ..RobustLossConfig::charbonnier_only()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow_agg = AggregateGradReport::new();
    let mut disp_agg = AggregateGradReport::new();

    for _ in 0..trials {
        let x_t = Image::from_fn(size, size, 3, |_, _, _| rng.gen_range(0.0..1.0))?;
        let x_s = Image::from_fn(size, size, 3, |_, _, _| rng.gen_range(0.0..1.0))?;

        // Flow pathway: displacements with |u|, |v| in [0.1, 0.4].
        let flow = FlowField::from_fn(size, size, |_, _| {
            let comp = |rng: &mut ChaCha8Rng| {
                let m: f64 = rng.gen_range(0.1..0.4);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            };
            (comp(&mut rng), comp(&mut rng))
        })?;
        let mask = flow_gradcheck_mask(&flow, 0.02, 0.5);
        flow_agg.add(&gradcheck_flow(&x_t, &x_s, &flow, &mask, &cfg, step)?);

        // Depth/pose pathway: gentle rotation plus a small translation over
        // mid-range disparities.
        let disparity = DisparityMap::from_fn(size, size, |_, _| rng.gen_range(0.3..0.7))?;
        let k = Intrinsics::new(
            1.25 * size as f64,
            1.25 * size as f64,
            (size - 1) as f64 / 2.0,
            (size - 1) as f64 / 2.0,
        )?;
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 0.1 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            axis.normalize()
        };
        let pose = Pose::from_axis_angle(
            axis,
            rng.gen_range(0.005..0.02),
            Vector3::new(
                rng.gen_range(-0.06..0.06),
                rng.gen_range(-0.04..0.04),
                rng.gen_range(0.0..0.05),
            ),
        )?;
        let proj = project_depth(&disparity.reciprocal(), &pose, &k, Z_EPS);
        let mask = projection_gradcheck_mask(&proj, 0.02, 0.5);
        disp_agg.add(&gradcheck_disparity(
            &x_t, &x_s, &disparity, &pose, &k, &mask, &cfg, step,
        )?);
    }

    Ok(GradcheckSummary {
        size,
        trials,
        step,
        flow: flow_agg,
        disparity: disp_agg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo_inputs(seed: u64) -> FrameInputs {
        let pair = random_suite(seed, 1).unwrap().into_iter().next().unwrap();
        let (img_t, depth_t) = render(&pair.scene, &pair.cam_t);
        let (img_s, depth_s) = render(&pair.scene, &pair.cam_s);
        let (flow, _) = gt_flow(&pair.scene, &pair.cam_t, &pair.cam_s);
        FrameInputs {
            img_t,
            img_s,
            depth_t,
            depth_s,
            k: pair.cam_t.k,
            pose_t_to_s: pair.pose_t_to_s(),
            flow,
        }
    }

    #[test]
    fn multi_scale_total_is_the_sum_of_per_level_totals() {
        let cfg = RunConfig::default();
        let analysis = analyze(&demo_inputs(11), &cfg).unwrap();
        assert_eq!(analysis.report.flow_levels.len(), cfg.levels);
        let sum: f64 = analysis.report.flow_levels.iter().map(|l| l.total).sum();
        assert_eq!(analysis.report.flow_total, sum);
        for (i, level) in analysis.report.flow_levels.iter().enumerate() {
            assert_eq!(level.level, i);
        }
    }

    #[test]
    fn depth_pose_total_recombines_from_parts() {
        let cfg = RunConfig::default();
        let analysis = analyze(&demo_inputs(12), &cfg).unwrap();
        let dp = &analysis.report.depth_pose;
        assert_abs_diff_eq!(
            dp.total,
            cfg.weights.recon_depth_pose * dp.recon + cfg.weights.smooth_depth_pose * dp.smooth,
            epsilon = 1e-12
        );
    }

    #[test]
    fn analysis_is_deterministic() {
        let cfg = RunConfig::default();
        let a = analyze(&demo_inputs(13), &cfg).unwrap();
        let b = analyze(&demo_inputs(13), &cfg).unwrap();
        assert_eq!(a.report.flow_total, b.report.flow_total);
        assert_eq!(a.report.depth_pose.total, b.report.depth_pose.total);
        assert_eq!(a.below_mean.bits(), b.below_mean.bits());
    }

    #[test]
    fn gradcheck_sweep_stays_within_tolerance() {
        let summary = gradcheck_sweep(16, 2, 99, 1e-4).unwrap();
        assert!(summary.flow.max_rel < 1e-4);
        assert!(summary.disparity.max_rel < 1e-4);
        assert!(summary.flow.compared > 0 && summary.disparity.compared > 0);
    }

    #[test]
    fn gradcheck_sweep_rejects_degenerate_requests() {
        assert!(gradcheck_sweep(4, 1, 0, 1e-4).is_err());
        assert!(gradcheck_sweep(16, 0, 0, 1e-4).is_err());
    }
}
