//! Evaluation metrics: standard depth error/accuracy numbers, flow endpoint
//! error with the outlier fraction, and absolute trajectory error over short
//! pose snippets.

use nalgebra::Vector3;
use serde::Serialize;

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Mask};

/// Lower clamp applied to depths before error computation.
pub const DEPTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Fraction of pixels with max(pred/gt, gt/pred) < 1.25.
    pub a1: f64,
    /// Same with threshold 1.25^2.
    pub a2: f64,
    /// Same with threshold 1.25^3.
    pub a3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowMetrics {
    /// Mean endpoint error over valid pixels.
    pub epe: f64,
    /// Fraction of valid pixels with endpoint error > 3 px and > 5% of the
    /// ground-truth magnitude.
    pub f1: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Depth metrics over the valid pixels. With `median_scale` set, the
/// prediction is first multiplied by `median(gt) / median(pred)` (the usual
/// monocular scale alignment); both maps are then clamped to
/// `[DEPTH_FLOOR, cap]`.
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &Mask,
    cap: f64,
    median_scale: bool,
) -> Result<DepthMetrics> {
    check_shape(
        "depth metrics",
        pred.height(),
        pred.width(),
        gt.height(),
        gt.width(),
    )?;
    check_shape(
        "depth metrics",
        pred.height(),
        pred.width(),
        valid.height(),
        valid.width(),
    )?;
    if !(cap.is_finite() && cap > DEPTH_FLOOR) {
        return Err(Error::param(format!(
            "depth cap must be finite and exceed {DEPTH_FLOOR}, got {cap}"
        )));
    }

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for row in 0..pred.height() {
        for col in 0..pred.width() {
            if valid.is_set(row, col) {
                pairs.push((pred.at(row, col), gt.at(row, col)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyValidSet);
    }

    let scale = if median_scale {
        let mut p: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
        let mut g: Vec<f64> = pairs.iter().map(|(_, g)| *g).collect();
        p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median(&g) / median(&p)
    } else {
        1.0
    };

    let n = pairs.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut sq = 0.0;
    let mut sq_log = 0.0;
    let mut a1 = 0usize;
    let mut a2 = 0usize;
    let mut a3 = 0usize;
    for (p_raw, g_raw) in &pairs {
        let p = (p_raw * scale).clamp(DEPTH_FLOOR, cap);
        let g = g_raw.clamp(DEPTH_FLOOR, cap);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dlog = p.ln() - g.ln();
        sq_log += dlog * dlog;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            a1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            a2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            a3 += 1;
        }
    }
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        a1: a1 as f64 / n,
        a2: a2 as f64 / n,
        a3: a3 as f64 / n,
    })
}

/// Mean endpoint error and outlier fraction over valid pixels.
pub fn flow_metrics(pred: &FlowField, gt: &FlowField, valid: &Mask) -> Result<FlowMetrics> {
    check_shape(
        "flow metrics",
        pred.height(),
        pred.width(),
        gt.height(),
        gt.width(),
    )?;
    check_shape(
        "flow metrics",
        pred.height(),
        pred.width(),
        valid.height(),
        valid.width(),
    )?;

    let mut n = 0usize;
    let mut epe_sum = 0.0;
    let mut outliers = 0usize;
    for row in 0..pred.height() {
        for col in 0..pred.width() {
            if !valid.is_set(row, col) {
                continue;
            }
            n += 1;
            let du = pred.u_at(row, col) - gt.u_at(row, col);
            let dv = pred.v_at(row, col) - gt.v_at(row, col);
            let epe = (du * du + dv * dv).sqrt();
            epe_sum += epe;
            let gt_mag = (gt.u_at(row, col).powi(2) + gt.v_at(row, col).powi(2)).sqrt();
            if epe > 3.0 && epe > 0.05 * gt_mag {
                outliers += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyValidSet);
    }
    Ok(FlowMetrics {
        epe: epe_sum / n as f64,
        f1: outliers as f64 / n as f64,
    })
}

/// How the poses of a trajectory file map points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseConvention {
    /// Pose maps camera coordinates to world coordinates; the translation is
    /// the camera center.
    WorldFromCamera,
    /// The inverse mapping (extrinsics as commonly stored).
    CameraFromWorld,
}

/// Ordered camera poses of a short sequence, together with the convention
/// they are expressed in.
#[derive(Debug, Clone)]
pub struct TrajectorySnippet {
    poses: Vec<Pose>,
    convention: PoseConvention,
}

impl TrajectorySnippet {
    pub fn new(poses: Vec<Pose>, convention: PoseConvention) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::param("trajectory must hold at least one pose"));
        }
        Ok(Self { poses, convention })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn convention(&self) -> PoseConvention {
        self.convention
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Camera centers expressed in the first camera's frame (the snippet
    /// re-based to its first pose).
    fn rebased_centers(&self) -> Vec<Vector3<f64>> {
        let world_from_camera: Vec<Pose> = match self.convention {
            PoseConvention::WorldFromCamera => self.poses.clone(),
            PoseConvention::CameraFromWorld => self.poses.iter().map(Pose::inverse).collect(),
        };
        let base_inv = world_from_camera[0].inverse();
        world_from_camera
            .iter()
            .map(|p| *base_inv.compose(p).translation())
            .collect()
    }
}

/// Absolute trajectory error: both snippets are re-based to their first pose,
/// the predicted translations are scaled by the least-squares factor
/// `s* = sum<t_g, t_p> / sum<t_p, t_p>`, and the result is the RMS of the
/// translational residuals over all poses of the snippet (the first pose
/// contributes a zero residual by construction).
pub fn ate(gt: &TrajectorySnippet, pred: &TrajectorySnippet) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::TrajectoryLengthMismatch {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    if gt.len() < 2 {
        return Err(Error::param(format!(
            "trajectory snippets need at least 2 poses, got {}",
            gt.len()
        )));
    }
    let tg = gt.rebased_centers();
    let tp = pred.rebased_centers();

    let num: f64 = tg.iter().zip(&tp).map(|(g, p)| g.dot(p)).sum();
    let den: f64 = tp.iter().map(|p| p.dot(p)).sum();
    if den == 0.0 {
        return Err(Error::DegenerateScale);
    }
    let scale = num / den;

    let sq_sum: f64 = tg
        .iter()
        .zip(&tp)
        .map(|(g, p)| (g - p * scale).norm_squared())
        .sum();
    Ok((sq_sum / gt.len() as f64).sqrt())
}

fn check_shape(context: &'static str, h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if (h, w) != (oh, ow) {
        return Err(Error::ShapeMismatch {
            context,
            expected: (h, w),
            got: (oh, ow),
        });
    }
    Ok(())
}
