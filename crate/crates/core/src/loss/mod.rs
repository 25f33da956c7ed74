//! Scalar training losses for joint depth/flow/pose image reconstruction:
//! the robust photometric penalty (Charbonnier + SSIM dissimilarity),
//! less-than-mean error masks, masked reconstruction losses, edge-aware
//! smoothness with three normalization modes, the rigid/estimated flow
//! consistency loss, and the weighted totals.
//!
//! Every reduction is an ordinary sequential row-major sum, so loss values
//! are bit-stable across runs.

pub mod grad;

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{DisparityMap, FlowField, Image, Mask, ScalarGrid};

/// Parameters of the robust per-pixel penalty: `lambda_rho` blends the
/// Charbonnier term against the SSIM dissimilarity term, `eps` is the
/// Charbonnier offset, `c1`/`c2` stabilize the SSIM ratios, and
/// `ssim_window` is the odd box-window side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLossConfig {
    pub lambda_rho: f64,
    pub eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub ssim_window: usize,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        Self {
            lambda_rho: 0.15,
            eps: 0.01,
            c1: 1e-4,
            c2: 9e-4,
            ssim_window: 3,
        }
    }
}

impl RobustLossConfig {
    /// Pure Charbonnier penalty (the configuration under which analytic
    /// gradients are defined).
    pub fn charbonnier_only() -> Self {
        Self {
            lambda_rho: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_rho) || !self.lambda_rho.is_finite() {
            return Err(Error::param(format!(
                "lambda_rho must lie in [0, 1], got {}",
                self.lambda_rho
            )));
        }
        for (name, v) in [("eps", self.eps), ("c1", self.c1), ("c2", self.c2)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::param(format!(
                "ssim_window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// Weights of the total losses. All finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon_depth_pose: f64,
    pub smooth_depth_pose: f64,
    pub recon_flow: f64,
    pub consistency: f64,
    pub smooth_flow: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon_depth_pose: 1.0,
            smooth_depth_pose: 0.2,
            recon_flow: 1.0,
            consistency: 0.1,
            smooth_flow: 0.005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("recon_depth_pose", self.recon_depth_pose),
            ("smooth_depth_pose", self.smooth_depth_pose),
            ("recon_flow", self.recon_flow),
            ("consistency", self.consistency),
            ("smooth_flow", self.smooth_flow),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// What the smoothness term smooths.
///
/// - `Basic`: the raw disparity. Quadratically homogeneous, so shrinking all
///   disparities shrinks the loss — the classic degeneration incentive.
/// - `Mean`: disparity divided by its mean; scale-invariant.
/// - `Max`: depth divided by the minimum depth (equivalently max disparity
///   over disparity); scale-invariant with values in `[1, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    Basic,
    Mean,
    Max,
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::param(format!(
                "unknown normalization mode {other:?} (expected basic, mean, or max)"
            ))),
        }
    }
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Basic => "basic",
            Self::Mean => "mean",
            Self::Max => "max",
        })
    }
}

/// Nonnegative per-pixel penalty field.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap(ScalarGrid);

impl ErrorMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_grid(ScalarGrid::new(height, width, data)?)
    }

    pub fn from_grid(grid: ScalarGrid) -> Result<Self> {
        if let Some(pos) = grid.values().iter().position(|v| *v < 0.0) {
            return Err(Error::grid(format!(
                "penalty {} at row {}, col {} is negative",
                grid.values()[pos],
                pos / grid.width(),
                pos % grid.width()
            )));
        }
        Ok(Self(grid))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0.at(row, col)
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_grid(&self) -> &ScalarGrid {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }
}

fn check_image_pair(context: &'static str, x: &Image, y: &Image) -> Result<()> {
    if (x.height(), x.width()) != (y.height(), y.width()) || x.channels() != y.channels() {
        return Err(Error::ShapeMismatch {
            context,
            expected: (x.height(), x.width()),
            got: (y.height(), y.width()),
        });
    }
    Ok(())
}

/// Channel-averaged Charbonnier penalty `mean_ch sqrt(diff^2 + eps^2)`.
fn charbonnier_values(x: &Image, y: &Image, eps: f64) -> Vec<f64> {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                let d = x.at(row, col, ch) - y.at(row, col, ch);
                acc += (d * d + eps * eps).sqrt();
            }
            out.push(acc / c as f64);
        }
    }
    out
}

/// Per-pixel SSIM dissimilarity `clamp(1 - SSIM, 0, 2)` of one channel plane,
/// with box-window statistics and replicate padding.
fn ssim_dissim_plane(
    height: usize,
    width: usize,
    x: &[f64],
    y: &[f64],
    cfg: &RobustLossConfig,
) -> Vec<f64> {
    let half = (cfg.ssim_window / 2) as isize;
    let n = (cfg.ssim_window * cfg.ssim_window) as f64;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -half..=half {
                for dx in -half..=half {
                    let r = clamp(row as isize + dy, height);
                    let c = clamp(col as isize + dx, width);
                    let a = x[r * width + c];
                    let b = y[r * width + c];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let var_x = sxx / n - mx * mx;
            let var_y = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let ssim = ((2.0 * mx * my + cfg.c1) * (2.0 * cov + cfg.c2))
                / ((mx * mx + my * my + cfg.c1) * (var_x + var_y + cfg.c2));
            out.push((1.0 - ssim).clamp(0.0, 2.0));
        }
    }
    out
}

fn image_plane(img: &Image, ch: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            out.push(img.at(row, col, ch));
        }
    }
    out
}

/// Channel-averaged SSIM dissimilarity map in `[0, 2]` (0 for identical
/// windows). Statistics use a replicate-padded box window of side
/// `cfg.ssim_window`.
pub fn ssim_dissim(x: &Image, y: &Image, cfg: &RobustLossConfig) -> Result<ErrorMap> {
    cfg.validate()?;
    check_image_pair("ssim dissimilarity", x, y)?;
    let (h, w) = (x.height(), x.width());
    let mut acc = vec![0.0; h * w];
    for ch in 0..x.channels() {
        let plane = ssim_dissim_plane(h, w, &image_plane(x, ch), &image_plane(y, ch), cfg);
        for (a, v) in acc.iter_mut().zip(plane) {
            *a += v;
        }
    }
    let c = x.channels() as f64;
    ErrorMap::new(h, w, acc.into_iter().map(|v| v / c).collect())
}

/// Robust per-pixel penalty: `lambda_rho` times the channel-averaged
/// Charbonnier difference plus `1 - lambda_rho` times the SSIM dissimilarity.
/// Identical images score exactly `lambda_rho * eps` everywhere.
pub fn robust_penalty(x: &Image, y: &Image, cfg: &RobustLossConfig) -> Result<ErrorMap> {
    cfg.validate()?;
    check_image_pair("robust penalty", x, y)?;
    let charb = charbonnier_values(x, y, cfg.eps);
    if cfg.lambda_rho == 1.0 {
        return ErrorMap::new(x.height(), x.width(), charb);
    }
    let dissim = ssim_dissim(x, y, cfg)?;
    let data = charb
        .iter()
        .zip(dissim.values())
        .map(|(c, s)| cfg.lambda_rho * c + (1.0 - cfg.lambda_rho) * s)
        .collect();
    ErrorMap::new(x.height(), x.width(), data)
}

/// Robust penalty between two flow fields, treated as two-channel signals:
/// the Charbonnier term applies to the raw component differences (pixels);
/// the SSIM term applies to the components divided by the image diagonal so
/// the `[0, 1]`-scale stabilizers stay meaningful.
pub fn flow_penalty(a: &FlowField, b: &FlowField, cfg: &RobustLossConfig) -> Result<ErrorMap> {
    cfg.validate()?;
    let (h, w) = (a.height(), a.width());
    if (b.height(), b.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "flow penalty",
            expected: (h, w),
            got: (b.height(), b.width()),
        });
    }
    let eps = cfg.eps;
    let charb: Vec<f64> = a
        .u()
        .iter()
        .zip(a.v())
        .zip(b.u().iter().zip(b.v()))
        .map(|((au, av), (bu, bv))| {
            let du = au - bu;
            let dv = av - bv;
            ((du * du + eps * eps).sqrt() + (dv * dv + eps * eps).sqrt()) / 2.0
        })
        .collect();
    if cfg.lambda_rho == 1.0 {
        return ErrorMap::new(h, w, charb);
    }
    let diag = (w as f64).hypot(h as f64);
    let scale = |vals: &[f64]| vals.iter().map(|v| v / diag).collect::<Vec<f64>>();
    let dissim_u = ssim_dissim_plane(h, w, &scale(a.u()), &scale(b.u()), cfg);
    let dissim_v = ssim_dissim_plane(h, w, &scale(a.v()), &scale(b.v()), cfg);
    let data = charb
        .iter()
        .zip(dissim_u.iter().zip(&dissim_v))
        .map(|(c, (su, sv))| cfg.lambda_rho * c + (1.0 - cfg.lambda_rho) * (su + sv) / 2.0)
        .collect();
    ErrorMap::new(h, w, data)
}

/// Keep pixels whose penalty is strictly below the image-wide mean of the
/// visibility-weighted penalty. The mean divides by the total pixel count, so
/// pixels zeroed by `occ` still enlarge the denominator.
pub fn less_than_mean_mask(err: &ErrorMap, occ: &Mask) -> Result<Mask> {
    let (h, w) = (err.height(), err.width());
    if (occ.height(), occ.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "less-than-mean mask",
            expected: (h, w),
            got: (occ.height(), occ.width()),
        });
    }
    let mut sum = 0.0;
    for (e, bit) in err.values().iter().zip(occ.bits()) {
        sum += e * f64::from(*bit);
    }
    let threshold = sum / (h * w) as f64;
    Mask::from_fn(h, w, |row, col| err.at(row, col) < threshold)
}

/// Unmasked reconstruction loss: the plain sum of the robust penalty map for
/// one adjacent frame (callers sum over frames).
pub fn recon_loss_basic(x_t: &Image, x_hat: &Image, cfg: &RobustLossConfig) -> Result<f64> {
    Ok(robust_penalty(x_t, x_hat, cfg)?.sum())
}

fn masked_recon_loss(
    x_t: &Image,
    x_hat: &Image,
    occ: &Mask,
    cfg: &RobustLossConfig,
) -> Result<(f64, Mask)> {
    let err = robust_penalty(x_t, x_hat, cfg)?;
    if (occ.height(), occ.width()) != (err.height(), err.width()) {
        return Err(Error::ShapeMismatch {
            context: "masked reconstruction loss",
            expected: (err.height(), err.width()),
            got: (occ.height(), occ.width()),
        });
    }
    let lm = less_than_mean_mask(&err, occ)?;
    let mut loss = 0.0;
    for ((e, o), m) in err.values().iter().zip(occ.bits()).zip(lm.bits()) {
        loss += e * f64::from(o & m);
    }
    Ok((loss, lm))
}

/// Occlusion- and outlier-masked reconstruction loss for the depth/pose
/// pathway. Returns the loss and the derived less-than-mean mask.
pub fn recon_loss_depth_pose(
    x_t: &Image,
    x_hat: &Image,
    occ: &Mask,
    cfg: &RobustLossConfig,
) -> Result<(f64, Mask)> {
    masked_recon_loss(x_t, x_hat, occ, cfg)
}

/// Same masked reconstruction loss for the flow pathway; the two differ only
/// in which warp produced `x_hat`.
pub fn recon_loss_flow(
    x_t: &Image,
    x_hat: &Image,
    occ: &Mask,
    cfg: &RobustLossConfig,
) -> Result<(f64, Mask)> {
    masked_recon_loss(x_t, x_hat, occ, cfg)
}

/// The quantity the depth smoothness term differentiates, per mode. For
/// `Max` the result lies in `[1, inf)` with minimum exactly 1.
pub fn normalized_smoothness_input(
    disparity: &DisparityMap,
    mode: NormalizationMode,
) -> ScalarGrid {
    let vals = disparity.values();
    let data: Vec<f64> = match mode {
        NormalizationMode::Basic => vals.to_vec(),
        NormalizationMode::Mean => {
            let mean = disparity.as_grid().mean();
            vals.iter().map(|v| v / mean).collect()
        }
        NormalizationMode::Max => {
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vals.iter().map(|v| max / v).collect()
        }
    };
    ScalarGrid::new(disparity.height(), disparity.width(), data)
        .expect("normalizing a positive grid keeps it finite")
}

/// Edge-weighted squared forward differences of one scalar plane, both axes.
/// Differences at the last row/column are zero. The weight per axis is
/// `exp(-mean_ch |forward difference of guide|)`.
fn plane_smoothness(height: usize, width: usize, s: &[f64], guide: &Image) -> f64 {
    let channels = guide.channels();
    let grad = |r0: usize, c0: usize, r1: usize, c1: usize| -> f64 {
        let mut acc = 0.0;
        for ch in 0..channels {
            acc += (guide.at(r1, c1, ch) - guide.at(r0, c0, ch)).abs();
        }
        acc / channels as f64
    };
    let mut loss = 0.0;
    for row in 0..height {
        for col in 0..width - 1 {
            let ds = s[row * width + col + 1] - s[row * width + col];
            let term = ds * (-grad(row, col, row, col + 1)).exp();
            loss += term * term;
        }
    }
    for row in 0..height - 1 {
        for col in 0..width {
            let ds = s[(row + 1) * width + col] - s[row * width + col];
            let term = ds * (-grad(row, col, row + 1, col)).exp();
            loss += term * term;
        }
    }
    loss
}

/// Edge-aware disparity smoothness: squared forward differences of the
/// mode-normalized disparity, each damped by the guide image's gradient.
pub fn smoothness_depth_pose(
    disparity: &DisparityMap,
    guide: &Image,
    mode: NormalizationMode,
) -> Result<f64> {
    let (h, w) = (disparity.height(), disparity.width());
    if (guide.height(), guide.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "disparity smoothness",
            expected: (h, w),
            got: (guide.height(), guide.width()),
        });
    }
    let s = normalized_smoothness_input(disparity, mode);
    Ok(plane_smoothness(h, w, s.values(), guide))
}

/// Edge-aware flow smoothness: the disparity form applied to the u and v
/// components and summed.
pub fn smoothness_flow(flow: &FlowField, guide: &Image) -> Result<f64> {
    let (h, w) = (flow.height(), flow.width());
    if (guide.height(), guide.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "flow smoothness",
            expected: (h, w),
            got: (guide.height(), guide.width()),
        });
    }
    Ok(plane_smoothness(h, w, flow.u(), guide) + plane_smoothness(h, w, flow.v(), guide))
}

/// Cross-task consistency: penalize rigid-vs-estimated flow disagreement, but
/// only where the rigid warp had nothing to say (`1 - edge*blank`) and the
/// flow reconstruction was trustworthy (`lm_flow`).
pub fn consistency_loss(
    rigid: &FlowField,
    flow: &FlowField,
    edge: &Mask,
    blank: &Mask,
    lm_flow: &Mask,
    cfg: &RobustLossConfig,
) -> Result<f64> {
    let err = flow_penalty(rigid, flow, cfg)?;
    let (h, w) = (err.height(), err.width());
    for (name, m) in [("edge", edge), ("blank", blank), ("lm_flow", lm_flow)] {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::ShapeMismatch {
                context: match name {
                    "edge" => "consistency loss edge mask",
                    "blank" => "consistency loss blank mask",
                    _ => "consistency loss less-than-mean mask",
                },
                expected: (h, w),
                got: (m.height(), m.width()),
            });
        }
    }
    let mut loss = 0.0;
    for (((e, eb), bb), lb) in err
        .values()
        .iter()
        .zip(edge.bits())
        .zip(blank.bits())
        .zip(lm_flow.bits())
    {
        let weight = (1.0 - f64::from(eb & bb)) * f64::from(*lb);
        loss += e * weight;
    }
    Ok(loss)
}

/// Reconstruction and smoothness parts of the depth/pose total, with the
/// reconstruction term already summed over both adjacent frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoseLossParts {
    pub recon: f64,
    pub smooth: f64,
}

/// Per-scale parts of the flow total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowScaleParts {
    pub recon: f64,
    pub consistency: f64,
    pub smooth: f64,
}

/// Weighted depth/pose total.
pub fn total_depth_pose_loss(parts: &DepthPoseLossParts, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.recon_depth_pose * parts.recon + weights.smooth_depth_pose * parts.smooth)
}

/// Weighted flow total: per-scale weighted sums, added across scales without
/// extra scale weights.
pub fn total_flow_loss(per_scale: &[FlowScaleParts], weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for parts in per_scale {
        total += weights.recon_flow * parts.recon
            + weights.consistency * parts.consistency
            + weights.smooth_flow * parts.smooth;
    }
    Ok(total)
}
