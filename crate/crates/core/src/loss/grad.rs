//! Analytic gradients of the masked reconstruction losses in the pure
//! Charbonnier configuration (`lambda_rho = 1`), plus the finite-difference
//! checkers that validate them.
//!
//! Masks are treated as constants: a loss's gradient never flows through
//! mask construction, so the checkers evaluate the forward loss with the
//! same fixed mask. The bilinear sampler is piecewise linear in the sample
//! position, so its derivative jumps on integer grid lines; callers must
//! keep test positions away from those lines (see [`flow_gradcheck_mask`]
//! and [`projection_gradcheck_mask`]).

use nalgebra::Vector3;
use serde::Serialize;

use super::{robust_penalty, RobustLossConfig};
use crate::camera::{project_depth, Intrinsics, Pose, Z_EPS};
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, FlowField, Image, Mask, ScalarGrid};
use crate::warp::{bilinear_sample, warp_with_flow};

/// Outcome of comparing an analytic gradient against central finite
/// differences, with relative error `|a - f| / max(|a|, |f|, 1e-3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub compared: usize,
}

fn require_charbonnier_only(cfg: &RobustLossConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.lambda_rho != 1.0 {
        return Err(Error::param(format!(
            "analytic gradients are defined for lambda_rho = 1 only, got {}",
            cfg.lambda_rho
        )));
    }
    Ok(())
}

fn check_mask(context: &'static str, h: usize, w: usize, mask: &Mask) -> Result<()> {
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context,
            expected: (h, w),
            got: (mask.height(), mask.width()),
        });
    }
    Ok(())
}

/// Forward loss for the flow pathway with a caller-fixed mask:
/// `sum(robust_penalty(x_t, warp(x_s, flow)) * mask)`.
pub fn recon_loss_flow_fixed_mask(
    x_t: &Image,
    x_s: &Image,
    flow: &FlowField,
    mask: &Mask,
    cfg: &RobustLossConfig,
) -> Result<f64> {
    let (x_hat, _) = warp_with_flow(x_s, flow)?;
    let err = robust_penalty(x_t, &x_hat, cfg)?;
    check_mask("fixed-mask flow loss", err.height(), err.width(), mask)?;
    let mut loss = 0.0;
    for (e, b) in err.values().iter().zip(mask.bits()) {
        loss += e * f64::from(*b);
    }
    Ok(loss)
}

/// Forward loss for the depth/pose pathway with a caller-fixed mask; the
/// warp target comes from projecting the reciprocal of `disparity`.
pub fn recon_loss_depth_pose_fixed_mask(
    x_t: &Image,
    x_s: &Image,
    disparity: &DisparityMap,
    pose: &Pose,
    k: &Intrinsics,
    mask: &Mask,
    cfg: &RobustLossConfig,
) -> Result<f64> {
    let depth = disparity.reciprocal();
    let proj = project_depth(&depth, pose, k, Z_EPS);
    let (x_hat, _) = bilinear_sample(x_s, &proj)?;
    let err = robust_penalty(x_t, &x_hat, cfg)?;
    check_mask(
        "fixed-mask depth/pose loss",
        err.height(),
        err.width(),
        mask,
    )?;
    let mut loss = 0.0;
    for (e, b) in err.values().iter().zip(mask.bits()) {
        loss += e * f64::from(*b);
    }
    Ok(loss)
}

/// Derivative of one pixel's Charbonnier penalty with respect to its sample
/// position `(x, y)` in `x_s`. `None` when the sample is out of bounds (the
/// zero-filled sample is locally constant there).
fn penalty_position_grad(
    x_t: &Image,
    x_s: &Image,
    row: usize,
    col: usize,
    x: f64,
    y: f64,
    eps: f64,
) -> Option<(f64, f64)> {
    let (h, w) = (x_s.height(), x_s.width());
    if !(x >= 0.0 && x <= (w - 1) as f64 && y >= 0.0 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let dx = x - x0 as f64;
    let dy = y - y0 as f64;
    let channels = x_s.channels();
    let mut gx = 0.0;
    let mut gy = 0.0;
    for ch in 0..channels {
        let i00 = x_s.at(y0, x0, ch);
        let i10 = x_s.at(y0, x1, ch);
        let i01 = x_s.at(y1, x0, ch);
        let i11 = x_s.at(y1, x1, ch);
        let sample =
            (1.0 - dy) * ((1.0 - dx) * i00 + dx * i10) + dy * ((1.0 - dx) * i01 + dx * i11);
        let ds_dx = (1.0 - dy) * (i10 - i00) + dy * (i11 - i01);
        let ds_dy = (1.0 - dx) * (i01 - i00) + dx * (i11 - i10);
        let diff = x_t.at(row, col, ch) - sample;
        let scale = diff / (diff * diff + eps * eps).sqrt();
        gx += scale * -ds_dx;
        gy += scale * -ds_dy;
    }
    Some((gx / channels as f64, gy / channels as f64))
}

/// Analytic gradient of the fixed-mask flow loss with respect to the flow
/// components, pixel by pixel. Masked pixels get exactly zero.
pub fn grad_recon_wrt_flow(
    x_t: &Image,
    x_s: &Image,
    flow: &FlowField,
    mask: &Mask,
    cfg: &RobustLossConfig,
) -> Result<FlowField> {
    require_charbonnier_only(cfg)?;
    let (h, w) = (x_t.height(), x_t.width());
    check_mask("flow gradient", h, w, mask)?;
    if (flow.height(), flow.width()) != (h, w) || (x_s.height(), x_s.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "flow gradient",
            expected: (h, w),
            got: (flow.height(), flow.width()),
        });
    }
    FlowField::from_fn(h, w, |row, col| {
        if !mask.is_set(row, col) {
            return (0.0, 0.0);
        }
        let x = col as f64 + flow.u_at(row, col);
        let y = row as f64 + flow.v_at(row, col);
        penalty_position_grad(x_t, x_s, row, col, x, y, cfg.eps).unwrap_or((0.0, 0.0))
    })
}

/// Analytic gradient of the fixed-mask depth/pose loss with respect to the
/// disparity, through backprojection, the rigid transform, projection and
/// the bilinear sample. Masked pixels get exactly zero.
pub fn grad_recon_wrt_disparity(
    x_t: &Image,
    x_s: &Image,
    disparity: &DisparityMap,
    pose: &Pose,
    k: &Intrinsics,
    mask: &Mask,
    cfg: &RobustLossConfig,
) -> Result<ScalarGrid> {
    require_charbonnier_only(cfg)?;
    let (h, w) = (x_t.height(), x_t.width());
    check_mask("disparity gradient", h, w, mask)?;
    if (disparity.height(), disparity.width()) != (h, w) || (x_s.height(), x_s.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "disparity gradient",
            expected: (h, w),
            got: (disparity.height(), disparity.width()),
        });
    }
    let depth = disparity.reciprocal();
    let proj = project_depth(&depth, pose, k, Z_EPS);
    let rot = *pose.rotation();
    let t = *pose.translation();
    ScalarGrid::from_fn(h, w, |row, col| {
        if !mask.is_set(row, col) || !proj.in_image(row, col) {
            return 0.0;
        }
        let Some((gx, gy)) = penalty_position_grad(
            x_t,
            x_s,
            row,
            col,
            proj.x_at(row, col),
            proj.y_at(row, col),
            cfg.eps,
        ) else {
            return 0.0;
        };
        // Camera ray through the pixel, rotated into the adjacent frame:
        // the transformed point is q = d * b + t, linear in the depth d.
        let a = Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
        let b = rot * a;
        let d = depth.at(row, col);
        let q = d * b + t;
        let dx_dd = k.fx * (b.x * q.z - b.z * q.x) / (q.z * q.z);
        let dy_dd = k.fy * (b.y * q.z - b.z * q.y) / (q.z * q.z);
        // d = 1 / disparity, so dd/ddisparity = -d^2.
        let dd_ddisp = -d * d;
        (gx * dx_dd + gy * dy_dd) * dd_ddisp
    })
}

fn off_grid_interior(x: f64, upper: f64, grid_margin: f64, border_margin: f64) -> bool {
    x >= border_margin && x <= upper - border_margin && (x - x.round()).abs() >= grid_margin
}

/// Mask of pixels whose flow-displaced sample position stays at least
/// `grid_margin` away from integer grid lines and `border_margin` inside the
/// image — the region where the bilinear derivative is smooth and a
/// finite-difference probe cannot cross a cell boundary.
pub fn flow_gradcheck_mask(flow: &FlowField, grid_margin: f64, border_margin: f64) -> Mask {
    let (h, w) = (flow.height(), flow.width());
    Mask::from_fn(h, w, |row, col| {
        let x = col as f64 + flow.u_at(row, col);
        let y = row as f64 + flow.v_at(row, col);
        off_grid_interior(x, (w - 1) as f64, grid_margin, border_margin)
            && off_grid_interior(y, (h - 1) as f64, grid_margin, border_margin)
    })
    .expect("bits are 0/1")
}

/// Same safe region for a projection map (depth/pose pathway).
pub fn projection_gradcheck_mask(
    proj: &crate::grid::ProjectionMap,
    grid_margin: f64,
    border_margin: f64,
) -> Mask {
    let (h, w) = (proj.height(), proj.width());
    Mask::from_fn(h, w, |row, col| {
        proj.in_front(row, col)
            && off_grid_interior(
                proj.x_at(row, col),
                (w - 1) as f64,
                grid_margin,
                border_margin,
            )
            && off_grid_interior(
                proj.y_at(row, col),
                (h - 1) as f64,
                grid_margin,
                border_margin,
            )
    })
    .expect("bits are 0/1")
}

// The central-difference slope carries absolute roundoff of roughly
// (summation error of the full loss) / (2h) ~ 1e-9, so gradients much
// smaller than the guard cannot be resolved relatively at h = 1e-4; they
// are judged against the guard magnitude instead, which still flags any
// formula error larger than guard * tolerance in absolute terms.
const REL_ERROR_GUARD: f64 = 1e-3;

fn relative_error(a: f64, f: f64) -> f64 {
    let denom = a.abs().max(f.abs()).max(REL_ERROR_GUARD);
    (a - f).abs() / denom
}

/// Compare the analytic flow gradient against central finite differences of
/// the fixed-mask forward loss, component by component.
pub fn gradcheck_flow(
    x_t: &Image,
    x_s: &Image,
    flow: &FlowField,
    mask: &Mask,
    cfg: &RobustLossConfig,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::param(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let analytic = grad_recon_wrt_flow(x_t, x_s, flow, mask, cfg)?;
    let (h, w) = (flow.height(), flow.width());
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0;
    let mut compared = 0;
    for row in 0..h {
        for col in 0..w {
            for comp in 0..2 {
                let mut u = flow.u().to_vec();
                let mut v = flow.v().to_vec();
                {
                    let target = if comp == 0 { &mut u } else { &mut v };
                    target[row * w + col] += step;
                }
                let plus = recon_loss_flow_fixed_mask(
                    x_t,
                    x_s,
                    &FlowField::new(h, w, u.clone(), v.clone())?,
                    mask,
                    cfg,
                )?;
                {
                    let target = if comp == 0 { &mut u } else { &mut v };
                    target[row * w + col] -= 2.0 * step;
                }
                let minus =
                    recon_loss_flow_fixed_mask(x_t, x_s, &FlowField::new(h, w, u, v)?, mask, cfg)?;
                let fd = (plus - minus) / (2.0 * step);
                let a = if comp == 0 {
                    analytic.u_at(row, col)
                } else {
                    analytic.v_at(row, col)
                };
                let rel = relative_error(a, fd);
                max_rel = max_rel.max(rel);
                sum_rel += rel;
                compared += 1;
            }
        }
    }
    Ok(GradCheckReport {
        max_rel,
        mean_rel: sum_rel / compared as f64,
        compared,
    })
}

/// Compare the analytic disparity gradient against central finite
/// differences of the fixed-mask forward loss.
#[allow(clippy::too_many_arguments)]
pub fn gradcheck_disparity(
    x_t: &Image,
    x_s: &Image,
    disparity: &DisparityMap,
    pose: &Pose,
    k: &Intrinsics,
    mask: &Mask,
    cfg: &RobustLossConfig,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::param(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let analytic = grad_recon_wrt_disparity(x_t, x_s, disparity, pose, k, mask, cfg)?;
    let (h, w) = (disparity.height(), disparity.width());
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0;
    let mut compared = 0;
    for row in 0..h {
        for col in 0..w {
            let mut vals = disparity.values().to_vec();
            vals[row * w + col] += step;
            let plus = recon_loss_depth_pose_fixed_mask(
                x_t,
                x_s,
                &DisparityMap::new(h, w, vals.clone())?,
                pose,
                k,
                mask,
                cfg,
            )?;
            vals[row * w + col] -= 2.0 * step;
            let minus = recon_loss_depth_pose_fixed_mask(
                x_t,
                x_s,
                &DisparityMap::new(h, w, vals)?,
                pose,
                k,
                mask,
                cfg,
            )?;
            let fd = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic.at(row, col), fd);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
            compared += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel,
        mean_rel: sum_rel / compared as f64,
        compared,
    })
}
