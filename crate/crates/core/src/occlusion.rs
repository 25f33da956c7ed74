//! Geometric visibility masks for reconstruction losses.
//!
//! Three independent cues mark a reference-frame pixel as unusable, each a
//! binary mask with 0 = masked:
//!
//! - **edge**: the pixel projects outside the adjacent view (or behind its
//!   camera), so there is nothing to sample.
//! - **overlap**: two reference pixels land in the same unit cell of the
//!   adjacent view; only the nearest survives, the rest are occluded there.
//! - **blank**: walking the other way, adjacent-frame pixels stamp their
//!   bilinear footprints into the reference frame; reference pixels no
//!   footprint touches correspond to content the adjacent view never saw.
//!
//! The combined mask is the elementwise product. Iterating the mutual
//! projection with already-masked pixels removed from the projecting sets
//! refines the result monotonically (masked pixels are only ever added) and
//! reaches a fixed point after a few rounds; one round is the sensible
//! default.

use crate::camera::{project_depth, Intrinsics, Pose, Z_EPS};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask, ProjectionMap};

/// Projected depths within this of the running cell minimum count as a tie;
/// ties keep the earlier (smaller row-major index) pixel.
pub const OVERLAP_TIE_EPS: f64 = 1e-9;

/// Per-cue masks for one reference frame, with `combined` always equal to
/// the product of the three cues.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBundle {
    pub edge: Mask,
    pub overlap: Mask,
    pub blank: Mask,
    pub combined: Mask,
    /// Mutual-projection rounds actually executed (stops early at the fixed
    /// point).
    pub iterations_used: usize,
}

/// Pixels that project in front of the adjacent camera and inside its image
/// bounds keep 1; everything else is edge-masked.
pub fn edge_mask(proj: &ProjectionMap) -> Mask {
    Mask::from_fn(proj.height(), proj.width(), |row, col| {
        proj.in_image(row, col)
    })
    .expect("bits are 0/1")
}

/// Bin projections by the unit cell `(floor(x), floor(y))` they land in; in
/// each cell the smallest projected depth keeps 1 and every other occupant is
/// masked. Pixels that do not land in the image at all keep 1 here — the edge
/// mask is responsible for them.
pub fn overlap_mask(proj: &ProjectionMap) -> Mask {
    overlap_mask_filtered(proj, None)
}

fn overlap_mask_filtered(proj: &ProjectionMap, active: Option<&Mask>) -> Mask {
    let (h, w) = (proj.height(), proj.width());
    // Winner per target cell: (depth, row-major source index). The scan is
    // row-major, and a later pixel takes a cell only by undercutting the
    // incumbent by more than the tie epsilon, so equal depths resolve to the
    // smaller index deterministically.
    let mut winner: Vec<Option<(f64, usize)>> = vec![None; h * w];
    let is_active = |row: usize, col: usize| active.is_none_or(|m| m.is_set(row, col));
    for row in 0..h {
        for col in 0..w {
            if !is_active(row, col) || !proj.in_image(row, col) {
                continue;
            }
            let cell =
                proj.y_at(row, col).floor() as usize * w + proj.x_at(row, col).floor() as usize;
            let z = proj.z_at(row, col);
            match winner[cell] {
                Some((best_z, _)) if z >= best_z - OVERLAP_TIE_EPS => {}
                _ => winner[cell] = Some((z, row * w + col)),
            }
        }
    }
    Mask::from_fn(h, w, |row, col| {
        if !is_active(row, col) || !proj.in_image(row, col) {
            return true;
        }
        let cell = proj.y_at(row, col).floor() as usize * w + proj.x_at(row, col).floor() as usize;
        matches!(winner[cell], Some((_, idx)) if idx == row * w + col)
    })
    .expect("bits are 0/1")
}

/// Project the adjacent frame into the reference frame and keep 1 exactly at
/// reference pixels touched by at least one in-bounds projection's bilinear
/// footprint. Projections on exact integer coordinates stamp a degenerate
/// footprint (only neighbors with nonzero weight count).
pub fn blank_mask(depth_s: &DepthMap, pose_s_to_t: &Pose, k: &Intrinsics) -> Mask {
    let proj = project_depth(depth_s, pose_s_to_t, k, Z_EPS);
    blank_mask_from_projection(&proj, None)
}

fn blank_mask_from_projection(proj_s_to_t: &ProjectionMap, active_s: Option<&Mask>) -> Mask {
    let (h, w) = (proj_s_to_t.height(), proj_s_to_t.width());
    let mut touched = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            if let Some(m) = active_s {
                if !m.is_set(row, col) {
                    continue;
                }
            }
            if !proj_s_to_t.in_image(row, col) {
                continue;
            }
            let x = proj_s_to_t.x_at(row, col);
            let y = proj_s_to_t.y_at(row, col);
            let x0 = x.floor() as usize;
            let y0 = y.floor() as usize;
            // In-bounds with a positive fraction implies the +1 neighbor
            // exists, so no clamping is needed here.
            let cols: &[usize] = if x - x0 as f64 > 0.0 { &[0, 1] } else { &[0] };
            let rows: &[usize] = if y - y0 as f64 > 0.0 { &[0, 1] } else { &[0] };
            for dr in rows {
                for dc in cols {
                    touched[(y0 + dr) * w + (x0 + dc)] = true;
                }
            }
        }
    }
    Mask::from_fn(h, w, |row, col| touched[row * w + col]).expect("bits are 0/1")
}

/// Full occlusion reasoning for the reference frame against one adjacent
/// frame. `pose_t_to_s` maps reference-camera points into the adjacent
/// camera; the reverse direction used by the blank cue is derived internally.
///
/// With `iterations` > 1, both frames' masks are recomputed with previously
/// masked pixels removed from the projecting sets, and per-cue results
/// accumulate by product so the masked set grows monotonically. Iteration
/// stops early once neither frame changes.
pub fn occlusion_mask(
    depth_t: &DepthMap,
    depth_s: &DepthMap,
    pose_t_to_s: &Pose,
    k: &Intrinsics,
    iterations: usize,
) -> Result<MaskBundle> {
    if iterations == 0 {
        return Err(Error::param("occlusion mask needs at least one iteration"));
    }
    let (h, w) = (depth_t.height(), depth_t.width());
    if (depth_s.height(), depth_s.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "occlusion mask",
            expected: (h, w),
            got: (depth_s.height(), depth_s.width()),
        });
    }

    // Geometry is fixed; only the active sets change across rounds.
    let proj_ts = project_depth(depth_t, pose_t_to_s, k, Z_EPS);
    let proj_st = project_depth(depth_s, &pose_t_to_s.inverse(), k, Z_EPS);

    let edge_t = edge_mask(&proj_ts);
    let edge_s = edge_mask(&proj_st);
    let ones = Mask::filled(h, w, 1)?;
    let mut overlap_t = ones.clone();
    let mut blank_t = ones.clone();
    let mut overlap_s = ones.clone();
    let mut blank_s = ones.clone();
    let mut valid_t = ones.clone();
    let mut valid_s = ones;

    let mut iterations_used = 0;
    for round in 1..=iterations {
        iterations_used = round;
        overlap_t = overlap_t.product(&overlap_mask_filtered(&proj_ts, Some(&valid_t)))?;
        blank_t = blank_t.product(&blank_mask_from_projection(&proj_st, Some(&valid_s)))?;
        overlap_s = overlap_s.product(&overlap_mask_filtered(&proj_st, Some(&valid_s)))?;
        blank_s = blank_s.product(&blank_mask_from_projection(&proj_ts, Some(&valid_t)))?;

        let next_t = edge_t.product(&overlap_t)?.product(&blank_t)?;
        let next_s = edge_s.product(&overlap_s)?.product(&blank_s)?;
        let converged = next_t == valid_t && next_s == valid_s;
        valid_t = next_t;
        valid_s = next_s;
        if converged {
            break;
        }
    }

    let combined = edge_t.product(&overlap_t)?.product(&blank_t)?;
    Ok(MaskBundle {
        edge: edge_t,
        overlap: overlap_t,
        blank: blank_t,
        combined,
        iterations_used,
    })
}
