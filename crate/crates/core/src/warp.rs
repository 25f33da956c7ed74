//! Differentiable image resampling: bilinear sampling at projected or
//! flow-displaced positions, plus mean-pool pyramids and the matching flow
//! and mask downsampling used for multi-scale losses.
//!
//! Out-of-bounds targets are zero-filled and reported through the validity
//! mask; the sampler never clamps coordinates, so invalid pixels carry no
//! borrowed image content.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Image, Mask, ProjectionMap};

/// The four-neighbor bilinear stencil at one continuous target position.
/// Weights are nonnegative and sum to exactly 1 when `in_bounds`; exact
/// integer coordinates degenerate to fewer distinct neighbors with the
/// redundant weights at zero. When not `in_bounds`, all weights are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleFootprint {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// Weight of (x0, y0).
    pub w00: f64,
    /// Weight of (x1, y0).
    pub w10: f64,
    /// Weight of (x0, y1).
    pub w01: f64,
    /// Weight of (x1, y1).
    pub w11: f64,
    pub in_bounds: bool,
}

impl SampleFootprint {
    /// Stencil for sampling a `height x width` grid at `(x, y)`. `in_front`
    /// false (a projection behind the camera) yields an out-of-bounds
    /// footprint regardless of the coordinates.
    pub fn at(x: f64, y: f64, in_front: bool, height: usize, width: usize) -> Self {
        let oob = Self {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
            w00: 0.0,
            w10: 0.0,
            w01: 0.0,
            w11: 0.0,
            in_bounds: false,
        };
        if !in_front {
            return oob;
        }
        let (w1, h1) = ((width - 1) as f64, (height - 1) as f64);
        if !(x >= 0.0 && x <= w1 && y >= 0.0 && y <= h1) {
            return oob;
        }
        let xf = x.floor();
        let yf = y.floor();
        let dx = x - xf;
        let dy = y - yf;
        let x0 = xf as usize;
        let y0 = yf as usize;
        // At the exact right/bottom boundary the fractional part is zero and
        // the +1 neighbor would fall outside; fold it back with zero weight.
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        Self {
            x0,
            y0,
            x1,
            y1,
            w00: (1.0 - dx) * (1.0 - dy),
            w10: dx * (1.0 - dy),
            w01: (1.0 - dx) * dy,
            w11: dx * dy,
            in_bounds: true,
        }
    }

    /// Weighted blend of the stencil's source pixels in one channel.
    pub fn blend(&self, source: &Image, ch: usize) -> f64 {
        self.w00 * source.at(self.y0, self.x0, ch)
            + self.w10 * source.at(self.y0, self.x1, ch)
            + self.w01 * source.at(self.y1, self.x0, ch)
            + self.w11 * source.at(self.y1, self.x1, ch)
    }
}

/// Resample `source` at the continuous positions of a projection map,
/// reconstructing the projecting frame. Pixels that land outside the source
/// (or behind the camera) come back as zeros with a cleared mask bit.
pub fn bilinear_sample(source: &Image, proj: &ProjectionMap) -> Result<(Image, Mask)> {
    if (source.height(), source.width()) != (proj.height(), proj.width()) {
        return Err(Error::ShapeMismatch {
            context: "bilinear sample",
            expected: (source.height(), source.width()),
            got: (proj.height(), proj.width()),
        });
    }
    sample_positions(source, |row, col| {
        (
            proj.x_at(row, col),
            proj.y_at(row, col),
            proj.in_front(row, col),
        )
    })
}

/// Warp `source` by a dense flow field: each output pixel samples the source
/// at `(x + u, y + v)`.
pub fn warp_with_flow(source: &Image, flow: &FlowField) -> Result<(Image, Mask)> {
    if (source.height(), source.width()) != (flow.height(), flow.width()) {
        return Err(Error::ShapeMismatch {
            context: "flow warp",
            expected: (source.height(), source.width()),
            got: (flow.height(), flow.width()),
        });
    }
    sample_positions(source, |row, col| {
        (
            col as f64 + flow.u_at(row, col),
            row as f64 + flow.v_at(row, col),
            true,
        )
    })
}

fn sample_positions(
    source: &Image,
    mut pos: impl FnMut(usize, usize) -> (f64, f64, bool),
) -> Result<(Image, Mask)> {
    let (h, w, c) = (source.height(), source.width(), source.channels());
    let mut data = Vec::with_capacity(h * w * c);
    let mut bits = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (x, y, in_front) = pos(row, col);
            let fp = SampleFootprint::at(x, y, in_front, h, w);
            if fp.in_bounds {
                for ch in 0..c {
                    data.push(fp.blend(source, ch));
                }
                bits.push(1u8);
            } else {
                data.extend(std::iter::repeat_n(0.0, c));
                bits.push(0u8);
            }
        }
    }
    Ok((Image::new(h, w, c, data)?, Mask::new(h, w, bits)?))
}

/// Raw 2x2 mean pooling with floor halving; odd trailing rows/columns are
/// dropped. Exposed at value level so the pooling arithmetic is checkable
/// without the `Image` minimum-size constraint.
pub fn mean_pool_2x2_raw(
    height: usize,
    width: usize,
    channels: usize,
    values: &[f64],
) -> (usize, usize, Vec<f64>) {
    assert_eq!(values.len(), height * width * channels);
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(oh * ow * channels);
    let at = |r: usize, c: usize, ch: usize| values[(r * width + c) * channels + ch];
    for r in 0..oh {
        for c in 0..ow {
            for ch in 0..channels {
                out.push(
                    0.25 * (at(2 * r, 2 * c, ch)
                        + at(2 * r, 2 * c + 1, ch)
                        + at(2 * r + 1, 2 * c, ch)
                        + at(2 * r + 1, 2 * c + 1, ch)),
                );
            }
        }
    }
    (oh, ow, out)
}

/// Mean-pool image pyramid: level 0 is the input, each further level halves
/// both dimensions by 2x2 averaging. Fails if any requested level would drop
/// below 2x2.
pub fn pyramid(image: &Image, levels: usize) -> Result<Vec<Image>> {
    if levels == 0 {
        return Err(Error::param("pyramid needs at least one level"));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image.clone());
    for level in 1..levels {
        let prev = out.last().expect("non-empty pyramid");
        let (oh, ow) = (prev.height() / 2, prev.width() / 2);
        if oh < 2 || ow < 2 {
            return Err(Error::param(format!(
                "pyramid level {level} would be {oh}x{ow}; images must stay at least 2x2"
            )));
        }
        let (oh, ow, values) =
            mean_pool_2x2_raw(prev.height(), prev.width(), prev.channels(), prev.values());
        out.push(Image::new(oh, ow, prev.channels(), values)?);
    }
    Ok(out)
}

/// Halve a flow field one level: 2x2 mean pooling of each component, then
/// division by 2 so displacements stay in the coarser level's pixel units.
pub fn downsample_flow_half(flow: &FlowField) -> Result<FlowField> {
    let (oh, ow) = (flow.height() / 2, flow.width() / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::param(format!(
            "cannot halve a {}x{} flow field",
            flow.height(),
            flow.width()
        )));
    }
    let (_, _, u) = mean_pool_2x2_raw(flow.height(), flow.width(), 1, flow.u());
    let (_, _, v) = mean_pool_2x2_raw(flow.height(), flow.width(), 1, flow.v());
    FlowField::new(
        oh,
        ow,
        u.into_iter().map(|x| x * 0.5).collect(),
        v.into_iter().map(|x| x * 0.5).collect(),
    )
}

/// Halve a mask one level by 2x2 min pooling: a coarse pixel survives only if
/// all four fine pixels do. Keeps masked regions conservative across scales.
pub fn downsample_mask_min(mask: &Mask) -> Result<Mask> {
    let (oh, ow) = (mask.height() / 2, mask.width() / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::param(format!(
            "cannot halve a {}x{} mask",
            mask.height(),
            mask.width()
        )));
    }
    Mask::from_fn(oh, ow, |r, c| {
        mask.is_set(2 * r, 2 * c)
            && mask.is_set(2 * r, 2 * c + 1)
            && mask.is_set(2 * r + 1, 2 * c)
            && mask.is_set(2 * r + 1, 2 * c + 1)
    })
}
