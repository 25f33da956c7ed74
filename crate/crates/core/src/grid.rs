//! Dense pixel-grid containers.
//!
//! Every grid is row-major. A pixel coordinate is `(x, y)` where `x` is the
//! column and `y` is the row; pixel centers sit on integer coordinates and the
//! continuous image domain is `[0, W-1] x [0, H-1]`, so the boundary
//! coordinate `x = W-1` is still inside the image. All arithmetic is `f64`;
//! narrowing to `f32` happens only at the file-format layer.

use crate::error::{Error, Result};

/// Plain `H x W` grid of finite `f64` values (error maps, raw PFM payloads,
/// gradients). No range constraint beyond finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::grid("grid dimensions must be nonzero"));
        }
        if data.len() != height * width {
            return Err(Error::grid(format!(
                "expected {} values for a {}x{} grid, got {}",
                height * width,
                height,
                width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::grid(format!(
                "non-finite value at row {}, col {}",
                pos / width,
                pos % width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Intensity image, `H x W x C` channel-interleaved with `C` of 1 or 3,
/// values in `[0, 1]`. Gradient-based operations need at least a 2x2 extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::grid(format!(
                "image must be at least 2x2, got {}x{}",
                height, width
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::grid(format!(
                "image must have 1 or 3 channels, got {}",
                channels
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::grid(format!(
                "expected {} values for a {}x{}x{} image, got {}",
                height * width * channels,
                height,
                width,
                channels,
                data.len()
            )));
        }
        for (pos, v) in data.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                let pix = pos / channels;
                return Err(Error::grid(format!(
                    "intensity {} at row {}, col {} outside [0, 1]",
                    v,
                    pix / width,
                    pix % width
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Channel-averaged intensity at one pixel.
    pub fn mean_at(&self, row: usize, col: usize) -> f64 {
        let base = (row * self.width + col) * self.channels;
        self.data[base..base + self.channels].iter().sum::<f64>() / self.channels as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Strictly positive `H x W` grid. Doubles as a disparity map: the reciprocal
/// of a depth map is again a `DepthMap`-shaped positive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(ScalarGrid);

/// Inverse depth shares the positive-grid representation.
pub type DisparityMap = DepthMap;

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let grid = ScalarGrid::new(height, width, data)?;
        if let Some(pos) = grid.values().iter().position(|v| *v <= 0.0) {
            return Err(Error::grid(format!(
                "depth {} at row {}, col {} is not strictly positive",
                grid.values()[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(Self(grid))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let grid = ScalarGrid::from_fn(height, width, f)?;
        Self::new(grid.height, grid.width, grid.data)
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

    /// Pointwise reciprocal: depth to disparity and back.
    pub fn reciprocal(&self) -> DepthMap {
        let data = self.values().iter().map(|d| 1.0 / d).collect();
        DepthMap::new(self.height(), self.width(), data)
            .expect("reciprocal of a positive finite grid is positive finite")
    }
}

/// Dense 2D displacement field: `u` moves along x (columns), `v` along y
/// (rows), both in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::grid("flow dimensions must be nonzero"));
        }
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::grid(format!(
                "expected {} values per flow component for {}x{}, got u: {}, v: {}",
                height * width,
                height,
                width,
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::grid("non-finite flow component"));
        }
        Ok(Self {
            height,
            width,
            u,
            v,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            vec![0.0; height * width],
            vec![0.0; height * width],
        )
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Result<Self> {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                let (du, dv) = f(row, col);
                u.push(du);
                v.push(dv);
            }
        }
        Self::new(height, width, u, v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u_at(&self, row: usize, col: usize) -> f64 {
        self.u[row * self.width + col]
    }

    pub fn v_at(&self, row: usize, col: usize) -> f64 {
        self.v[row * self.width + col]
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }
}

/// Binary validity/visibility mask: 1 keeps a pixel, 0 drops it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::grid("mask dimensions must be nonzero"));
        }
        if bits.len() != height * width {
            return Err(Error::grid(format!(
                "expected {} bits for a {}x{} mask, got {}",
                height * width,
                height,
                width,
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|b| *b > 1) {
            return Err(Error::grid(format!(
                "mask value {} at row {}, col {} (must be 0 or 1)",
                bits[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, bit: u8) -> Result<Self> {
        Self::new(height, width, vec![bit; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(row, col) as u8);
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] == 1
    }

    /// Mask value as a multiplicative weight (0.0 or 1.0).
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        f64::from(self.bits[row * self.width + col])
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Elementwise product of two binary masks (logical AND).
    pub fn product(&self, other: &Mask) -> Result<Mask> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                context: "mask product",
                expected: (self.height, self.width),
                got: (other.height, other.width),
            });
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| a & b)
            .collect();
        Mask::new(self.height, self.width, bits)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|b| *b as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.len() - self.count_ones()
    }

    pub fn fraction_ones(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }
}

/// Per-pixel projection of one frame's pixels into an adjacent view:
/// continuous target coordinates `(x_hat, y_hat)`, the projected camera-space
/// depth `z_hat`, and an `in_front` flag (`z > z_eps` before perspective
/// division). Coordinates and depth of pixels that are not in front hold the
/// untrustworthy division result and must be gated on the flag.
#[derive(Debug, Clone)]
pub struct ProjectionMap {
    height: usize,
    width: usize,
    x_hat: Vec<f64>,
    y_hat: Vec<f64>,
    z_hat: Vec<f64>,
    in_front: Vec<bool>,
}

impl ProjectionMap {
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        x_hat: Vec<f64>,
        y_hat: Vec<f64>,
        z_hat: Vec<f64>,
        in_front: Vec<bool>,
    ) -> Self {
        let n = height * width;
        assert!(
            x_hat.len() == n && y_hat.len() == n && z_hat.len() == n && in_front.len() == n,
            "projection component length mismatch"
        );
        Self {
            height,
            width,
            x_hat,
            y_hat,
            z_hat,
            in_front,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn x_at(&self, row: usize, col: usize) -> f64 {
        self.x_hat[row * self.width + col]
    }

    pub fn y_at(&self, row: usize, col: usize) -> f64 {
        self.y_hat[row * self.width + col]
    }

    pub fn z_at(&self, row: usize, col: usize) -> f64 {
        self.z_hat[row * self.width + col]
    }

    pub fn in_front(&self, row: usize, col: usize) -> bool {
        self.in_front[row * self.width + col]
    }

    /// True when the pixel projects in front of the camera and inside the
    /// target image domain `[0, W-1] x [0, H-1]` (boundary inclusive).
    pub fn in_image(&self, row: usize, col: usize) -> bool {
        if !self.in_front(row, col) {
            return false;
        }
        let x = self.x_at(row, col);
        let y = self.y_at(row, col);
        x >= 0.0 && x <= (self.width - 1) as f64 && y >= 0.0 && y <= (self.height - 1) as f64
    }
}
