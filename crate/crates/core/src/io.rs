//! File formats: PFM scalar grids, Middlebury `.flo` flow fields, binary PGM
//! masks, P6 PPM / PNG photographs, camera JSON, and plain-text pose
//! trajectories.
//!
//! Grids hold `f64` in memory; the binary float formats store `f32`, so a
//! write narrows and a read widens. Round trips are bit-exact at 32-bit
//! precision. All multi-byte payloads are little-endian.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Image, Mask, ScalarGrid};
use crate::metrics::{PoseConvention, TrajectorySnippet};

/// Orthonormality tolerance accepted for rotations read from camera JSON;
/// anything within it is snapped to the nearest exact rotation.
pub const CAMERA_JSON_ROTATION_TOL: f64 = 1e-6;

const FLO_MAGIC: f32 = 202021.25; // spells "PIEH" in little-endian bytes

// ── header tokenizing ────────────────────────────────────────────────────

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited ASCII token. Netpbm-style `#` comments are
    /// skipped when `comments` is set (PGM/PPM allow them, PFM does not).
    fn token(&mut self, comments: bool) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if comments && self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()
    }

    /// Consume the single whitespace byte that separates the header from the
    /// binary payload.
    fn expect_payload_separator(&mut self) -> bool {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn parse_dim(token: &str, path: &Path, what: &str) -> Result<usize> {
    let n: usize = token
        .parse()
        .map_err(|_| Error::header(path, format!("{what} is not a positive integer: {token:?}")))?;
    if n == 0 {
        return Err(Error::header(path, format!("{what} must be nonzero")));
    }
    Ok(n)
}

// ── PFM (scalar grids: depth maps, error maps) ───────────────────────────

/// Write a grid as grayscale PFM: header `Pf`, negative scale (little-endian),
/// `f32` samples, rows stored bottom-up.
pub fn write_pfm(path: impl AsRef<Path>, grid: &ScalarGrid) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (grid.height(), grid.width());
    let mut out = Vec::with_capacity(32 + h * w * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", w, h).as_bytes());
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&(grid.at(row, col) as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a grayscale PFM into a plain scalar grid. Rejects the color `PF`
/// variant, positive (big-endian) scales, and non-finite samples.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<ScalarGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes);

    match cur.token(false) {
        Some("Pf") => {}
        Some("PF") => return Err(Error::ColorPfm { path: path.into() }),
        other => {
            return Err(Error::header(
                path,
                format!("expected \"Pf\" magic, got {other:?}"),
            ))
        }
    }
    let w = parse_dim(
        cur.token(false)
            .ok_or_else(|| Error::header(path, "missing width"))?,
        path,
        "width",
    )?;
    let h = parse_dim(
        cur.token(false)
            .ok_or_else(|| Error::header(path, "missing height"))?,
        path,
        "height",
    )?;
    let scale_tok = cur
        .token(false)
        .ok_or_else(|| Error::header(path, "missing scale"))?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::header(path, format!("scale is not a number: {scale_tok:?}")))?;
    if scale >= 0.0 {
        return Err(Error::header(
            path,
            format!("scale {scale} is not negative; only little-endian PFM is supported"),
        ));
    }
    if !cur.expect_payload_separator() {
        return Err(Error::header(path, "missing separator before payload"));
    }

    let payload = cur.rest();
    let expected = h * w * 4;
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::header(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }

    let mut data = vec![0.0f64; h * w];
    for (file_row, row_bytes) in payload.chunks_exact(w * 4).enumerate() {
        let row = h - 1 - file_row; // bottom-up storage
        for (col, quad) in row_bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([quad[0], quad[1], quad[2], quad[3]]);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.into(),
                    row,
                    col,
                });
            }
            data[row * w + col] = f64::from(v);
        }
    }
    ScalarGrid::new(h, w, data)
}

/// Read a PFM that must contain strictly positive values (a depth map).
pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    let grid = read_pfm(path)?;
    DepthMap::new(grid.height(), grid.width(), grid.values().to_vec())
}

// ── Middlebury .flo flow fields ──────────────────────────────────────────

/// Write a flow field: float magic 202021.25, `i32` width and height, then
/// interleaved `(u, v)` `f32` pairs in row-major order.
pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(12 + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for row in 0..h {
        for col in 0..w {
            out.extend_from_slice(&(flow.u_at(row, col) as f32).to_le_bytes());
            out.extend_from_slice(&(flow.v_at(row, col) as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic = f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != FLO_MAGIC {
        return Err(Error::header(
            path,
            format!("bad magic {magic}, expected {FLO_MAGIC}"),
        ));
    }
    let w = i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let h = i32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if w <= 0 || h <= 0 {
        return Err(Error::header(path, format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let payload = &bytes[12..];
    let expected = h * w * 8;
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::header(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let mut u = vec![0.0f64; h * w];
    let mut v = vec![0.0f64; h * w];
    for (i, pair) in payload.chunks_exact(8).enumerate() {
        let uu = f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]);
        let vv = f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]);
        if !uu.is_finite() || !vv.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.into(),
                row: i / w,
                col: i % w,
            });
        }
        u[i] = f64::from(uu);
        v[i] = f64::from(vv);
    }
    FlowField::new(h, w, u, v)
}

// ── binary PGM masks ─────────────────────────────────────────────────────

/// Write a mask as binary P5 PGM with values {0, 255}.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::with_capacity(32 + h * w);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", w, h).as_bytes());
    out.extend(mask.bits().iter().map(|b| b * 255));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a P5 PGM mask; every sample must be exactly 0 or 255.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, payload) = read_netpbm_header(path, &bytes, "P5")?;
    let expected = h * w;
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::header(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let mut bits = Vec::with_capacity(expected);
    for (i, b) in payload.iter().enumerate() {
        match b {
            0 => bits.push(0u8),
            255 => bits.push(1u8),
            other => {
                return Err(Error::NonBinaryMask {
                    path: path.into(),
                    value: *other,
                    row: i / w,
                    col: i % w,
                })
            }
        }
    }
    Mask::new(h, w, bits)
}

fn read_netpbm_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &str,
) -> Result<(usize, usize, &'a [u8])> {
    let mut cur = Cursor::new(bytes);
    match cur.token(true) {
        Some(m) if m == magic => {}
        other => {
            return Err(Error::header(
                path,
                format!("expected {magic:?} magic, got {other:?}"),
            ))
        }
    }
    let w = parse_dim(
        cur.token(true)
            .ok_or_else(|| Error::header(path, "missing width"))?,
        path,
        "width",
    )?;
    let h = parse_dim(
        cur.token(true)
            .ok_or_else(|| Error::header(path, "missing height"))?,
        path,
        "height",
    )?;
    let maxval = cur
        .token(true)
        .ok_or_else(|| Error::header(path, "missing maxval"))?;
    if maxval != "255" {
        return Err(Error::header(
            path,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    if !cur.expect_payload_separator() {
        return Err(Error::header(path, "missing separator before payload"));
    }
    Ok((h, w, cur.rest()))
}

// ── P6 PPM / PNG photographs ─────────────────────────────────────────────

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write an image as binary P6 PPM. Single-channel images are replicated to
/// gray RGB; intensities are quantized by `round(v * 255)`.
pub fn write_image_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (image.height(), image.width());
    let mut out = Vec::with_capacity(32 + h * w * 3);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", w, h).as_bytes());
    for row in 0..h {
        for col in 0..w {
            if image.channels() == 1 {
                let g = quantize(image.at(row, col, 0));
                out.extend_from_slice(&[g, g, g]);
            } else {
                for ch in 0..3 {
                    out.push(quantize(image.at(row, col, ch)));
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a binary P6 PPM as a 3-channel image with intensities `byte / 255`.
pub fn read_image_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, payload) = read_netpbm_header(path, &bytes, "P6")?;
    let expected = h * w * 3;
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::header(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let data = payload.iter().map(|b| f64::from(*b) / 255.0).collect();
    Image::new(h, w, 3, data)
}

/// Write a PNG: 8-bit grayscale for single-channel images, 8-bit RGB for
/// three-channel ones.
pub fn write_image_png(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (image.height() as u32, image.width() as u32);
    let to_io = |e: image::ImageError| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::header(path, other.to_string()),
    };
    if image.channels() == 1 {
        let buf: Vec<u8> = image.values().iter().map(|v| quantize(*v)).collect();
        image::GrayImage::from_raw(w, h, buf)
            .expect("buffer sized from image dims")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(to_io)
    } else {
        let buf: Vec<u8> = image.values().iter().map(|v| quantize(*v)).collect();
        image::RgbImage::from_raw(w, h, buf)
            .expect("buffer sized from image dims")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(to_io)
    }
}

/// Read a PNG as an image with intensities `byte / 255`; grayscale files give
/// one channel, everything else is converted to RGB.
pub fn read_image_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::header(path, other.to_string()),
    })?;
    match dynamic {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data = gray
                .as_raw()
                .iter()
                .map(|b| f64::from(*b) / 255.0)
                .collect();
            Image::new(h as usize, w as usize, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.as_raw().iter().map(|b| f64::from(*b) / 255.0).collect();
            Image::new(h as usize, w as usize, 3, data)
        }
    }
}

/// Read a photograph, dispatching on the file extension (`.png` vs PPM).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_image_png(path),
        _ => read_image_ppm(path),
    }
}

// ── camera JSON ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 3x4 `[R | t]`.
    pose: Vec<f64>,
}

/// Read intrinsics plus a relative pose from JSON. The pose field is twelve
/// row-major `[R | t]` numbers; `R` must be orthonormal within 1e-6 and is
/// snapped to the nearest exact rotation.
pub fn read_camera_json(path: impl AsRef<Path>) -> Result<(Intrinsics, Pose)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: CameraJson = serde_json::from_str(&text).map_err(|e| Error::MalformedCamera {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let k = Intrinsics::new(parsed.fx, parsed.fy, parsed.cx, parsed.cy)?;
    if parsed.pose.len() != 12 {
        return Err(Error::MalformedCamera {
            path: path.into(),
            detail: format!(
                "pose must hold 12 numbers (3x4 row-major), got {}",
                parsed.pose.len()
            ),
        });
    }
    let mut flat = [0.0f64; 12];
    flat.copy_from_slice(&parsed.pose);
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedCamera {
            path: path.into(),
            detail: "non-finite pose entry".into(),
        });
    }
    let (r, t) = Pose::from_row_major_3x4(&flat);
    let pose = Pose::from_approximate(r, t, CAMERA_JSON_ROTATION_TOL)?;
    Ok((k, pose))
}

pub fn write_camera_json(path: impl AsRef<Path>, k: &Intrinsics, pose: &Pose) -> Result<()> {
    let path = path.as_ref();
    let record = CameraJson {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        pose: pose.to_row_major_3x4().to_vec(),
    };
    let text = serde_json::to_string_pretty(&record).expect("camera record serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

// ── pose trajectories (plain text) ───────────────────────────────────────

/// Read a trajectory: one 3x4 row-major pose per line, twelve numbers
/// separated by whitespace. An optional leading `# camera_from_world` or
/// `# world_from_camera` comment declares the convention; the default is
/// world-from-camera.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<TrajectorySnippet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut convention = PoseConvention::WorldFromCamera;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            match comment.trim() {
                "camera_from_world" => convention = PoseConvention::CameraFromWorld,
                "world_from_camera" => convention = PoseConvention::WorldFromCamera,
                other => {
                    return Err(Error::header(
                        path,
                        format!("line {}: unknown convention {other:?}", lineno + 1),
                    ))
                }
            }
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::header(path, format!("line {}: bad number {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if nums.len() != 12 {
            return Err(Error::header(
                path,
                format!(
                    "line {}: expected 12 numbers, got {}",
                    lineno + 1,
                    nums.len()
                ),
            ));
        }
        let mut flat = [0.0f64; 12];
        flat.copy_from_slice(&nums);
        let (r, t): (Matrix3<f64>, Vector3<f64>) = Pose::from_row_major_3x4(&flat);
        poses.push(Pose::from_approximate(r, t, CAMERA_JSON_ROTATION_TOL)?);
    }
    TrajectorySnippet::new(poses, convention)
}

/// Write a trajectory in the same format `read_trajectory` accepts. Numbers
/// use the shortest representation that round-trips exactly.
pub fn write_trajectory(path: impl AsRef<Path>, snippet: &TrajectorySnippet) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    text.push_str(match snippet.convention() {
        PoseConvention::WorldFromCamera => "# world_from_camera\n",
        PoseConvention::CameraFromWorld => "# camera_from_world\n",
    });
    for pose in snippet.poses() {
        let flat = pose.to_row_major_3x4();
        let line: Vec<String> = flat.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
