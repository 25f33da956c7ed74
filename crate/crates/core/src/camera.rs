//! Pinhole projection chain between adjacent views.
//!
//! The chain runs: back-project each pixel of the reference frame through its
//! depth, move the resulting points by the relative pose, and perspective-
//! project into the adjacent view. Composing the three steps per pixel gives
//! the continuous target coordinates that warping, occlusion reasoning, and
//! rigid flow are built on.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Mask, ProjectionMap};

/// Points with `z` at or below this are treated as behind the camera; the
/// perspective division result is not trusted there.
pub const Z_EPS: f64 = 1e-6;

/// Pinhole intrinsics. `(cx, cy)` is the principal point in pixel
/// coordinates; focal lengths are in pixels and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy), ("cx", cx), ("cy", cy)] {
            if !v.is_finite() {
                return Err(Error::DegenerateIntrinsics {
                    detail: format!("{name} = {v} is not finite"),
                });
            }
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::DegenerateIntrinsics {
                detail: format!("focal lengths must be positive, got fx = {fx}, fy = {fy}"),
            });
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid transform `q -> R q + t`. The rotation is kept orthonormal with
/// positive determinant; construction rejects anything off by more than 1e-9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Max absolute entry of `R^T R - I` accepted by [`Pose::new`].
pub const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().any(|v| !v.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotARotation {
                detail: "non-finite pose entry".into(),
            });
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let dev = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dev > ROTATION_TOL {
            return Err(Error::NotARotation {
                detail: format!("R^T R deviates from identity by {dev:.3e}"),
            });
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(Error::NotARotation {
                detail: format!("determinant {det:.6} is not +1 (reflection or degenerate)"),
            });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Accepts a rotation within `tol` of orthonormal and snaps it to the
    /// nearest true rotation, so downstream arithmetic sees a clean matrix.
    pub fn from_approximate(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self> {
        if rotation.iter().any(|v| !v.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotARotation {
                detail: "non-finite pose entry".into(),
            });
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let dev = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dev > tol {
            return Err(Error::NotARotation {
                detail: format!("R^T R deviates from identity by {dev:.3e} (tolerance {tol:.1e})"),
            });
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::NotARotation {
                detail: format!(
                    "determinant {:.6} is not +1 (reflection or degenerate)",
                    rotation.determinant()
                ),
            });
        }
        let snapped = *Rotation3::from_matrix(&rotation).matrix();
        Pose::new(snapped, translation)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about `axis` by `angle` (radians) followed by `translation`.
    pub fn from_axis_angle(
        axis: Vector3<f64>,
        angle: f64,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let unit = nalgebra::Unit::try_new(axis, 1e-12).ok_or_else(|| Error::NotARotation {
            detail: "rotation axis must be nonzero".into(),
        })?;
        let r = Rotation3::from_axis_angle(&unit, angle);
        Pose::new(*r.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * q + self.translation
    }

    /// `a.compose(&b)` applies `b` first: `(a o b)(q) = a(b(q))`.
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * b.rotation,
            translation: self.rotation * b.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 3x4 `[R | t]` flattening, the pose layout used on disk.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major_3x4(m: &[f64; 12]) -> (Matrix3<f64>, Vector3<f64>) {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        (rotation, translation)
    }
}

/// One 3D point per pixel, in camera coordinates of whichever frame produced
/// it. Same row-major layout as the grid types.
#[derive(Debug, Clone)]
pub struct PointMap {
    height: usize,
    width: usize,
    points: Vec<Vector3<f64>>,
}

impl PointMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> &Vector3<f64> {
        &self.points[row * self.width + col]
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
}

/// Lift every pixel of the reference frame to a 3D point:
/// `q = depth(x, y) * K^-1 [x, y, 1]^T`, so `q.z` equals the stored depth.
pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> PointMap {
    let (h, w) = (depth.height(), depth.width());
    let mut points = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let d = depth.at(row, col);
            let x = d * (col as f64 - k.cx) / k.fx;
            let y = d * (row as f64 - k.cy) / k.fy;
            points.push(Vector3::new(x, y, d));
        }
    }
    PointMap {
        height: h,
        width: w,
        points,
    }
}

/// Apply a rigid transform to every point of a point map.
pub fn transform_points(points: &PointMap, pose: &Pose) -> PointMap {
    PointMap {
        height: points.height,
        width: points.width,
        points: points.points.iter().map(|q| pose.apply(q)).collect(),
    }
}

/// Perspective-project a point map. Division happens unconditionally; the
/// `in_front` flag (`z > z_eps`) tells consumers which results to trust.
/// Callers that have no reason to deviate should pass [`Z_EPS`].
pub fn project(points: &PointMap, k: &Intrinsics, z_eps: f64) -> ProjectionMap {
    let n = points.points.len();
    let mut x_hat = Vec::with_capacity(n);
    let mut y_hat = Vec::with_capacity(n);
    let mut z_hat = Vec::with_capacity(n);
    let mut in_front = Vec::with_capacity(n);
    for q in &points.points {
        let z = q.z;
        x_hat.push(k.fx * q.x / z + k.cx);
        y_hat.push(k.fy * q.y / z + k.cy);
        z_hat.push(z);
        in_front.push(z > z_eps);
    }
    ProjectionMap::from_parts(points.height, points.width, x_hat, y_hat, z_hat, in_front)
}

/// Full chain: back-project through `depth`, move by `pose`, project. Exactly
/// the three-step composition, in one call.
pub fn project_depth(depth: &DepthMap, pose: &Pose, k: &Intrinsics, z_eps: f64) -> ProjectionMap {
    project(&transform_points(&backproject(depth, k), pose), k, z_eps)
}

/// Rigid flow induced by depth and relative pose: the displacement from each
/// pixel to its projection in the adjacent view. Pixels that land behind the
/// camera get zero flow and a cleared validity bit.
pub fn rigid_flow(depth: &DepthMap, pose: &Pose, k: &Intrinsics) -> (FlowField, Mask) {
    let proj = project_depth(depth, pose, k, Z_EPS);
    let (h, w) = (depth.height(), depth.width());
    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            if proj.in_front(row, col) {
                u.push(proj.x_at(row, col) - col as f64);
                v.push(proj.y_at(row, col) - row as f64);
                valid.push(1u8);
            } else {
                u.push(0.0);
                v.push(0.0);
                valid.push(0u8);
            }
        }
    }
    let flow = FlowField::new(h, w, u, v).expect("finite flow from finite projection");
    let mask = Mask::new(h, w, valid).expect("bits are 0/1");
    (flow, mask)
}
