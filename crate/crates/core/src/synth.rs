//! Synthetic rigid scenes with closed-form ray casting.
//!
//! Scenes are built from axis-aligned boxes and axis-aligned planes so every
//! intersection has an exact analytic solution — rendered depth carries no
//! marching error and can serve as the reference for geometric claims.
//! Rays are parametrized with a unit z-step in the camera frame, so the ray
//! parameter of a hit *is* its camera-space depth.
//!
//! Everything is deterministic: textures come from integer-hashed value
//! noise or checkerboards, and scene sampling uses an explicitly seeded
//! stream cipher generator.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Intrinsics, Pose, Z_EPS};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Image, Mask};

/// Minimum ray parameter accepted as a hit, rejecting self-intersections at
/// the camera origin.
const RAY_EPS: f64 = 1e-9;

/// Relative slack when comparing a reprojected depth against the first hit
/// along the verification ray; avoids false occlusion from roundoff at
/// grazing incidence.
const OCCLUSION_REL_TOL: f64 = 1e-6;

/// Procedural surface color, sampled at the 3D hit point in world
/// coordinates. Values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// Axis-aligned checkerboard with the given world-space period,
    /// alternating between `low` and `high` on all channels.
    Checker { period: f64, low: f64, high: f64 },
    /// Smooth value noise: integer-lattice hashes blended with a smoothstep
    /// fade, one decorrelated field per channel. `scale` is the lattice
    /// spacing per world axis — anisotropic scales let obliquely viewed
    /// surfaces (the ground) stay low-frequency on screen.
    ValueNoise {
        seed: u64,
        scale: Vector3<f64>,
        low: f64,
        high: f64,
    },
}

fn lattice_hash(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, p: Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let fade = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (x0, y0, z0) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let w = (if dx == 1 { fade.x } else { 1.0 - fade.x })
                    * (if dy == 1 { fade.y } else { 1.0 - fade.y })
                    * (if dz == 1 { fade.z } else { 1.0 - fade.z });
                acc += w * lattice_hash(seed, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}

impl Texture {
    /// Intensity of one channel at a world-space point.
    pub fn sample(&self, p: &Vector3<f64>, channel: usize) -> f64 {
        match self {
            Texture::Checker { period, low, high } => {
                let cell = (p.x / period).floor() + (p.y / period).floor() + (p.z / period).floor();
                if (cell as i64).rem_euclid(2) == 0 {
                    *high
                } else {
                    *low
                }
            }
            Texture::ValueNoise {
                seed,
                scale,
                low,
                high,
            } => {
                let q = Vector3::new(p.x / scale.x, p.y / scale.y, p.z / scale.z);
                let n = value_noise(seed.wrapping_add(0x9E37_79B9 * channel as u64), q);
                low + (high - low) * n
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// A scene body with exact ray intersections.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box spanning `[min, max]` componentwise.
    AxisBox {
        min: Vector3<f64>,
        max: Vector3<f64>,
        texture: Texture,
    },
    /// Plane perpendicular to `axis` at the given coordinate. `extent`, when
    /// present, restricts hits to an axis-aligned bounding box (a finite
    /// slab); `None` is the infinite plane.
    Plane {
        axis: Axis,
        offset: f64,
        extent: Option<(Vector3<f64>, Vector3<f64>)>,
        texture: Texture,
    },
}

impl Primitive {
    /// Smallest ray parameter `t > RAY_EPS` with `origin + t * dir` on the
    /// primitive, or `None`. Closed form for both primitive kinds.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::AxisBox { min, max, .. } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for ax in 0..3 {
                    let d = dir[ax];
                    if d == 0.0 {
                        if origin[ax] < min[ax] || origin[ax] > max[ax] {
                            return None;
                        }
                    } else {
                        let t1 = (min[ax] - origin[ax]) / d;
                        let t2 = (max[ax] - origin[ax]) / d;
                        t_enter = t_enter.max(t1.min(t2));
                        t_exit = t_exit.min(t1.max(t2));
                    }
                }
                (t_enter <= t_exit && t_enter > RAY_EPS).then_some(t_enter)
            }
            Primitive::Plane {
                axis,
                offset,
                extent,
                ..
            } => {
                let ax = axis.index();
                if dir[ax] == 0.0 {
                    return None;
                }
                let t = (offset - origin[ax]) / dir[ax];
                if !(t.is_finite() && t > RAY_EPS) {
                    return None;
                }
                if let Some((lo, hi)) = extent {
                    let p = origin + t * dir;
                    for i in 0..3 {
                        if i != ax && (p[i] < lo[i] || p[i] > hi[i]) {
                            return None;
                        }
                    }
                }
                Some(t)
            }
        }
    }

    fn texture(&self) -> &Texture {
        match self {
            Primitive::AxisBox { texture, .. } | Primitive::Plane { texture, .. } => texture,
        }
    }
}

/// Primitives listed in priority order for exact depth ties (first wins).
/// The scene must be total over the camera rays in use — in practice an
/// infinite background plane ahead of every camera; [`render`] panics on a
/// ray that escapes, since no operation here can represent a missing hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    /// First hit along the ray: smallest parameter, earlier primitive on an
    /// exact tie.
    fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, &Primitive)> {
        let mut best: Option<(f64, &Primitive)> = None;
        for prim in &self.primitives {
            if let Some(t) = prim.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, prim));
                }
            }
        }
        best
    }
}

/// A pinhole camera with a world-from-camera pose and a pixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    pub k: Intrinsics,
    pub pose: Pose,
    pub height: usize,
    pub width: usize,
}

impl CameraConfig {
    /// World-space ray through a pixel center, parametrized so that one unit
    /// of the ray parameter is one unit of camera-frame depth (the camera
    /// direction has z = 1 before rotation).
    fn ray(&self, row: usize, col: usize) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new(
            (col as f64 - self.k.cx) / self.k.fx,
            (row as f64 - self.k.cy) / self.k.fy,
            1.0,
        );
        (*self.pose.translation(), self.pose.rotation() * dir_cam)
    }

    /// Camera center in world coordinates.
    fn center(&self) -> Vector3<f64> {
        *self.pose.translation()
    }
}

/// Ray-cast the scene: per pixel, the texture intensity (3 channels) and the
/// camera-frame depth of the first hit.
///
/// # Panics
/// If a ray hits nothing, which violates the documented scene invariant.
pub fn render(scene: &Scene, cam: &CameraConfig) -> (Image, DepthMap) {
    let (h, w) = (cam.height, cam.width);
    let mut pixels = Vec::with_capacity(h * w * 3);
    let mut depths = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (origin, dir) = cam.ray(row, col);
            let (t, prim) = scene
                .first_hit(&origin, &dir)
                .expect("scene invariant violated: a camera ray escaped the background");
            let p = origin + t * dir;
            for ch in 0..3 {
                pixels.push(prim.texture().sample(&p, ch).clamp(0.0, 1.0));
            }
            depths.push(t);
        }
    }
    (
        Image::new(h, w, 3, pixels).expect("textures produce valid intensities"),
        DepthMap::new(h, w, depths).expect("hits are in front of the camera"),
    )
}

/// Reference visibility of every frame-t pixel in frame s, decided by ray
/// casting rather than pixel-grid reasoning: a pixel keeps 1 exactly when its
/// first-hit point, seen from camera s, is in front, inside the image, and
/// not strictly behind the first scene hit along the verification ray
/// (relative tolerance `1e-6 * depth`).
pub fn gt_occlusion(scene: &Scene, cam_t: &CameraConfig, cam_s: &CameraConfig) -> Mask {
    let s_from_world = cam_s.pose.inverse();
    Mask::from_fn(cam_t.height, cam_t.width, |row, col| {
        let (origin, dir) = cam_t.ray(row, col);
        let (t, _) = scene
            .first_hit(&origin, &dir)
            .expect("scene invariant violated: a camera ray escaped the background");
        let p_world = origin + t * dir;
        let p_s = s_from_world.apply(&p_world);
        if p_s.z <= Z_EPS {
            return false;
        }
        let x = cam_s.k.fx * p_s.x / p_s.z + cam_s.k.cx;
        let y = cam_s.k.fy * p_s.y / p_s.z + cam_s.k.cy;
        if !(x >= 0.0
            && x <= (cam_s.width - 1) as f64
            && y >= 0.0
            && y <= (cam_s.height - 1) as f64)
        {
            return false;
        }
        // Verification ray from camera s straight through the point, again
        // with unit z-step so its parameter is camera-s depth.
        let dir_s_world = cam_s.pose.rotation() * (p_s / p_s.z);
        let (first, _) = scene
            .first_hit(&cam_s.center(), &dir_s_world)
            .expect("scene invariant violated: a camera ray escaped the background");
        p_s.z <= first * (1.0 + OCCLUSION_REL_TOL)
    })
    .expect("bits are 0/1")
}

/// Reference flow of frame t into frame s: the displacement of each pixel's
/// first-hit point under reprojection. Flow values are defined wherever the
/// point lands in front of camera s; the mask additionally requires the
/// target to be inside the image.
pub fn gt_flow(scene: &Scene, cam_t: &CameraConfig, cam_s: &CameraConfig) -> (FlowField, Mask) {
    let (h, w) = (cam_t.height, cam_t.width);
    let s_from_world = cam_s.pose.inverse();
    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    let mut bits = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (origin, dir) = cam_t.ray(row, col);
            let (t, _) = scene
                .first_hit(&origin, &dir)
                .expect("scene invariant violated: a camera ray escaped the background");
            let p_s = s_from_world.apply(&(origin + t * dir));
            if p_s.z <= Z_EPS {
                u.push(0.0);
                v.push(0.0);
                bits.push(0);
                continue;
            }
            let x = cam_s.k.fx * p_s.x / p_s.z + cam_s.k.cx;
            let y = cam_s.k.fy * p_s.y / p_s.z + cam_s.k.cy;
            u.push(x - col as f64);
            v.push(y - row as f64);
            let inside = x >= 0.0
                && x <= (cam_s.width - 1) as f64
                && y >= 0.0
                && y <= (cam_s.height - 1) as f64;
            bits.push(u8::from(inside));
        }
    }
    (
        FlowField::new(h, w, u, v).expect("finite flow from finite geometry"),
        Mask::new(h, w, bits).expect("bits are 0/1"),
    )
}

/// One sampled benchmark instance: a static scene viewed from two nearby
/// cameras. `cam_t` is the reference frame (identity pose).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub scene: Scene,
    pub cam_t: CameraConfig,
    pub cam_s: CameraConfig,
}

impl ScenePair {
    /// Relative pose mapping reference-camera points into the other camera.
    pub fn pose_t_to_s(&self) -> Pose {
        self.cam_s.pose.inverse().compose(&self.cam_t.pose)
    }
}

const SUITE_HEIGHT: usize = 128;
const SUITE_WIDTH: usize = 416;
const SUITE_FOCAL: f64 = 200.0;
const BACKGROUND_Z: f64 = 40.0;
const GROUND_Y: f64 = 1.5;
/// The ground plane stops here; beyond it rays fall through to the
/// background, keeping the grazing far-ground band (where one pixel spans
/// several texture periods and bilinear resampling breaks down) out of the
/// rendered frames.
const GROUND_FAR_Z: f64 = 12.0;

fn sample_unit_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let a = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = a.norm();
        if n > 0.1 {
            return a / n;
        }
    }
}

fn sample_pair(rng: &mut ChaCha8Rng) -> ScenePair {
    let k = Intrinsics::new(
        SUITE_FOCAL,
        SUITE_FOCAL,
        (SUITE_WIDTH - 1) as f64 / 2.0,
        (SUITE_HEIGHT - 1) as f64 / 2.0,
    )
    .expect("suite intrinsics are valid");

    let mut primitives = Vec::new();
    // Fronto-parallel far wall: guarantees every ray terminates. Lattice
    // spacing keeps its on-screen texture period comfortably above the
    // bilinear-resampling regime (~12 px at depth 40).
    primitives.push(Primitive::Plane {
        axis: Axis::Z,
        offset: BACKGROUND_Z,
        extent: None,
        texture: Texture::ValueNoise {
            seed: rng.gen(),
            scale: Vector3::new(2.5, 2.5, 2.5),
            low: 0.15,
            high: 0.85,
        },
    });
    // Ground plane, clipped at GROUND_FAR_Z. Viewed obliquely, one pixel
    // covers far more world distance along z than along x, so the texture
    // is stretched along z to stay smooth on screen.
    primitives.push(Primitive::Plane {
        axis: Axis::Y,
        offset: GROUND_Y,
        extent: Some((
            Vector3::new(-40.0, GROUND_Y, 0.0),
            Vector3::new(40.0, GROUND_Y, GROUND_FAR_Z),
        )),
        texture: Texture::ValueNoise {
            seed: rng.gen(),
            scale: Vector3::new(0.6, 1.0, 4.0),
            low: 0.15,
            high: 0.85,
        },
    });
    for _ in 0..rng.gen_range(1..=3usize) {
        let z0: f64 = rng.gen_range(2.0..16.0);
        let sx = rng.gen_range(0.6..2.4);
        let sy = rng.gen_range(0.6..2.4);
        let sz = rng.gen_range(0.5..3.0);
        let x_c = rng.gen_range(-0.5 * z0..0.5 * z0);
        // Keep boxes resting above the ground line.
        let y_top = rng.gen_range(-1.2..(0.8f64).min(GROUND_Y - sy));
        primitives.push(Primitive::AxisBox {
            min: Vector3::new(x_c - sx / 2.0, y_top, z0),
            max: Vector3::new(x_c + sx / 2.0, y_top + sy, z0 + sz),
            texture: Texture::ValueNoise {
                seed: rng.gen(),
                scale: Vector3::new(1.0, 1.0, 1.0) * (z0 / 16.0).max(0.15),
                low: 0.15,
                high: 0.85,
            },
        });
    }

    let axis = sample_unit_axis(rng);
    let angle = rng.gen_range(0.0..0.02);
    let tx_mag = rng.gen_range(0.05..0.35);
    let tx = if rng.gen_bool(0.5) { tx_mag } else { -tx_mag };
    let ty = rng.gen_range(-0.03..0.03);
    let tz = rng.gen_range(0.0..0.25);
    let cam_s_pose = Pose::from_axis_angle(axis, angle, Vector3::new(tx, ty, tz))
        .expect("sampled axis is a unit vector");

    ScenePair {
        scene: Scene { primitives },
        cam_t: CameraConfig {
            k,
            pose: Pose::identity(),
            height: SUITE_HEIGHT,
            width: SUITE_WIDTH,
        },
        cam_s: CameraConfig {
            k,
            pose: cam_s_pose,
            height: SUITE_HEIGHT,
            width: SUITE_WIDTH,
        },
    }
}

/// Reproducible benchmark scenes: a clipped ground plane, a far wall, and
/// 1–3 boxes at depths 2–20, viewed from two nearby cameras (translation
/// magnitude under 0.5, rotation under 0.02 rad, 128x416 frames). Candidates
/// with fewer than 1% occluded pixels are resampled so every instance
/// exercises the occlusion machinery.
pub fn random_suite(seed: u64, n: usize) -> Result<Vec<ScenePair>> {
    if n == 0 {
        return Err(Error::param("suite size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut accepted = None;
        for _ in 0..256 {
            let pair = sample_pair(&mut rng);
            let occ = gt_occlusion(&pair.scene, &pair.cam_t, &pair.cam_s);
            if occ.count_zeros() * 100 >= occ.bits().len() {
                accepted = Some(pair);
                break;
            }
        }
        out.push(accepted.expect("could not sample a scene with 1% occlusion in 256 tries"));
    }
    Ok(out)
}
