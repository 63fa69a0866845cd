//! Rigid-geometry primitives and the domain records shared by every other
//! module: vectors, quaternions, camera poses, intrinsics, Gaussians and
//! keyframes.
//!
//! Conventions: quaternions are `(w, x, y, z)` with the Hamilton product.
//! A [`Pose`] maps camera coordinates into the world (`world <- camera`), and
//! the camera frame is x right, y down, z forward.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis.scale(s / n);
        Quat::new(c, a.x, a.y, a.z)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Unit quaternion in the same direction. A zero quaternion maps to identity.
    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (q x v) + 2 q x (q x v)
        let q = Vec3::new(self.x, self.y, self.z);
        let t = q.cross(v).scale(2.0);
        v + t.scale(self.w) + q.cross(t)
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Rotation angle in `[0, pi]` between two unit quaternions.
    pub fn angle_to(self, o: Quat) -> f64 {
        let d = (self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z).abs();
        2.0 * d.min(1.0).acos()
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Camera pose, `world <- camera`. `translation` is the camera center.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation: rotation.normalize(),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Quat::IDENTITY, t)
    }

    /// Camera-frame point to world frame.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// World-frame point to camera frame.
    pub fn inverse_transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.conjugate().rotate(p - self.translation)
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: (a.rotation * b.rotation).normalize(),
        translation: a.rotation.rotate(b.translation) + a.translation,
    }
}

pub fn pose_inverse(p: &Pose) -> Pose {
    let inv = p.rotation.conjugate();
    Pose {
        rotation: inv,
        translation: -inv.rotate(p.translation),
    }
}

/// A rigid correction applied in the world frame: `x -> R x + t`.
pub type RigidTransform = Pose;

/// Pinhole intrinsics with near/far clip distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let c = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        };
        c.validate()?;
        Ok(c)
    }

    /// 64x48 camera with a ~77 degree horizontal field of view and a 15 m far
    /// clip, used by the synthetic scenes.
    pub fn desk_default() -> Self {
        Self {
            fx: 40.0,
            fy: 40.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
            near: 0.1,
            far: 15.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width >= 1
            && self.height >= 1
            && self.near > 0.0
            && self.near < self.far
            && self.far.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point to pixel coordinates `(u, v)`.
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Back-projects pixel `(u, v)` at depth `d` into the camera frame.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d)
    }
}

pub const SH_COEFFS: usize = 48;
pub const SH_PER_CHANNEL: usize = 16;
/// Degree-0 real spherical-harmonics basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

/// A single splat primitive.
///
/// Parameters are kept in `f32`, the precision of the on-disk record, so a
/// store roundtrip is bit-exact. `sh` is channel-major: coefficient `k` of
/// channel `c` lives at `sh[c * 16 + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub rotation: [f32; 4],
    pub scale: [f32; 3],
    pub opacity: f32,
    pub sh: [f32; SH_COEFFS],
    pub opt_state: Vec<u8>,
}

impl Gaussian {
    /// Isotropic Gaussian with the given base color in `[0, 1]`.
    pub fn new(position: Vec3, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        let mut sh = [0.0f32; SH_COEFFS];
        for (c, v) in color.iter().enumerate() {
            sh[c * SH_PER_CHANNEL] = ((v - 0.5) / SH_C0) as f32;
        }
        Self {
            position: position_f32(position),
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [scale as f32; 3],
            opacity: opacity as f32,
            sh,
            opt_state: Vec::new(),
        }
    }

    pub fn position(&self) -> Vec3 {
        let [x, y, z] = self.position;
        Vec3::new(x as f64, y as f64, z as f64)
    }

    pub fn rotation(&self) -> Quat {
        let [w, x, y, z] = self.rotation;
        Quat::new(w as f64, x as f64, y as f64, z as f64)
    }

    pub fn scale(&self) -> Vec3 {
        let [x, y, z] = self.scale;
        Vec3::new(x as f64, y as f64, z as f64)
    }

    /// Degree-0 color, clamped to `[0, 1]`.
    pub fn base_color(&self) -> [f64; 3] {
        std::array::from_fn(|c| (SH_C0 * self.sh[c * SH_PER_CHANNEL] as f64 + 0.5).clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .position
            .iter()
            .chain(&self.rotation)
            .chain(&self.scale)
            .chain(&self.sh)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite Gaussian parameter".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidInput("Gaussian scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidInput(format!(
                "Gaussian opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        Ok(())
    }
}

fn position_f32(p: Vec3) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

/// Moves a Gaussian by a rigid transform. Scale, opacity, SH and optimizer
/// state are carried over untouched.
pub fn transform_gaussian(g: &Gaussian, t: &RigidTransform) -> Gaussian {
    let mut out = g.clone();
    out.position = position_f32(t.transform_point(g.position()));
    let q = (t.rotation * g.rotation()).normalize();
    out.rotation = [q.w as f32, q.x as f32, q.y as f32, q.z as f32];
    out
}

/// A posed camera frame retained for map optimization.
///
/// Color is stored as 8-bit RGB (row-major, interleaved) and depth as `f32`
/// meters with `0` marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
    pub last_loss: f64,
    pub usage_remaining: u32,
    pub last_access: u64,
}

impl Keyframe {
    pub fn new(
        id: u64,
        pose: Pose,
        intrinsics: CameraIntrinsics,
        rgb: Vec<u8>,
        depth: Vec<f32>,
    ) -> Result<Self> {
        let kf = Self {
            id,
            pose,
            intrinsics,
            rgb,
            depth,
            last_loss: 0.0,
            usage_remaining: 0,
            last_access: 0,
        };
        kf.validate()?;
        Ok(kf)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.intrinsics.pixel_count();
        if self.rgb.len() != n * 3 || self.depth.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "keyframe {}: expected {} pixels, got rgb {} bytes and depth {} values",
                self.id,
                n,
                self.rgb.len(),
                self.depth.len()
            )));
        }
        if !self.last_loss.is_finite() || self.last_loss < 0.0 {
            return Err(Error::InvalidInput(format!(
                "keyframe {}: last_loss must be finite and non-negative",
                self.id
            )));
        }
        Ok(())
    }

    /// Color image as reals in `[0, 1]`.
    pub fn rgb_image(&self) -> crate::image::Image {
        crate::image::Image::from_rgb8(
            self.intrinsics.width as usize,
            self.intrinsics.height as usize,
            &self.rgb,
        )
    }

    pub fn depth_image(&self) -> crate::image::Image {
        crate::image::Image::from_depth(
            self.intrinsics.width as usize,
            self.intrinsics.height as usize,
            &self.depth,
        )
    }
}
