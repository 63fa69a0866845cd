//! Edge-driven placement of new Gaussians.
//!
//! Pixels are scored by the normalized Laplacian-of-Gaussian magnitude of the
//! input frame minus that of the current render, so areas the map already
//! reproduces attract few new primitives. Sampled pixels are lifted to 3D with
//! the keyframe depth.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Gaussian, Keyframe, Vec3};
use crate::image::{Image, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub log_sigma: f64,
    pub kernel_radius: usize,
    pub samples_per_keyframe: usize,
    /// Isotropic scale is `init_scale_factor * depth / fx`.
    pub init_scale_factor: f64,
    pub init_opacity: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            log_sigma: 1.0,
            kernel_radius: 2,
            samples_per_keyframe: 2000,
            init_scale_factor: 1.0,
            init_opacity: 0.1,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.log_sigma > 0.0
            && self.kernel_radius > 0
            && self.samples_per_keyframe > 0
            && self.init_scale_factor > 0.0
            && self.init_opacity > 0.0
            && self.init_opacity <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("bad sample config {self:?}")))
        }
    }
}

fn log_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let s2 = sigma * sigma;
    let mut k = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            let q = (dx * dx + dy * dy) as f64 / (2.0 * s2);
            k.push(-(1.0 - q) * (-q).exp() / (std::f64::consts::PI * s2 * s2));
        }
    }
    k
}

fn luma(img: &Image) -> Vec<f64> {
    let n = img.width * img.height;
    match img.channels {
        1 => img.data.clone(),
        c if c >= 3 => (0..n)
            .map(|i| {
                let p = &img.data[i * c..];
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            })
            .collect(),
        c => (0..n).map(|i| img.data[i * c]).collect(),
    }
}

/// Max-normalized magnitude of the Laplacian of Gaussian of the luma.
///
/// The response at a pixel is taken relative to the pixel itself and border
/// samples are clamped to the edge, so flat regions (including near borders)
/// score exactly zero.
pub fn log_norm(rgb: &Image, cfg: &SampleConfig) -> ScalarMap {
    let (w, h) = (rgb.width, rgb.height);
    let gray = luma(rgb);
    let k = log_kernel(cfg.log_sigma, cfg.kernel_radius);
    let r = cfg.kernel_radius as isize;
    let side = 2 * r + 1;
    let mut out = Image::new(w, h, 1);
    for row in 0..h as isize {
        for col in 0..w as isize {
            let center = gray[(row as usize) * w + col as usize];
            let mut acc = 0.0;
            for dy in -r..=r {
                let rr = (row + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let cc = (col + dx).clamp(0, w as isize - 1) as usize;
                    acc += k[((dy + r) * side + dx + r) as usize] * (gray[rr * w + cc] - center);
                }
            }
            out.data[(row as usize) * w + col as usize] = acc.abs();
        }
    }
    let m = out.max();
    if m > 0.0 {
        out.data.iter_mut().for_each(|v| *v /= m);
    }
    out
}

/// `max(p_input - p_rendered, 0)` per pixel.
pub fn sampling_probability(p_input: &ScalarMap, p_rendered: &ScalarMap) -> Result<ScalarMap> {
    if !p_input.same_shape(p_rendered) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            p_input.width, p_input.height, p_rendered.width, p_rendered.height
        )));
    }
    let mut out = p_input.clone();
    for (o, r) in out.data.iter_mut().zip(&p_rendered.data) {
        *o = (*o - r).max(0.0);
    }
    Ok(out)
}

/// Draws up to `n` distinct pixels with probability proportional to `ps`.
/// Returns `(row, col)` pairs in draw order.
pub fn sample_pixels(ps: &ScalarMap, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let positive: Vec<usize> = (0..ps.data.len())
        .filter(|&i| ps.data[i] > 0.0 && ps.data[i].is_finite())
        .collect();
    let amount = n.min(positive.len());
    if amount == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample_weighted(&mut rng, positive.len(), |i| ps.data[positive[i]], amount)
        .expect("weights are positive and finite");
    picked
        .into_iter()
        .map(|i| {
            let p = positive[i];
            (p / ps.width, p % ps.width)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lifted {
    pub gaussians: Vec<Gaussian>,
    /// Pixels dropped for lacking a positive depth.
    pub skipped: usize,
}

/// Unprojects sampled pixels with the keyframe depth and colors them from the
/// keyframe image.
pub fn lift_to_gaussians(pixels: &[(usize, usize)], kf: &Keyframe, cfg: &SampleConfig) -> Lifted {
    let intr = &kf.intrinsics;
    let w = intr.width as usize;
    let mut out = Lifted::default();
    for &(row, col) in pixels {
        let i = row * w + col;
        let d = kf.depth[i] as f64;
        if !(d > 0.0 && d.is_finite()) {
            out.skipped += 1;
            continue;
        }
        let cam = intr.unproject(col as f64, row as f64, d);
        let color = std::array::from_fn(|c| kf.rgb[i * 3 + c] as f64 / 255.0);
        out.gaussians.push(Gaussian::new(
            kf.pose.transform_point(cam),
            cfg.init_scale_factor * d / intr.fx,
            cfg.init_opacity,
            color,
        ));
    }
    out
}

/// Gaussians for tracker keypoints given in world coordinates. Scale follows
/// the same depth rule as sampled pixels; points behind the camera are skipped.
pub fn lift_points(points: &[(Vec3, [f64; 3])], kf: &Keyframe, cfg: &SampleConfig) -> Lifted {
    let mut out = Lifted::default();
    for &(p, color) in points {
        let d = kf.pose.inverse_transform_point(p).z;
        if !(d > 0.0 && d.is_finite()) {
            out.skipped += 1;
            continue;
        }
        out.gaussians.push(Gaussian::new(
            p,
            cfg.init_scale_factor * d / kf.intrinsics.fx,
            cfg.init_opacity,
            color,
        ));
    }
    out
}
