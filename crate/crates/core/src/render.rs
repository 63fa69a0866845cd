//! Forward CPU splat renderer and the reconstruction losses.
//!
//! Each Gaussian is projected to a 2D footprint with the first-order (EWA)
//! approximation of the perspective projection, then composited front to back
//! in ascending camera depth. Only the degree-0 spherical-harmonics term is
//! shaded. Footprints are truncated at three standard deviations.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Gaussian, Keyframe, Pose, Vec3};
use crate::image::Image;

/// Screen-space variance added to every footprint, in pixels squared.
const FOOTPRINT_DILATION: f64 = 0.3;
/// Mahalanobis radius (squared) beyond which a footprint contributes nothing.
const CUTOFF_SQ: f64 = 9.0;
/// Pixels whose transmittance falls below this stop accumulating.
const MIN_TRANSMITTANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub rgb: Image,
    pub depth: Image,
    pub alpha: Image,
    pub stats: RenderStats,
}

/// Work counters, used by the replay cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub splats: u64,
    pub fragments: u64,
}

/// Gaussian falloff shifted to reach exactly zero at the cutoff radius, so
/// coverage is continuous in position. Equals 1 at the center.
fn falloff(d2: f64) -> f64 {
    let floor = (-0.5 * CUTOFF_SQ).exp();
    (((-0.5 * d2).exp() - floor) / (1.0 - floor)).max(0.0)
}

struct Splat<'a> {
    g: &'a Gaussian,
    depth: f64,
    mean: (f64, f64),
    conic: (f64, f64, f64),
    radius: f64,
    color: [f64; 3],
    opacity: f64,
}

/// Canonical order for splats at identical depth so the output does not
/// depend on input order.
fn gaussian_order(a: &Gaussian, b: &Gaussian) -> Ordering {
    let bits = |g: &Gaussian| {
        g.position
            .iter()
            .chain(&g.rotation)
            .chain(&g.scale)
            .chain(std::iter::once(&g.opacity))
            .chain(&g.sh)
            .map(|v| v.to_bits())
            .collect::<Vec<u32>>()
    };
    bits(a).cmp(&bits(b)).then_with(|| a.opt_state.cmp(&b.opt_state))
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

fn project<'a>(
    g: &'a Gaussian,
    world_to_cam: &[[f64; 3]; 3],
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Option<Splat<'a>> {
    let t = pose.inverse_transform_point(g.position());
    if !(t.z > intr.near && t.z <= intr.far) {
        return None;
    }
    // Sigma_world = R S S^T R^T; camera covariance W Sigma W^T.
    let r = g.rotation().normalize().to_matrix();
    let s = g.scale();
    let s2 = [s.x * s.x, s.y * s.y, s.z * s.z];
    let rs: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| r[i][j] * s2[j]));
    let sigma = mat_mul(&rs, &transpose(&r));
    let m = mat_mul(world_to_cam, &sigma);
    let cov = mat_mul(&m, &transpose(world_to_cam));

    let Vec3 { x, y, z } = t;
    let j = [
        [intr.fx / z, 0.0, -intr.fx * x / (z * z)],
        [0.0, intr.fy / z, -intr.fy * y / (z * z)],
    ];
    let mut c2 = [[0.0f64; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            c2[a][b] = (0..3)
                .map(|k| (0..3).map(|l| j[a][k] * cov[k][l] * j[b][l]).sum::<f64>())
                .sum();
        }
    }
    let (ca, cb, cc) = (
        c2[0][0] + FOOTPRINT_DILATION,
        c2[0][1],
        c2[1][1] + FOOTPRINT_DILATION,
    );
    let det = ca * cc - cb * cb;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (ca + cc);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(Splat {
        g,
        depth: z,
        mean: (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy),
        conic: (cc / det, -cb / det, ca / det),
        radius: CUTOFF_SQ.sqrt() * lambda_max.sqrt(),
        color: g.base_color(),
        opacity: (g.opacity as f64).clamp(0.0, 1.0),
    })
}

/// Renders color, expected depth and coverage from `pose`.
///
/// Pixel `(row, col)` is sampled at image coordinates `(u, v) = (col, row)`.
/// Splats outside `(near, far]` in camera depth are skipped. Depth is the
/// compositing-weighted mean of splat depths, 0 where nothing contributes.
pub fn render<'a>(
    gaussians: impl IntoIterator<Item = &'a Gaussian>,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> RenderedFrame {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let world_to_cam = transpose(&pose.rotation.normalize().to_matrix());
    let mut splats: Vec<Splat> = gaussians
        .into_iter()
        .filter_map(|g| project(g, &world_to_cam, pose, intr))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then_with(|| gaussian_order(a.g, b.g))
    });

    let n = w * h;
    let mut transmittance = vec![1.0f64; n];
    let mut rgb = vec![0.0f64; n * 3];
    let mut depth_acc = vec![0.0f64; n];
    let mut weight_acc = vec![0.0f64; n];
    let mut stats = RenderStats {
        splats: splats.len() as u64,
        fragments: 0,
    };

    for sp in &splats {
        let (mx, my) = sp.mean;
        let c0 = ((mx - sp.radius).floor().max(0.0)) as usize;
        let r0 = ((my - sp.radius).floor().max(0.0)) as usize;
        let c1 = (mx + sp.radius).ceil().min(w as f64 - 1.0);
        let r1 = (my + sp.radius).ceil().min(h as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let (c1, r1) = (c1 as usize, r1 as usize);
        let (a, b, c) = sp.conic;
        for row in r0..=r1 {
            let dy = row as f64 - my;
            for col in c0..=c1 {
                let p = row * w + col;
                let t = transmittance[p];
                if t < MIN_TRANSMITTANCE {
                    continue;
                }
                let dx = col as f64 - mx;
                let d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if d2 > CUTOFF_SQ {
                    continue;
                }
                stats.fragments += 1;
                let alpha = (sp.opacity * falloff(d2)).min(1.0);
                if alpha <= 0.0 {
                    continue;
                }
                let wgt = t * alpha;
                for ch in 0..3 {
                    rgb[p * 3 + ch] += wgt * sp.color[ch];
                }
                depth_acc[p] += wgt * sp.depth;
                weight_acc[p] += wgt;
                transmittance[p] = t * (1.0 - alpha);
            }
        }
    }

    let depth = depth_acc
        .iter()
        .zip(&weight_acc)
        .map(|(&d, &wt)| if wt > 0.0 { d / wt } else { 0.0 })
        .collect();
    RenderedFrame {
        rgb: Image {
            width: w,
            height: h,
            channels: 3,
            data: rgb,
        },
        depth: Image {
            width: w,
            height: h,
            channels: 1,
            data: depth,
        },
        alpha: Image {
            width: w,
            height: h,
            channels: 1,
            data: transmittance.iter().map(|t| 1.0 - t).collect(),
        },
        stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 0.2,
            lambda_depth: 0.5,
        }
    }
}

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )))
    }
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k: [f64; 2 * SSIM_RADIUS + 1] = std::array::from_fn(|i| {
        let x = i as f64 - SSIM_RADIUS as f64;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur of one channel with zero padding.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let c = col as isize + i as isize - r as isize;
                if c >= 0 && (c as usize) < w {
                    acc += kv * src[row * w + c as usize];
                }
            }
            tmp[row * w + col] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let rr = row as isize + i as isize - r as isize;
                if rr >= 0 && (rr as usize) < h {
                    acc += kv * tmp[rr as usize * w + col];
                }
            }
            out[row * w + col] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels: 11x11 Gaussian window with
/// sigma 1.5, zero-padded borders, constants for a `[0, 1]` range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    if w * h * ch == 0 {
        return Err(Error::DimensionMismatch("empty image".into()));
    }
    let k = ssim_window();
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..w * h).map(|i| a.data[i * ch + c]).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.data[i * ch + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let sxx = blur(&xx, w, h, &k);
        let syy = blur(&yy, w, h, &k);
        let sxy = blur(&xy, w, h, &k);
        for i in 0..w * h {
            let (m1, m2) = (mx[i], my[i]);
            let v1 = sxx[i] - m1 * m1;
            let v2 = syy[i] - m2 * m2;
            let cov = sxy[i] - m1 * m2;
            let num = (2.0 * m1 * m2 + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (m1 * m1 + m2 * m2 + SSIM_C1) * (v1 + v2 + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (w * h * ch) as f64)
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / n as f64
}

/// `(1 - lambda_s) * L1 + lambda_s * (1 - SSIM)`.
pub fn image_loss(render: &Image, gt: &Image, w: &LossWeights) -> Result<f64> {
    check_shape(render, gt)?;
    let l1 = mean_abs_diff(render, gt);
    let structural = if w.lambda_s == 0.0 {
        0.0
    } else {
        w.lambda_s * (1.0 - ssim(render, gt)?)
    };
    Ok((1.0 - w.lambda_s) * l1 + structural)
}

/// Mean absolute depth error over pixels with valid (non-zero) ground truth.
pub fn depth_loss(rendered: &Image, gt: &Image) -> Result<f64> {
    check_shape(rendered, gt)?;
    let (sum, count) = rendered
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(_, &g)| g != 0.0)
        .fold((0.0, 0usize), |(s, n), (r, g)| (s + (r - g).abs(), n + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// The two loss terms for a rendered keyframe: `(image, depth)`.
pub fn loss_components(render: &RenderedFrame, kf: &Keyframe, w: &LossWeights) -> Result<(f64, f64)> {
    let img = image_loss(&render.rgb, &kf.rgb_image(), w)?;
    let dep = depth_loss(&render.depth, &kf.depth_image())?;
    Ok((img, dep))
}

/// `image_loss + lambda_depth * depth_loss`.
pub fn total_loss(render: &RenderedFrame, kf: &Keyframe, w: &LossWeights) -> Result<f64> {
    let (img, dep) = loss_components(render, kf, w)?;
    Ok(combine_losses(img, dep, w))
}

pub fn combine_losses(image: f64, depth: f64, w: &LossWeights) -> f64 {
    image + w.lambda_depth * depth
}
