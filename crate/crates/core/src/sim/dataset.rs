//! On-disk replay inputs.
//!
//! Layout written by [`write_dataset`]:
//!
//! ```text
//! trajectory.txt      timestamp tx ty tz qx qy qz qw   (one keyframe per line)
//! camera.txt          fx fy cx cy width height near far
//! rgb/<ts>.png        8-bit RGB
//! depth/<ts>.png      16-bit millimeters, 0 = invalid
//! keypoints.txt       frame x y z r g b                (frame = trajectory row)
//! loop_closures.txt   correction events (optional)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quat, Vec3};
use crate::loopclose::{format_corrections, parse_corrections, CorrectionSet};

pub const DEPTH_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub timestamp: String,
    pub pose: Pose,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameInput>,
    pub keypoints: BTreeMap<u64, Vec<(Vec3, [f64; 3])>>,
    pub corrections: Vec<CorrectionSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub trajectory: PathBuf,
    pub images: PathBuf,
    pub depth: PathBuf,
    /// Defaults to the desk camera when absent.
    pub camera: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub loop_closures: Option<PathBuf>,
}

impl DatasetPaths {
    /// Paths of a directory produced by [`write_dataset`].
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            trajectory: dir.join("trajectory.txt"),
            images: dir.join("rgb"),
            depth: dir.join("depth"),
            camera: opt("camera.txt"),
            keypoints: opt("keypoints.txt"),
            loop_closures: opt("loop_closures.txt"),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn numbers(path: &Path, n: usize, line: &str, want: usize) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("{}:{n}: expected {want} numbers", path.display()));
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    if v.len() != want || v.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(v)
}

pub fn parse_trajectory(path: &Path) -> Result<Vec<(String, Pose)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in data_lines(&text) {
        let ts = line.split_whitespace().next().unwrap_or("").to_string();
        let v = numbers(path, n, line, 8)?;
        out.push((
            ts,
            Pose::new(Quat::new(v[7], v[4], v[5], v[6]), Vec3::new(v[1], v[2], v[3])),
        ));
    }
    Ok(out)
}

pub fn parse_camera(path: &Path) -> Result<CameraIntrinsics> {
    let text = read_text(path)?;
    let (n, line) = data_lines(&text)
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty camera file", path.display())))?;
    let v = numbers(path, n, line, 8)?;
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as u32, v[5] as u32, v[6], v[7])
}

pub fn parse_keypoints(path: &Path) -> Result<BTreeMap<u64, Vec<(Vec3, [f64; 3])>>> {
    let text = read_text(path)?;
    let mut out: BTreeMap<u64, Vec<(Vec3, [f64; 3])>> = BTreeMap::new();
    for (n, line) in data_lines(&text) {
        let v = numbers(path, n, line, 7)?;
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(Error::InvalidInput(format!("{}:{n}: bad frame index", path.display())));
        }
        out.entry(v[0] as u64)
            .or_default()
            .push((Vec3::new(v[1], v[2], v[3]), [v[4], v[5], v[6]]));
    }
    Ok(out)
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::corrupt(path, e.to_string())
}

fn read_rgb(path: &Path, intr: &CameraIntrinsics) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    if img.dimensions() != (intr.width, intr.height) {
        return Err(Error::DimensionMismatch(format!("{}: {:?}", path.display(), img.dimensions())));
    }
    Ok(img.into_raw())
}

fn read_depth(path: &Path, intr: &CameraIntrinsics) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    if img.dimensions() != (intr.width, intr.height) {
        return Err(Error::DimensionMismatch(format!("{}: {:?}", path.display(), img.dimensions())));
    }
    Ok(img.into_raw().into_iter().map(|d| (d as f64 / DEPTH_SCALE) as f32).collect())
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let intrinsics = match &paths.camera {
        Some(p) => parse_camera(p)?,
        None => CameraIntrinsics::desk_default(),
    };
    let mut frames = Vec::new();
    for (timestamp, pose) in parse_trajectory(&paths.trajectory)? {
        let name = format!("{timestamp}.png");
        let rgb = read_rgb(&paths.images.join(&name), &intrinsics)?;
        let depth = read_depth(&paths.depth.join(&name), &intrinsics)?;
        frames.push(FrameInput {
            timestamp,
            pose,
            rgb,
            depth,
        });
    }
    let keypoints = match &paths.keypoints {
        Some(p) => parse_keypoints(p)?,
        None => BTreeMap::new(),
    };
    let corrections = match &paths.loop_closures {
        Some(p) => parse_corrections(&read_text(p)?)?,
        None => Vec::new(),
    };
    Ok(Dataset {
        intrinsics,
        frames,
        keypoints,
        corrections,
    })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let (rgb_dir, depth_dir) = (dir.join("rgb"), dir.join("depth"));
    for d in [dir, &rgb_dir, &depth_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let c = &ds.intrinsics;
    write_text(
        &dir.join("camera.txt"),
        &format!(
            "# fx fy cx cy width height near far\n{} {} {} {} {} {} {} {}\n",
            c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.near, c.far
        ),
    )?;
    let mut traj = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for f in &ds.frames {
        let (t, q) = (f.pose.translation, f.pose.rotation);
        traj.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            f.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
        ));
        let name = format!("{}.png", f.timestamp);
        let path = rgb_dir.join(&name);
        ImageBuffer::<Rgb<u8>, _>::from_raw(c.width, c.height, f.rgb.clone())
            .ok_or_else(|| Error::DimensionMismatch(name.clone()))?
            .save(&path)
            .map_err(|e| image_err(&path, e))?;
        let mm: Vec<u16> = f
            .depth
            .iter()
            .map(|&d| (d as f64 * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        let path = depth_dir.join(&name);
        ImageBuffer::<Luma<u16>, _>::from_raw(c.width, c.height, mm)
            .ok_or_else(|| Error::DimensionMismatch(name.clone()))?
            .save(&path)
            .map_err(|e| image_err(&path, e))?;
    }
    write_text(&dir.join("trajectory.txt"), &traj)?;
    let mut kp = String::from("# frame x y z r g b\n");
    for (frame, pts) in &ds.keypoints {
        for (p, c) in pts {
            kp.push_str(&format!("{frame} {} {} {} {} {} {}\n", p.x, p.y, p.z, c[0], c[1], c[2]));
        }
    }
    write_text(&dir.join("keypoints.txt"), &kp)?;
    if !ds.corrections.is_empty() {
        write_text(&dir.join("loop_closures.txt"), &format_corrections(&ds.corrections))?;
    }
    Ok(())
}
