//! Synthetic corridor scenes with self-consistent ground truth.
//!
//! A rectangular-section corridor follows either a straight line along +x or
//! a closed rectangle. Its walls, floor and ceiling are covered with textured
//! Gaussians; keyframe images and depth are rendered from that population.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::culling::{visible_chunks, CullConfig};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Gaussian, Pose, Quat, RigidTransform, Vec3};
use crate::grid::{self, EncodedChunkId, DEFAULT_CHUNK_SIZE_M};
use crate::loopclose::CorrectionSet;
use crate::render::render;
use crate::sim::{Dataset, FrameInput};
use crate::store::ChunkExtent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Straight,
    Loop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Path length; the loop perimeter for [`Topology::Loop`].
    pub length_m: f64,
    pub density_per_m3: f64,
    pub spacing_m: f64,
    pub seed: u64,
    pub topology: Topology,
    pub width_m: f64,
    pub height_m: f64,
    pub gaussian_scale_m: f64,
    pub gaussian_opacity: f64,
    pub intrinsics: CameraIntrinsics,
    /// Transform applied at the end of a loop run to the second half of the
    /// keyframes. The first and last corrected keyframes are junctions.
    pub closure: RigidTransform,
}

impl SyntheticScene {
    pub fn corridor(length_m: f64, spacing_m: f64, density_per_m3: f64, seed: u64) -> Self {
        Self {
            length_m,
            density_per_m3,
            spacing_m,
            seed,
            topology: Topology::Straight,
            width_m: 8.0,
            height_m: 4.0,
            gaussian_scale_m: 0.15,
            gaussian_opacity: 0.8,
            intrinsics: CameraIntrinsics::desk_default(),
            closure: Pose::new(
                Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 5f64.to_radians()),
                Vec3::new(12.0, 0.0, 0.0),
            ),
        }
    }

    pub fn with_loop(mut self) -> Self {
        self.topology = Topology::Loop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_m >= 0.0
            && self.length_m.is_finite()
            && self.density_per_m3 >= 0.0
            && self.spacing_m > 0.0
            && self.width_m > 0.0
            && self.height_m > 0.0
            && self.gaussian_scale_m > 0.0
            && self.gaussian_opacity > 0.0
            && self.gaussian_opacity <= 1.0;
        if ok {
            self.intrinsics.validate()
        } else {
            Err(Error::InvalidInput(format!("bad synthetic scene {self:?}")))
        }
    }

    fn segments(&self) -> Vec<Segment> {
        let l = self.length_m;
        match self.topology {
            Topology::Straight => vec![Segment {
                start: Vec3::ZERO,
                heading: 0.0,
                length: l,
            }],
            Topology::Loop => {
                let (a, b) = (0.3 * l, 0.2 * l);
                let corners = [
                    Vec3::ZERO,
                    Vec3::new(a, 0.0, 0.0),
                    Vec3::new(a, b, 0.0),
                    Vec3::new(0.0, b, 0.0),
                ];
                (0..4)
                    .map(|k| Segment {
                        start: corners[k],
                        heading: k as f64 * std::f64::consts::FRAC_PI_2,
                        length: if k % 2 == 0 { a } else { b },
                    })
                    .collect()
            }
        }
    }

    fn path_at(&self, segs: &[Segment], t: f64) -> (Vec3, f64) {
        let mut rest = t;
        for (k, s) in segs.iter().enumerate() {
            if rest <= s.length || k + 1 == segs.len() {
                return (s.start + s.dir().scale(rest.min(s.length)), s.heading);
            }
            rest -= s.length;
        }
        (Vec3::ZERO, 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: Vec3,
    heading: f64,
    length: f64,
}

impl Segment {
    fn dir(&self) -> Vec3 {
        Vec3::new(self.heading.cos(), self.heading.sin(), 0.0)
    }
}

/// Camera looking along world `heading` (about +z), image up = world up.
pub fn camera_pose(position: Vec3, heading: f64) -> Pose {
    // Camera x -> world -y, camera y -> world -z, camera z -> world +x.
    let level = Quat::new(0.5, -0.5, 0.5, -0.5);
    let yaw = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), heading);
    Pose::new(yaw * level, position)
}

fn texture(surface: usize, along: f64, across: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    const BASE: [[f64; 3]; 4] = [
        [0.85, 0.7, 0.5],
        [0.5, 0.7, 0.85],
        [0.45, 0.45, 0.5],
        [0.9, 0.9, 0.88],
    ];
    let check = ((along.floor() as i64 + (across * 2.0).floor() as i64) & 1) as f64;
    let band = if (along * 0.25).floor() as i64 % 3 == 0 { 0.75 } else { 1.0 };
    std::array::from_fn(|c| {
        let v = BASE[surface][c] * (0.55 + 0.45 * check) * band + rng.gen_range(-0.04..0.04);
        v.clamp(0.0, 1.0)
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub dataset: Dataset,
    pub population: Vec<Gaussian>,
}

/// Generates the scene population, keyframe poses, rendered ground truth,
/// keypoints (each population point, attached to the first keyframe that
/// sees it) and, for loops, one closing correction.
pub fn generate_synthetic(scene: &SyntheticScene) -> Result<SyntheticOutput> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let segs = scene.segments();
    let (w, h, l) = (scene.width_m, scene.height_m, scene.length_m);

    // A straight corridor continues past the last camera so every frame sees
    // walls out to the far plane.
    let walls = match scene.topology {
        Topology::Straight if l > 0.0 => l + scene.intrinsics.far,
        _ => l,
    };
    let count = (scene.density_per_m3 * walls * w * h).round() as usize;
    let areas = [h, h, w, w];
    let area_sum: f64 = areas.iter().sum();
    let mut population = Vec::with_capacity(count);
    for _ in 0..count {
        let t = rng.gen_range(0.0..walls);
        let (origin, heading) = match scene.topology {
            Topology::Straight => (Vec3::new(t, 0.0, 0.0), 0.0),
            Topology::Loop => scene.path_at(&segs, t),
        };
        let along = t;
        let left = Vec3::new(-heading.sin(), heading.cos(), 0.0);
        let mut pick = rng.gen_range(0.0..area_sum);
        let mut surface = 0;
        while pick >= areas[surface] && surface < 3 {
            pick -= areas[surface];
            surface += 1;
        }
        let (lateral, vertical, across) = match surface {
            0 | 1 => {
                let z = rng.gen_range(-h / 2.0..h / 2.0);
                let side = if surface == 0 { 0.5 } else { -0.5 };
                (side * w, z, z)
            }
            _ => {
                let y = rng.gen_range(-w / 2.0..w / 2.0);
                let z = if surface == 2 { -0.5 * h } else { 0.5 * h };
                (y, z, y)
            }
        };
        let p = origin + left.scale(lateral) + Vec3::new(0.0, 0.0, vertical);
        let color = texture(surface, along, across, &mut rng);
        population.push(Gaussian::new(p, scene.gaussian_scale_m, scene.gaussian_opacity, color));
    }

    let n_frames = (l / scene.spacing_m).floor() as usize + 1;
    let poses: Vec<Pose> = (0..n_frames)
        .map(|i| {
            let (p, heading) = scene.path_at(&segs, i as f64 * scene.spacing_m);
            camera_pose(p, heading)
        })
        .collect();

    let s = DEFAULT_CHUNK_SIZE_M;
    let mut buckets: BTreeMap<EncodedChunkId, Vec<usize>> = BTreeMap::new();
    for (i, g) in population.iter().enumerate() {
        buckets.entry(grid::gaussian_chunk(g, s)?).or_default().push(i);
    }
    let mut extent: Option<ChunkExtent> = None;
    for &id in buckets.keys() {
        let c = grid::decode_id(id)?;
        match &mut extent {
            Some(e) => e.include(c),
            None => extent = Some(ChunkExtent::single(c)),
        }
    }

    let intr = scene.intrinsics;
    let cull = CullConfig::default();
    let mut claimed = vec![false; population.len()];
    let mut keypoints: BTreeMap<u64, Vec<(Vec3, [f64; 3])>> = BTreeMap::new();
    let mut frames = Vec::with_capacity(n_frames);
    for (i, pose) in poses.iter().enumerate() {
        let visible: BTreeSet<EncodedChunkId> = match &extent {
            Some(e) => visible_chunks(pose, &intr, e, &|c| buckets.contains_key(&c), &cull, s),
            None => BTreeSet::new(),
        };
        let members: Vec<usize> = visible.iter().flat_map(|c| buckets[c].iter().copied()).collect();
        let frame = render(members.iter().map(|&k| &population[k]), pose, &intr);
        let depth = frame
            .depth
            .data
            .iter()
            .zip(&frame.alpha.data)
            .map(|(&d, &a)| if a >= 0.5 { d as f32 } else { 0.0 })
            .collect();
        for &k in &members {
            if claimed[k] {
                continue;
            }
            let p = population[k].position();
            let c = pose.inverse_transform_point(p);
            if !(c.z > intr.near && c.z <= intr.far) {
                continue;
            }
            let (u, v) = intr.project(c);
            if u >= -0.5 && u < intr.width as f64 - 0.5 && v >= -0.5 && v < intr.height as f64 - 0.5 {
                claimed[k] = true;
                keypoints
                    .entry(i as u64)
                    .or_default()
                    .push((p, population[k].base_color()));
            }
        }
        frames.push(FrameInput {
            timestamp: format!("{:.6}", i as f64 * 0.1),
            pose: *pose,
            rgb: frame.rgb.to_rgb8(),
            depth,
        });
    }

    let mut corrections = Vec::new();
    if scene.topology == Topology::Loop && n_frames >= 2 {
        let last = n_frames as u64 - 1;
        corrections.push(CorrectionSet {
            entries: (n_frames as u64 / 2..=last).rev().map(|k| (k, scene.closure)).collect(),
            junction_ids: BTreeSet::from([n_frames as u64 / 2, last]),
        });
    }

    Ok(SyntheticOutput {
        dataset: Dataset {
            intrinsics: intr,
            frames,
            keypoints,
            corrections,
        },
        population,
    })
}

/// Order-sensitive fingerprint of a Gaussian population.
pub fn population_hash(gs: &[Gaussian]) -> u64 {
    let mut h = DefaultHasher::new();
    for g in gs {
        for v in g.position.iter().chain(&g.scale).chain(&g.sh) {
            v.to_bits().hash(&mut h);
        }
        g.opacity.to_bits().hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_camera_axes() {
        let p = camera_pose(Vec3::ZERO, 0.0);
        let fwd = p.rotation.rotate(Vec3::new(0.0, 0.0, 1.0));
        let down = p.rotation.rotate(Vec3::new(0.0, 1.0, 0.0));
        let right = p.rotation.rotate(Vec3::new(1.0, 0.0, 0.0));
        assert!((fwd - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((down - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((right - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let turned = camera_pose(Vec3::ZERO, std::f64::consts::FRAC_PI_2);
        let fwd = turned.rotation.rotate(Vec3::new(0.0, 0.0, 1.0));
        assert!((fwd - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_length_is_one_keyframe_at_origin() {
        let out = generate_synthetic(&SyntheticScene::corridor(0.0, 2.0, 10.0, 1)).unwrap();
        assert_eq!(out.dataset.frames.len(), 1);
        assert_eq!(out.dataset.frames[0].pose.translation, Vec3::ZERO);
        assert!(out.population.is_empty());
    }

    #[test]
    fn loop_closes_within_spacing() {
        let scene = SyntheticScene::corridor(60.0, 2.5, 0.5, 3).with_loop();
        let out = generate_synthetic(&scene).unwrap();
        let f = &out.dataset.frames;
        let gap = (f[0].pose.translation - f[f.len() - 1].pose.translation).norm();
        assert!(gap <= scene.spacing_m, "{gap}");
        assert_eq!(out.dataset.corrections.len(), 1);
        assert_eq!(out.dataset.corrections[0].trigger_keyframe(), Some(f.len() as u64 - 1));
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let a = generate_synthetic(&SyntheticScene::corridor(20.0, 2.0, 2.0, 7)).unwrap();
        let b = generate_synthetic(&SyntheticScene::corridor(20.0, 2.0, 2.0, 7)).unwrap();
        let c = generate_synthetic(&SyntheticScene::corridor(20.0, 2.0, 2.0, 8)).unwrap();
        assert_eq!(population_hash(&a.population), population_hash(&b.population));
        assert_eq!(a.dataset.frames, b.dataset.frames);
        assert_ne!(population_hash(&a.population), population_hash(&c.population));
    }

    #[test]
    fn ground_truth_sees_the_corridor() {
        let out = generate_synthetic(&SyntheticScene::corridor(30.0, 5.0, 20.0, 2)).unwrap();
        for f in &out.dataset.frames {
            let valid = f.depth.iter().filter(|&&d| d > 0.0).count();
            assert!(valid > f.depth.len() / 2, "{valid}");
            assert!(f.depth.iter().all(|&d| d <= 15.5));
        }
        let kp: usize = out.dataset.keypoints.values().map(Vec::len).sum();
        assert!(kp > out.population.len() / 2);
    }
}
