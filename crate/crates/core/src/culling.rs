//! Frustum extraction and hierarchical visible-chunk determination.
//!
//! The chunk extent is treated as an integer box that is halved along every
//! axis longer than one chunk. A region entirely outside a frustum plane, or
//! farther than the distance limit, is discarded with all its chunks; a region
//! entirely inside contributes every existing chunk in it; anything else is
//! subdivided until single chunks remain.
//!
//! Plane tests use the same corner values for a region and for the chunks
//! that share its faces, and floating-point `+`/`*` are monotone, so the
//! pruning never disagrees with a per-chunk test.

use std::collections::{BTreeSet, VecDeque};

use crate::geom::{CameraIntrinsics, Pose, Vec3};
use crate::grid::{chunk_aabb, encode_id, ChunkAabb, ChunkCoord, EncodedChunkId};
use crate::store::ChunkExtent;

/// Half-space `normal . p + offset >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    fn from_camera(normal: Vec3, offset: f64, pose: &Pose) -> Self {
        let n = normal.norm();
        let (normal, offset) = (normal.scale(1.0 / n), offset / n);
        let world_normal = pose.rotation.rotate(normal);
        Plane {
            normal: world_normal,
            offset: offset - world_normal.dot(pose.translation),
        }
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Largest and smallest signed distance over the corners of `b`.
    fn extremes(&self, b: &ChunkAabb) -> (f64, f64) {
        let pick = |n: f64, lo: f64, hi: f64| if n >= 0.0 { (hi, lo) } else { (lo, hi) };
        let (px, nx) = pick(self.normal.x, b.min.x, b.max.x);
        let (py, ny) = pick(self.normal.y, b.min.y, b.max.y);
        let (pz, nz) = pick(self.normal.z, b.min.z, b.max.z);
        (
            self.signed_distance(Vec3::new(px, py, pz)),
            self.signed_distance(Vec3::new(nx, ny, nz)),
        )
    }
}

/// Six inward-facing planes: left, right, top, bottom, near, far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub planes: [Plane; 6],
}

impl Frustum {
    pub fn contains(&self, p: Vec3) -> bool {
        self.planes.iter().all(|pl| pl.signed_distance(p) >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Outside,
    Intersects,
    Inside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CullConfig {
    pub max_distance_m: f64,
    pub max_subdivision_depth: u32,
    pub cache_capacity: usize,
    pub pose_quantum_m: f64,
    pub pose_quantum_rad: f64,
}

impl Default for CullConfig {
    fn default() -> Self {
        Self {
            max_distance_m: 200.0,
            max_subdivision_depth: 8,
            cache_capacity: 64,
            pose_quantum_m: 0.01,
            pose_quantum_rad: 0.001,
        }
    }
}

/// Frustum of the pinhole camera, covering the full footprint of every pixel
/// (`u` in `[-0.5, width - 0.5]`, likewise `v`) between the near and far
/// planes, expressed in world coordinates.
pub fn extract_frustum(pose: &Pose, intr: &CameraIntrinsics) -> Frustum {
    let w = intr.width as f64 - 0.5;
    let h = intr.height as f64 - 0.5;
    let planes = [
        (Vec3::new(intr.fx, 0.0, intr.cx + 0.5), 0.0),
        (Vec3::new(-intr.fx, 0.0, w - intr.cx), 0.0),
        (Vec3::new(0.0, intr.fy, intr.cy + 0.5), 0.0),
        (Vec3::new(0.0, -intr.fy, h - intr.cy), 0.0),
        (Vec3::new(0.0, 0.0, 1.0), -intr.near),
        (Vec3::new(0.0, 0.0, -1.0), intr.far),
    ]
    .map(|(n, d)| Plane::from_camera(n, d, pose));
    Frustum { planes }
}

/// Conservative box classification: `Outside` only when the box lies entirely
/// behind one plane, `Inside` only when every corner passes every plane.
pub fn aabb_in_frustum(b: &ChunkAabb, f: &Frustum) -> Containment {
    let mut inside = true;
    for plane in &f.planes {
        let (max, min) = plane.extremes(b);
        if max < 0.0 {
            return Containment::Outside;
        }
        if min < 0.0 {
            inside = false;
        }
    }
    if inside {
        Containment::Inside
    } else {
        Containment::Intersects
    }
}

fn region_aabb(lo: ChunkCoord, hi: ChunkCoord, s: f64) -> ChunkAabb {
    ChunkAabb {
        min: chunk_aabb(lo, s).min,
        max: chunk_aabb(hi, s).max,
    }
}

struct Traversal<'a> {
    frustum: Frustum,
    center: Vec3,
    max_dist_sq: f64,
    max_depth: u32,
    s: f64,
    existing: &'a dyn Fn(EncodedChunkId) -> bool,
    out: BTreeSet<EncodedChunkId>,
}

impl Traversal<'_> {
    fn accept_chunk(&mut self, c: ChunkCoord) {
        let Ok(id) = encode_id(c) else { return };
        if !(self.existing)(id) {
            return;
        }
        let b = chunk_aabb(c, self.s);
        if b.distance_sq(self.center) <= self.max_dist_sq
            && aabb_in_frustum(&b, &self.frustum) != Containment::Outside
        {
            self.out.insert(id);
        }
    }

    fn enumerate(&mut self, lo: ChunkCoord, hi: ChunkCoord) {
        for cx in lo.cx..=hi.cx {
            for cy in lo.cy..=hi.cy {
                for cz in lo.cz..=hi.cz {
                    self.accept_chunk(ChunkCoord::new(cx, cy, cz));
                }
            }
        }
    }

    fn visit(&mut self, lo: ChunkCoord, hi: ChunkCoord, depth: u32) {
        if lo == hi {
            self.accept_chunk(lo);
            return;
        }
        let b = region_aabb(lo, hi, self.s);
        if b.distance_sq(self.center) > self.max_dist_sq {
            return;
        }
        match aabb_in_frustum(&b, &self.frustum) {
            Containment::Outside => {}
            // Every chunk in the region is inside; only existence and distance
            // remain to be checked.
            Containment::Inside => self.enumerate(lo, hi),
            Containment::Intersects if depth >= self.max_depth => self.enumerate(lo, hi),
            Containment::Intersects => {
                let split = |a: i64, b: i64| {
                    if a == b {
                        vec![(a, b)]
                    } else {
                        let m = a + (b - a) / 2;
                        vec![(a, m), (m + 1, b)]
                    }
                };
                for &(x0, x1) in &split(lo.cx, hi.cx) {
                    for &(y0, y1) in &split(lo.cy, hi.cy) {
                        for &(z0, z1) in &split(lo.cz, hi.cz) {
                            self.visit(
                                ChunkCoord::new(x0, y0, z0),
                                ChunkCoord::new(x1, y1, z1),
                                depth + 1,
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Ids of existing chunks within `extent` that are not outside the frustum
/// and whose nearest point is within `cfg.max_distance_m` of the camera.
pub fn visible_chunks(
    pose: &Pose,
    intr: &CameraIntrinsics,
    extent: &ChunkExtent,
    existing: &dyn Fn(EncodedChunkId) -> bool,
    cfg: &CullConfig,
    s: f64,
) -> BTreeSet<EncodedChunkId> {
    let mut t = Traversal {
        frustum: extract_frustum(pose, intr),
        center: pose.translation,
        max_dist_sq: cfg.max_distance_m * cfg.max_distance_m,
        max_depth: cfg.max_subdivision_depth,
        s,
        existing,
        out: BTreeSet::new(),
    };
    t.visit(extent.min_coord, extent.max_coord, 0);
    t.out
}

#[derive(Debug, Clone)]
struct CacheEntry {
    pose: Pose,
    intr: CameraIntrinsics,
    extent: ChunkExtent,
    generation: u64,
    max_distance_m: f64,
    s: f64,
    result: BTreeSet<EncodedChunkId>,
}

/// Pose-aware memo of recent culling results.
///
/// A query hits when a cached entry was computed for the same camera, extent,
/// chunk size and chunk-set generation, at a pose within the translation and
/// rotation quanta.
#[derive(Debug, Clone, Default)]
pub struct CullCache {
    entries: VecDeque<CacheEntry>,
    hits: u64,
    misses: u64,
}

impl CullCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Returns the visible set and whether it came from the cache.
    #[allow(clippy::too_many_arguments)]
    pub fn visible_chunks_cached(
        &mut self,
        pose: &Pose,
        intr: &CameraIntrinsics,
        extent: &ChunkExtent,
        existing: &dyn Fn(EncodedChunkId) -> bool,
        generation: u64,
        cfg: &CullConfig,
        s: f64,
    ) -> (BTreeSet<EncodedChunkId>, bool) {
        let hit = self.entries.iter().position(|e| {
            e.generation == generation
                && e.intr == *intr
                && e.extent == *extent
                && e.s == s
                && e.max_distance_m == cfg.max_distance_m
                && (e.pose.translation - pose.translation).norm() < cfg.pose_quantum_m
                && e.pose.rotation.angle_to(pose.rotation) < cfg.pose_quantum_rad
        });
        if let Some(i) = hit {
            let entry = self.entries.remove(i).expect("index from position");
            let result = entry.result.clone();
            self.entries.push_front(entry);
            self.hits += 1;
            return (result, true);
        }
        self.misses += 1;
        let result = visible_chunks(pose, intr, extent, existing, cfg, s);
        if cfg.cache_capacity > 0 {
            self.entries.push_front(CacheEntry {
                pose: *pose,
                intr: *intr,
                extent: *extent,
                generation,
                max_distance_m: cfg.max_distance_m,
                s,
                result: result.clone(),
            });
            self.entries.truncate(cfg.cache_capacity);
        }
        (result, false)
    }
}
