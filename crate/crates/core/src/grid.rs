//! Chunk coordinate arithmetic and the 64-bit chunk id encoding.
//!
//! World space is tiled by cubes of side `s` centered on integer multiples of
//! `s`, so the origin chunk spans `[-s/2, s/2)` on every axis. Cells are
//! half-open: a point exactly on a shared face belongs to the higher chunk.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geom::{Gaussian, Vec3};

pub const DEFAULT_CHUNK_SIZE_M: f64 = 10.0;

const AXIS_BITS: u32 = 21;
const AXIS_OFFSET: i64 = 1 << 20;
const AXIS_MASK: u64 = (1 << AXIS_BITS) - 1;

pub const COORD_MIN: i64 = -AXIS_OFFSET;
pub const COORD_MAX: i64 = AXIS_OFFSET - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkCoord {
    pub cx: i64,
    pub cy: i64,
    pub cz: i64,
}

impl ChunkCoord {
    pub const fn new(cx: i64, cy: i64, cz: i64) -> Self {
        Self { cx, cy, cz }
    }

    pub fn in_range(&self) -> bool {
        [self.cx, self.cy, self.cz]
            .iter()
            .all(|c| (COORD_MIN..=COORD_MAX).contains(c))
    }

    pub fn offset(&self, dx: i64, dy: i64, dz: i64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.cz + dz)
    }
}

impl fmt::Display for ChunkCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.cx, self.cy, self.cz)
    }
}

/// Chunk coordinate packed into 63 bits: 21 bits per axis after an offset of
/// 2^20. The top bit is always clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EncodedChunkId(pub u64);

impl EncodedChunkId {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for EncodedChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkAabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl ChunkAabb {
    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Squared distance from `p` to the nearest point of the box.
    pub fn distance_sq(&self, p: Vec3) -> f64 {
        let d = |v: f64, lo: f64, hi: f64| {
            if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            }
        };
        let dx = d(p.x, self.min.x, self.max.x);
        let dy = d(p.y, self.min.y, self.max.y);
        let dz = d(p.z, self.min.z, self.max.z);
        dx * dx + dy * dy + dz * dz
    }
}

fn axis_coord(v: f64, s: f64) -> Result<i64> {
    let c = ((v + s / 2.0) / s).floor();
    if !c.is_finite() || c < COORD_MIN as f64 || c > COORD_MAX as f64 {
        return Err(Error::OutOfRange(format!(
            "{v} m lies outside the addressable world at chunk size {s} m"
        )));
    }
    Ok(c as i64)
}

/// Chunk containing `p` for chunk side `s` meters.
pub fn chunk_coord(p: Vec3, s: f64) -> Result<ChunkCoord> {
    if !(s > 0.0) {
        return Err(Error::InvalidInput(format!("chunk size must be positive, got {s}")));
    }
    Ok(ChunkCoord::new(
        axis_coord(p.x, s)?,
        axis_coord(p.y, s)?,
        axis_coord(p.z, s)?,
    ))
}

pub fn encode_id(c: ChunkCoord) -> Result<EncodedChunkId> {
    if !c.in_range() {
        return Err(Error::OutOfRange(format!("chunk coordinate {c}")));
    }
    let field = |v: i64| (v + AXIS_OFFSET) as u64;
    Ok(EncodedChunkId(
        (field(c.cx) << (2 * AXIS_BITS)) | (field(c.cy) << AXIS_BITS) | field(c.cz),
    ))
}

pub fn decode_id(e: EncodedChunkId) -> Result<ChunkCoord> {
    if e.0 >> (3 * AXIS_BITS) != 0 {
        return Err(Error::Malformed(e.0));
    }
    let field = |shift: u32| ((e.0 >> shift) & AXIS_MASK) as i64 - AXIS_OFFSET;
    Ok(ChunkCoord::new(field(2 * AXIS_BITS), field(AXIS_BITS), field(0)))
}

pub fn chunk_aabb(c: ChunkCoord, s: f64) -> ChunkAabb {
    let h = s / 2.0;
    let lo = |v: i64| v as f64 * s - h;
    let hi = |v: i64| v as f64 * s + h;
    ChunkAabb {
        min: Vec3::new(lo(c.cx), lo(c.cy), lo(c.cz)),
        max: Vec3::new(hi(c.cx), hi(c.cy), hi(c.cz)),
    }
}

/// Chunk id owning a Gaussian.
pub fn gaussian_chunk(g: &Gaussian, s: f64) -> Result<EncodedChunkId> {
    encode_id(chunk_coord(g.position(), s)?)
}

/// Partitions Gaussians by owning chunk, preserving input order inside each
/// chunk.
pub fn assign_gaussians(
    gs: Vec<Gaussian>,
    s: f64,
) -> Result<BTreeMap<EncodedChunkId, Vec<Gaussian>>> {
    let mut out: BTreeMap<EncodedChunkId, Vec<Gaussian>> = BTreeMap::new();
    for (index, g) in gs.into_iter().enumerate() {
        let id = gaussian_chunk(&g, s).map_err(|e| Error::GaussianOutOfRange {
            index,
            reason: e.to_string(),
        })?;
        out.entry(id).or_default().push(g);
    }
    Ok(out)
}
