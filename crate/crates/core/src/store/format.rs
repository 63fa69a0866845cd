//! Little-endian chunk (`.dcg`) and keyframe (`.dkf`) file formats.
//!
//! Chunk file:
//!
//! ```text
//! "DCG1" | version u32 | encoded id u64 | gaussian count u64 | reserved u64
//! record* := position 3xf32 | rotation 4xf32 (w,x,y,z) | scale 3xf32
//!          | opacity f32 | sh 48xf32 | opt_state len u32 | opt_state bytes
//! ```
//!
//! Keyframe file:
//!
//! ```text
//! "DKF1" | version u32 | id u64 | pose 7xf64 (tx ty tz qw qx qy qz)
//! | fx fy cx cy near far 6xf64 | width u32 | height u32 | last_loss f64
//! | usage_remaining u32 | rgb HxWx3 u8 | depth HxW f32
//! ```

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Gaussian, Keyframe, Pose, Quat, Vec3, SH_COEFFS};
use crate::grid::EncodedChunkId;

pub const CHUNK_MAGIC: &[u8; 4] = b"DCG1";
pub const KEYFRAME_MAGIC: &[u8; 4] = b"DKF1";
pub const FORMAT_VERSION: u32 = 1;
pub const CHUNK_HEADER_LEN: usize = 32;
/// Fixed part of a Gaussian record, before the optimizer payload length.
pub const RECORD_FIXED_LEN: usize = 4 * (3 + 4 + 3 + 1 + SH_COEFFS);

pub const CHUNK_DIR: &str = "chunks";
pub const KEYFRAME_DIR: &str = "keyframes";

pub fn chunk_path(root: &Path, id: EncodedChunkId) -> PathBuf {
    root.join(CHUNK_DIR).join(format!("{id}.dcg"))
}

pub fn keyframe_path(root: &Path, id: u64) -> PathBuf {
    root.join(KEYFRAME_DIR).join(format!("{id}.dkf"))
}

/// Parses `<16 hex digits>.dcg`.
pub fn parse_chunk_file_name(name: &str) -> Option<EncodedChunkId> {
    let stem = name.strip_suffix(".dcg")?;
    if stem.len() != 16 {
        return None;
    }
    u64::from_str_radix(stem, 16).ok().map(EncodedChunkId)
}

pub fn parse_keyframe_file_name(name: &str) -> Option<u64> {
    name.strip_suffix(".dkf")?.parse().ok()
}

pub fn encode_chunk(id: EncodedChunkId, gaussians: &[Gaussian]) -> Vec<u8> {
    let payload: usize = gaussians.iter().map(|g| g.opt_state.len()).sum();
    let mut out =
        Vec::with_capacity(CHUNK_HEADER_LEN + gaussians.len() * (RECORD_FIXED_LEN + 4) + payload);
    out.extend_from_slice(CHUNK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&id.0.to_le_bytes());
    out.extend_from_slice(&(gaussians.len() as u64).to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    for g in gaussians {
        let floats = g
            .position
            .iter()
            .chain(&g.rotation)
            .chain(&g.scale)
            .chain(std::iter::once(&g.opacity))
            .chain(&g.sh);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(g.opt_state.len() as u32).to_le_bytes());
        out.extend_from_slice(&g.opt_state);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::corrupt(
                    self.path,
                    format!("truncated at byte {} (wanted {n} more)", self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s<const N: usize>(&mut self) -> Result<[f32; N]> {
        let mut out = [0.0f32; N];
        for v in &mut out {
            *v = self.f32()?;
        }
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.array::<4>()?;
        if &m != expected {
            return Err(Error::corrupt(
                self.path,
                format!("bad magic {m:?}, expected {expected:?}"),
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(
                self.path,
                format!("unsupported format version {version}"),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::corrupt(
                self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Decodes a chunk file body. `path` is used for diagnostics only.
pub fn decode_chunk(bytes: &[u8], path: &Path) -> Result<(EncodedChunkId, Vec<Gaussian>)> {
    let mut c = Cursor::new(bytes, path);
    c.magic(CHUNK_MAGIC)?;
    let id = EncodedChunkId(c.u64()?);
    let count = c.u64()?;
    let _reserved = c.u64()?;
    // Each record needs at least its fixed part plus the length field.
    let max_records = (bytes.len() - CHUNK_HEADER_LEN) / (RECORD_FIXED_LEN + 4);
    if count > max_records as u64 {
        return Err(Error::corrupt(
            path,
            format!("header claims {count} records, file holds at most {max_records}"),
        ));
    }
    let mut gaussians = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let position = c.f32s::<3>()?;
        let rotation = c.f32s::<4>()?;
        let scale = c.f32s::<3>()?;
        let opacity = c.f32()?;
        let sh = c.f32s::<SH_COEFFS>()?;
        let len = c.u32()? as usize;
        let opt_state = c.take(len)?.to_vec();
        gaussians.push(Gaussian {
            position,
            rotation,
            scale,
            opacity,
            sh,
            opt_state,
        });
    }
    c.finish()?;
    Ok((id, gaussians))
}

pub fn read_chunk(path: &Path) -> Result<(EncodedChunkId, Vec<Gaussian>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_chunk(&bytes, path)
}

/// Reads only the fixed header: `(id, gaussian count)`.
pub fn read_chunk_header(path: &Path) -> Result<(EncodedChunkId, u64)> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; CHUNK_HEADER_LEN];
    f.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::corrupt(path, "truncated header")
        } else {
            Error::io(path, e)
        }
    })?;
    let mut c = Cursor::new(&buf, path);
    c.magic(CHUNK_MAGIC)?;
    let id = EncodedChunkId(c.u64()?);
    let count = c.u64()?;
    Ok((id, count))
}

pub fn encode_keyframe(kf: &Keyframe) -> Vec<u8> {
    let n = kf.intrinsics.pixel_count();
    let mut out = Vec::with_capacity(4 + 4 + 8 + 13 * 8 + 8 + 8 + 4 + 4 + n * 7);
    out.extend_from_slice(KEYFRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&kf.id.to_le_bytes());
    let t = kf.pose.translation;
    let q = kf.pose.rotation;
    let i = &kf.intrinsics;
    for v in [
        t.x, t.y, t.z, q.w, q.x, q.y, q.z, i.fx, i.fy, i.cx, i.cy, i.near, i.far,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&i.width.to_le_bytes());
    out.extend_from_slice(&i.height.to_le_bytes());
    out.extend_from_slice(&kf.last_loss.to_le_bytes());
    out.extend_from_slice(&kf.usage_remaining.to_le_bytes());
    out.extend_from_slice(&kf.rgb);
    for d in &kf.depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Decodes a keyframe file. `last_access` is not persisted and comes back 0.
pub fn decode_keyframe(bytes: &[u8], path: &Path) -> Result<Keyframe> {
    let mut c = Cursor::new(bytes, path);
    c.magic(KEYFRAME_MAGIC)?;
    let id = c.u64()?;
    let mut v = [0.0f64; 13];
    for x in &mut v {
        *x = c.f64()?;
    }
    let width = c.u32()?;
    let height = c.u32()?;
    let last_loss = c.f64()?;
    let usage_remaining = c.u32()?;
    let n = width as usize * height as usize;
    let rgb = c.take(n * 3)?.to_vec();
    let mut depth = Vec::with_capacity(n);
    for _ in 0..n {
        depth.push(c.f32()?);
    }
    c.finish()?;
    let kf = Keyframe {
        id,
        // Stored rotation is already unit; keep its bits as written.
        pose: Pose {
            rotation: Quat::new(v[3], v[4], v[5], v[6]),
            translation: Vec3::new(v[0], v[1], v[2]),
        },
        intrinsics: CameraIntrinsics {
            fx: v[7],
            fy: v[8],
            cx: v[9],
            cy: v[10],
            near: v[11],
            far: v[12],
            width,
            height,
        },
        rgb,
        depth,
        last_loss,
        usage_remaining,
        last_access: 0,
    };
    kf.validate()
        .map_err(|e| Error::corrupt(path, format!("invalid keyframe: {e}")))?;
    Ok(kf)
}

pub fn read_keyframe(path: &Path) -> Result<Keyframe> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_keyframe(&bytes, path)
}

/// Writes via a temporary sibling and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
