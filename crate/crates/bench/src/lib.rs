//! Seeded fixtures shared by the benchmarks.

use gausstore::{encode_id, CameraIntrinsics, ChunkCoord, EncodedChunkId, Gaussian, Pose, Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussians scattered uniformly in a box, with a non-empty optimizer payload.
pub fn gaussians(n: usize, extent_m: f64, seed: u64) -> Vec<Gaussian> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let p = Vec3::new(
                r.gen_range(0.0..extent_m),
                r.gen_range(0.0..extent_m),
                r.gen_range(0.0..extent_m),
            );
            let mut g = Gaussian::new(p, r.gen_range(0.02..0.2), r.gen_range(0.1..0.9), [r.gen(), r.gen(), r.gen()]);
            g.opt_state = 7u32.to_le_bytes().to_vec();
            g
        })
        .collect()
}

/// Occupied chunk ids in an `n`³ block, each present with probability `fill`.
pub fn occupancy(n: i64, fill: f64, seed: u64) -> Vec<EncodedChunkId> {
    let mut r = rng(seed);
    let mut ids = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if r.gen_bool(fill) {
                    ids.push(encode_id(ChunkCoord::new(x, y, z)).expect("in range"));
                }
            }
        }
    }
    ids
}

/// A camera at `eye` looking along +x with +z up.
pub fn looking_along_x(eye: Vec3) -> Pose {
    Pose::new(Quat::new(0.5, -0.5, 0.5, -0.5), eye)
}

pub fn small_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48, 0.1, 200.0).expect("valid intrinsics")
}
