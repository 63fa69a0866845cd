//! Out-of-core chunked map store for 3D Gaussian scenes.
//!
//! The map is partitioned into cubic chunks ([`grid`]); only chunks visible
//! from the keyframes being optimized are kept in a budgeted active tier, the
//! rest live on disk ([`store`]). Visibility comes from hierarchical frustum
//! culling ([`culling`]); keyframes are chosen with spatial locality
//! ([`select`]); new splats are placed from image content ([`sample`]) and
//! scored with a small CPU renderer ([`render`]). Loop-closure corrections are
//! propagated into the map by [`loopclose`], and [`sim`] ties everything into a
//! deterministic trajectory-replay loop.

pub mod culling;
pub mod error;
pub mod geom;
pub mod grid;
pub mod image;
pub mod loopclose;
pub mod render;
pub mod sample;
pub mod select;
pub mod sim;
pub mod store;

pub use error::{Error, Result};
pub use geom::{
    pose_compose, pose_inverse, transform_gaussian, CameraIntrinsics, Gaussian, Keyframe, Pose,
    Quat, RigidTransform, Vec3,
};
pub use grid::{
    assign_gaussians, chunk_aabb, chunk_coord, decode_id, encode_id, ChunkAabb, ChunkCoord,
    EncodedChunkId,
};
pub use image::{Image, ScalarMap};
pub use store::{ChunkExtent, ChunkStore, GaussianAddr, LoadReport, StoreConfig, StoreStats};
