use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gausstore::culling::{visible_chunks, CullConfig};
use gausstore::render::render;
use gausstore::store::format::{decode_chunk, encode_chunk};
use gausstore::{assign_gaussians, encode_id, ChunkCoord, ChunkExtent, ChunkStore, StoreConfig, Vec3};
use gausstore_bench::{gaussians, looking_along_x, occupancy, small_camera};
use tempfile::TempDir;

fn codec(c: &mut Criterion) {
    let gs = gaussians(2_000, 10.0, 1);
    let id = encode_id(ChunkCoord::new(0, 0, 0)).unwrap();
    let bytes = encode_chunk(id, &gs);
    c.bench_function("encode_chunk_2k", |b| b.iter(|| encode_chunk(id, black_box(&gs))));
    c.bench_function("decode_chunk_2k", |b| {
        b.iter(|| decode_chunk(black_box(&bytes), "bench".as_ref()).unwrap())
    });
    let many = gaussians(20_000, 100.0, 2);
    c.bench_function("assign_20k", |b| {
        b.iter_batched(|| many.clone(), |gs| assign_gaussians(gs, 10.0).unwrap(), BatchSize::LargeInput)
    });
}

fn culling(c: &mut Criterion) {
    let ids: BTreeSet<_> = occupancy(32, 0.3, 3).into_iter().collect();
    let extent = ChunkExtent {
        min_coord: ChunkCoord::new(0, 0, 0),
        max_coord: ChunkCoord::new(31, 31, 31),
    };
    let pose = looking_along_x(Vec3::new(-5.0, 160.0, 160.0));
    let intr = small_camera();
    let cfg = CullConfig::default();
    c.bench_function("cull_32cubed", |b| {
        b.iter(|| visible_chunks(&pose, &intr, &extent, &|id| ids.contains(&id), &cfg, 10.0))
    });
}

fn eviction(c: &mut Criterion) {
    c.bench_function("evict_half_of_64_chunks", |b| {
        b.iter_batched(
            || {
                let dir = TempDir::new().unwrap();
                let mut cfg = StoreConfig::desk(dir.path());
                cfg.gaussian_budget = 1_000_000;
                let mut store = ChunkStore::open(cfg).unwrap();
                store.insert_gaussians(gaussians(6_400, 40.0, 4)).unwrap();
                (dir, store)
            },
            |(dir, mut store)| {
                store.evict_lru(3_200, &BTreeSet::new()).unwrap();
                (dir, store)
            },
            BatchSize::SmallInput,
        )
    });
}

fn rendering(c: &mut Criterion) {
    let scene: Vec<_> = gaussians(5_000, 8.0, 5)
        .into_iter()
        .map(|mut g| {
            g.position[0] += 4.0;
            g.position[1] -= 4.0;
            g.position[2] -= 4.0;
            g
        })
        .collect();
    let pose = looking_along_x(Vec3::new(0.0, 0.0, 0.0));
    let intr = small_camera();
    c.bench_function("render_5k_64x48", |b| b.iter(|| render(black_box(&scene), &pose, &intr)));
}

criterion_group!(benches, codec, culling, eviction, rendering);
criterion_main!(benches);
