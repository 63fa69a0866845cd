use super::*;
use crate::geom::{CameraIntrinsics, Pose, Vec3};
use crate::grid::{encode_id, ChunkCoord};
use proptest::prelude::*;
use tempfile::TempDir;

const S: f64 = 10.0;

fn open(budget: u64, kf_budget: usize) -> (TempDir, ChunkStore) {
    let dir = TempDir::new().unwrap();
    let mut cfg = StoreConfig::desk(dir.path());
    cfg.gaussian_budget = budget;
    cfg.keyframe_budget = kf_budget;
    let store = ChunkStore::open(cfg).unwrap();
    (dir, store)
}

fn id_at(cx: i64) -> EncodedChunkId {
    encode_id(ChunkCoord::new(cx, 0, 0)).unwrap()
}

/// `n` distinct Gaussians inside chunk `(cx, 0, 0)`.
fn gaussians_in(cx: i64, n: usize) -> Vec<Gaussian> {
    (0..n)
        .map(|i| {
            let f = i as f64 / n.max(1) as f64;
            let mut g = Gaussian::new(
                Vec3::new(cx as f64 * S - 4.0 + 8.0 * f, 1.0, -2.0),
                0.1,
                0.5,
                [f, 0.5, 1.0 - f],
            );
            g.opt_state = (i as u32).to_le_bytes().to_vec();
            g
        })
        .collect()
}

fn keyframe(id: u64) -> Keyframe {
    let intr = CameraIntrinsics::new(8.0, 8.0, 3.5, 2.5, 8, 6, 0.1, 20.0).unwrap();
    let n = intr.pixel_count();
    let mut kf = Keyframe::new(
        id,
        Pose::from_translation(Vec3::new(id as f64, 0.0, 0.0)),
        intr,
        (0..n * 3).map(|i| (i as u64 * 7 + id) as u8).collect(),
        (0..n).map(|i| i as f32 * 0.25 + id as f32).collect(),
    )
    .unwrap();
    kf.last_loss = id as f64 * 0.5;
    kf.usage_remaining = 3;
    kf
}

#[test]
fn insert_nothing_changes_nothing() {
    let (_d, mut store) = open(100, 4);
    let before = store.stats();
    assert_eq!(store.insert_gaussians(Vec::new()).unwrap(), 0);
    assert_eq!(store.stats(), before);
}

#[test]
fn single_chunk_may_exceed_budget() {
    let (_d, mut store) = open(50, 4);
    assert_eq!(store.insert_gaussians(gaussians_in(0, 100)).unwrap(), 100);
    let s = store.stats();
    assert_eq!(s.active_gaussians, 100);
    assert_eq!(s.chunk_evictions, 0);
    assert_eq!(s.overshoot, 50);
}

#[test]
fn insert_evicts_oldest_chunk() {
    let (_d, mut store) = open(100, 4);
    for cx in 0..3 {
        store.insert_gaussians(gaussians_in(cx, 40)).unwrap();
    }
    assert_eq!(store.stats().active_gaussians, 80);
    assert!(!store.is_resident(id_at(0)));
    assert!(store.is_resident(id_at(1)) && store.is_resident(id_at(2)));
    assert_eq!(store.chunk_len(id_at(0)), Some(40));
}

#[test]
fn ensure_resident_refreshes_ticks() {
    let (_d, mut store) = open(1000, 4);
    store.insert_gaussians(gaussians_in(0, 5)).unwrap();
    store.insert_gaussians(gaussians_in(1, 5)).unwrap();
    let r = store.ensure_resident(&[id_at(0), id_at(1)]).unwrap();
    assert!(r.loaded.is_empty() && r.evicted.is_empty());
    assert_eq!(r.already_resident.len(), 2);
    let t = store.current_tick();
    assert_eq!(store.resident_chunk(id_at(0)).unwrap().last_access, t);
    assert_eq!(store.resident_chunk(id_at(1)).unwrap().last_access, t);
}

#[test]
fn ensure_resident_loads_and_evicts_oldest() {
    let (_d, mut store) = open(100, 4);
    store.insert_gaussians(gaussians_in(5, 30)).unwrap();
    store.evict_lru(30, &BTreeSet::new()).unwrap();
    store.insert_gaussians(gaussians_in(0, 45)).unwrap();
    store.insert_gaussians(gaussians_in(1, 45)).unwrap();
    assert_eq!(store.stats().active_gaussians, 90);

    let r = store.ensure_resident(&[id_at(5)]).unwrap();
    assert_eq!(r.loaded, vec![id_at(5)]);
    assert_eq!(r.evicted, vec![id_at(0)]);
    let s = store.stats();
    assert_eq!(s.active_gaussians, 75);
    assert_eq!(s.chunk_loads, 1);
}

#[test]
fn oversized_request_loads_anyway() {
    let (_d, mut store) = open(100, 4);
    for cx in 0..3 {
        store.insert_gaussians(gaussians_in(cx, 60)).unwrap();
    }
    store.evict_lru(1000, &BTreeSet::new()).unwrap_err();
    let all: Vec<_> = (0..3).map(id_at).collect();
    store.evict_lru(60, &BTreeSet::new()).unwrap();
    store.insert_gaussians(gaussians_in(7, 10)).unwrap();

    let r = store.ensure_resident(&all[..2]).unwrap();
    assert!(store.is_resident(all[0]) && store.is_resident(all[1]));
    assert!(!store.is_resident(all[2]) && !store.is_resident(id_at(7)));
    assert!(r.evicted.contains(&id_at(7)));
    let s = store.stats();
    assert_eq!(s.active_gaussians, 120);
    assert_eq!(s.overshoot, 20);
}

/// Builds resident chunks with the given sizes; chunk `i` gets tick order `i`.
fn chunks_with_sizes(sizes: &[usize]) -> (TempDir, ChunkStore, Vec<EncodedChunkId>) {
    let (d, mut store) = open(u64::MAX / 2, 4);
    let mut ids = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        store.insert_gaussians(gaussians_in(i as i64, n)).unwrap();
        ids.push(id_at(i as i64));
    }
    (d, store, ids)
}

#[test]
fn evict_examples() {
    let (_d, mut store, ids) = chunks_with_sizes(&[1000, 500, 800]);
    assert!(store.evict_lru(0, &BTreeSet::new()).unwrap().is_empty());
    assert_eq!(store.evict_lru(1200, &BTreeSet::new()).unwrap(), vec![ids[0], ids[1]]);

    let (_d, mut store, ids) = chunks_with_sizes(&[1000, 500, 800]);
    let protected = BTreeSet::from([ids[0]]);
    assert_eq!(store.evict_lru(1200, &protected).unwrap(), vec![ids[1], ids[2]]);

    let (_d, mut store, ids) = chunks_with_sizes(&[1000, 500, 800]);
    let protected = BTreeSet::from([ids[0]]);
    assert!(matches!(
        store.evict_lru(1400, &protected),
        Err(Error::InsufficientEvictable { required: 1400, available: 1300 })
    ));
    assert_eq!(store.resident_ids().len(), 3);
}

#[test]
fn clean_chunks_are_not_rewritten() {
    let (_d, mut store, ids) = chunks_with_sizes(&[10, 10]);
    store.flush().unwrap();
    let writes = store.stats().chunk_writes;
    store.evict_lru(20, &BTreeSet::new()).unwrap();
    assert_eq!(store.stats().chunk_writes, writes);
    store.ensure_resident(&ids).unwrap();
    assert_eq!(store.stats().chunk_loads, 2);
}

#[test]
fn gather_examples() {
    let (_d, mut store, ids) = chunks_with_sizes(&[3, 5]);
    assert!(store.gather_visible(&[]).unwrap().is_empty());
    let addrs = store.gather_visible(&ids).unwrap();
    assert_eq!(addrs.len(), 8);
    assert_eq!(addrs.iter().filter(|a| a.chunk == ids[0]).count(), 3);
    assert_eq!(addrs.iter().filter(|a| a.chunk == ids[1]).count(), 5);

    let g = store.gaussian_mut(addrs[4]).unwrap();
    g.opacity = 0.123;
    g.opt_state = vec![9, 9, 9];
    let expected = g.clone();
    store.flush().unwrap();
    store.evict_lru(8, &BTreeSet::new()).unwrap();
    store.ensure_resident(&ids).unwrap();
    assert_eq!(store.gaussian(addrs[4]).unwrap(), &expected);
}

#[test]
fn gather_requires_residency() {
    let (_d, mut store, ids) = chunks_with_sizes(&[3]);
    store.evict_lru(3, &BTreeSet::new()).unwrap();
    assert!(matches!(store.gather_visible(&ids), Err(Error::NotResident(_))));
}

#[test]
fn keyframe_examples() {
    let (_d, mut store) = open(100, 2);
    store.keyframe_add(keyframe(1)).unwrap();
    assert_eq!(store.stats().active_keyframes, 1);
    store.keyframe_add(keyframe(2)).unwrap();
    assert!(matches!(store.keyframe_add(keyframe(2)), Err(Error::DuplicateKeyframe(2))));

    store.keyframe_get(1).unwrap();
    assert_eq!(store.stats().keyframe_loads, 0);
    assert_eq!(store.keyframe_lru_order(), vec![2, 1]);

    store.keyframe_add(keyframe(3)).unwrap();
    assert_eq!(store.resident_keyframe_ids(), BTreeSet::from([1, 3]));
    assert_eq!(store.stats().keyframe_evictions, 1);

    let got = store.keyframe_get(2).unwrap().clone();
    let mut expected = keyframe(2);
    expected.last_access = got.last_access;
    assert_eq!(got, expected);
    assert_eq!(store.stats().keyframe_loads, 1);
    assert_eq!(store.resident_keyframe_ids(), BTreeSet::from([2, 3]));

    assert!(matches!(store.keyframe_get(99), Err(Error::UnknownKeyframe(99))));
}

#[test]
fn seventeenth_keyframe_evicts_one() {
    let (_d, mut store) = open(100, 16);
    for id in 0..17 {
        store.keyframe_add(keyframe(id)).unwrap();
    }
    let s = store.stats();
    assert_eq!(s.active_keyframes, 16);
    assert_eq!(s.keyframe_evictions, 1);
    assert!(!store.resident_keyframe_ids().contains(&0));
}

#[test]
fn flush_without_dirt_writes_nothing() {
    let (_d, mut store, _) = chunks_with_sizes(&[4]);
    store.flush().unwrap();
    let s = store.stats();
    store.flush().unwrap();
    assert_eq!(store.stats().chunk_writes, s.chunk_writes);
    assert_eq!(store.stats().bytes_written, s.bytes_written);
}

#[test]
fn cold_reopen_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let cfg = StoreConfig::desk(dir.path());
    let mut store = ChunkStore::open(cfg.clone()).unwrap();
    store.insert_gaussians(gaussians_in(0, 7)).unwrap();
    store.insert_gaussians(gaussians_in(-3, 4)).unwrap();
    store.keyframe_add(keyframe(5)).unwrap();
    let before = store.all_gaussians().unwrap();
    store.flush().unwrap();
    drop(store);

    let mut store = ChunkStore::open(cfg).unwrap();
    assert_eq!(store.stats().total_gaussians_ever, 11);
    assert_eq!(store.all_gaussians().unwrap(), before);
    let ids: Vec<_> = store.chunk_ids().into_iter().collect();
    store.ensure_resident(&ids).unwrap();
    let addrs = store.gather_visible(&ids).unwrap();
    let gathered: Vec<Gaussian> = store.resolve(&addrs).map(|g| g.unwrap().clone()).collect();
    let expected: Vec<Gaussian> = before.into_iter().map(|(_, g)| g).collect();
    assert_eq!(gathered, expected);
    assert_eq!(store.keyframe_get(5).unwrap().rgb, keyframe(5).rgb);
}

#[test]
fn removed_chunks_vanish_from_disk_on_flush() {
    let (dir, mut store, ids) = chunks_with_sizes(&[3, 2]);
    store.flush().unwrap();
    assert!(chunk_path(dir.path(), ids[0]).exists());
    store.chunk_gaussians_mut(ids[0]).unwrap().clear();
    store.remove_empty_chunk(ids[0]).unwrap();
    assert!(!store.exists(ids[0]));
    store.flush().unwrap();
    assert!(!chunk_path(dir.path(), ids[0]).exists());
    assert!(chunk_path(dir.path(), ids[1]).exists());
}

#[test]
fn open_rejects_corrupt_magic() {
    let (dir, mut store, ids) = chunks_with_sizes(&[3]);
    store.flush().unwrap();
    drop(store);
    let path = chunk_path(dir.path(), ids[0]);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'Z';
    fs::write(&path, bytes).unwrap();
    let err = ChunkStore::open(StoreConfig::desk(dir.path())).unwrap_err();
    assert!(matches!(err, Error::CorruptChunk { .. }), "{err}");
}

#[derive(Debug, Clone)]
enum Op {
    Insert(i64, usize),
    Ensure(Vec<i64>),
    Evict(u64),
    Flush,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0i64..8, 1usize..40).prop_map(|(c, n)| Op::Insert(c, n)),
        prop::collection::vec(0i64..8, 0..4).prop_map(Op::Ensure),
        (0u64..80).prop_map(Op::Evict),
        Just(Op::Flush),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conservation_and_plateau(ops in prop::collection::vec(arb_op(), 1..30)) {
        let (_d, mut store) = open(100, 4);
        // Flush and evict never grow the resident set, so the last request
        // still bounds it afterwards.
        let mut requested: u64 = 0;
        for op in ops {
            match op {
                Op::Insert(c, n) => {
                    store.insert_gaussians(gaussians_in(c, n)).unwrap();
                    requested = store.chunk_len(id_at(c)).unwrap();
                }
                Op::Ensure(cs) => {
                    let ids: Vec<_> = cs.iter().map(|&c| id_at(c)).collect();
                    store.ensure_resident(&ids).unwrap();
                    requested = ids.iter().collect::<BTreeSet<_>>().iter().map(|&&id| store.chunk_len(id).unwrap()).sum();
                }
                Op::Evict(n) => { let _ = store.evict_lru(n, &BTreeSet::new()); }
                Op::Flush => store.flush().unwrap(),
            }
            let s = store.stats();
            prop_assert!(s.active_gaussians <= 100u64.max(requested));
            let all = store.all_gaussians().unwrap();
            prop_assert_eq!(all.len() as u64, s.total_gaussians_ever);
        }
    }

    #[test]
    fn keyframe_queue_matches_reference_lru(trace in prop::collection::vec(0u64..10, 1..60)) {
        let (_d, mut store) = open(100, 3);
        let mut reference: Vec<u64> = Vec::new(); // most recent last
        let mut evicted_order = Vec::new();
        for id in trace {
            if store.keyframe_known(id) {
                store.keyframe_get(id).unwrap();
            } else {
                store.keyframe_add(keyframe(id)).unwrap();
            }
            reference.retain(|&k| k != id);
            reference.push(id);
            while reference.len() > 3 {
                evicted_order.push(reference.remove(0));
            }
            prop_assert_eq!(store.keyframe_lru_order(), reference.clone());
        }
        prop_assert_eq!(store.stats().keyframe_evictions, evicted_order.len() as u64);
    }
}
