//! Out-of-core tiering for chunks and keyframes.
//!
//! The store keeps two budgeted active tiers in memory, one for chunks
//! (budgeted by Gaussian count) and one for keyframes (budgeted by count),
//! and pages everything else to a disk directory:
//!
//! ```text
//! <disk_root>/chunks/<16 hex digit id>.dcg
//! <disk_root>/keyframes/<id>.dkf
//! ```
//!
//! Chunk eviction is greedy: evictable chunks are ordered oldest-first by
//! access tick and the shortest prefix that frees enough Gaussians is written
//! back (only if dirty) and dropped. Chunks named by the current operation are
//! protected and never self-evicted, even when they alone exceed the budget.
//!
//! Access ticks come from a counter bumped once per public operation, so every
//! ordering decision is deterministic.
//!
//! The store is single-writer. Addresses handed out by
//! [`ChunkStore::gather_visible`] stay meaningful across evictions (chunk id
//! plus index), but resolving one requires the chunk to be resident again.

pub mod format;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geom::{Gaussian, Keyframe};
use crate::grid::{self, ChunkCoord, EncodedChunkId, DEFAULT_CHUNK_SIZE_M};

pub use format::{chunk_path, keyframe_path};

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    pub chunk_size_m: f64,
    pub gaussian_budget: u64,
    pub keyframe_budget: usize,
    pub disk_root: PathBuf,
}

impl StoreConfig {
    pub const FULL_GAUSSIAN_BUDGET: u64 = 1_500_000;
    pub const FULL_KEYFRAME_BUDGET: usize = 400;
    pub const DESK_GAUSSIAN_BUDGET: u64 = 50_000;
    pub const DESK_KEYFRAME_BUDGET: usize = 16;

    /// Desk-scale budgets: 50k Gaussians, 16 keyframes, 10 m chunks.
    pub fn desk(disk_root: impl Into<PathBuf>) -> Self {
        Self {
            chunk_size_m: DEFAULT_CHUNK_SIZE_M,
            gaussian_budget: Self::DESK_GAUSSIAN_BUDGET,
            keyframe_budget: Self::DESK_KEYFRAME_BUDGET,
            disk_root: disk_root.into(),
        }
    }

    /// Full-scale budgets: 1.5M Gaussians, 400 keyframes.
    pub fn full_scale(disk_root: impl Into<PathBuf>) -> Self {
        Self {
            gaussian_budget: Self::FULL_GAUSSIAN_BUDGET,
            keyframe_budget: Self::FULL_KEYFRAME_BUDGET,
            ..Self::desk(disk_root)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_size_m > 0.0 && self.chunk_size_m.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "chunk size must be positive, got {}",
                self.chunk_size_m
            )));
        }
        if self.gaussian_budget == 0 || self.keyframe_budget == 0 {
            return Err(Error::InvalidInput("budgets must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: EncodedChunkId,
    pub gaussians: Vec<Gaussian>,
    pub last_access: u64,
    pub dirty: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub active_gaussians: u64,
    pub active_chunks: u64,
    pub active_keyframes: u64,
    pub total_gaussians_ever: u64,
    pub chunk_loads: u64,
    pub chunk_evictions: u64,
    pub keyframe_loads: u64,
    pub keyframe_evictions: u64,
    pub chunk_writes: u64,
    pub keyframe_writes: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub io_nanos: u64,
    /// Gaussians above budget left resident by the most recent operation.
    pub overshoot: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<EncodedChunkId>,
    pub already_resident: Vec<EncodedChunkId>,
    pub evicted: Vec<EncodedChunkId>,
}

/// Stable address of one Gaussian: owning chunk and index inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GaussianAddr {
    pub chunk: EncodedChunkId,
    pub index: u32,
}

/// Inclusive bounding box, in chunk coordinates, of every chunk ever created.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkExtent {
    pub min_coord: ChunkCoord,
    pub max_coord: ChunkCoord,
}

impl ChunkExtent {
    pub fn single(c: ChunkCoord) -> Self {
        Self {
            min_coord: c,
            max_coord: c,
        }
    }

    pub fn include(&mut self, c: ChunkCoord) {
        let (lo, hi) = (&mut self.min_coord, &mut self.max_coord);
        lo.cx = lo.cx.min(c.cx);
        lo.cy = lo.cy.min(c.cy);
        lo.cz = lo.cz.min(c.cz);
        hi.cx = hi.cx.max(c.cx);
        hi.cy = hi.cy.max(c.cy);
        hi.cz = hi.cz.max(c.cz);
    }
}

#[derive(Debug)]
struct KeyframeSlot {
    kf: Keyframe,
    dirty: bool,
}

#[derive(Debug)]
pub struct ChunkStore {
    cfg: StoreConfig,
    resident: BTreeMap<EncodedChunkId, Chunk>,
    /// Gaussian count of every chunk file on disk.
    on_disk: BTreeMap<EncodedChunkId, u64>,
    /// Files of removed chunks, deleted on flush unless the chunk reappears.
    pending_delete: BTreeSet<EncodedChunkId>,
    keyframes: BTreeMap<u64, KeyframeSlot>,
    /// Resident keyframes ordered by last access tick.
    keyframe_lru: BTreeMap<u64, u64>,
    keyframes_on_disk: BTreeSet<u64>,
    extent: Option<ChunkExtent>,
    tick: u64,
    generation: u64,
    total_gaussians_ever: u64,
    stats: StoreStats,
}

fn elapsed_nanos(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

impl ChunkStore {
    /// Opens (or creates) a store rooted at `cfg.disk_root`, indexing any chunk
    /// and keyframe files already present.
    pub fn open(cfg: StoreConfig) -> Result<Self> {
        cfg.validate()?;
        let chunk_dir = cfg.disk_root.join(format::CHUNK_DIR);
        let kf_dir = cfg.disk_root.join(format::KEYFRAME_DIR);
        for dir in [&chunk_dir, &kf_dir] {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }

        let mut store = Self {
            cfg,
            resident: BTreeMap::new(),
            on_disk: BTreeMap::new(),
            pending_delete: BTreeSet::new(),
            keyframes: BTreeMap::new(),
            keyframe_lru: BTreeMap::new(),
            keyframes_on_disk: BTreeSet::new(),
            extent: None,
            tick: 0,
            generation: 0,
            total_gaussians_ever: 0,
            stats: StoreStats::default(),
        };

        for name in list_dir(&chunk_dir)? {
            let Some(id) = format::parse_chunk_file_name(&name) else {
                continue;
            };
            let path = chunk_dir.join(&name);
            let (header_id, count) = format::read_chunk_header(&path)?;
            if header_id != id {
                return Err(Error::corrupt(
                    &path,
                    format!("header id {header_id} does not match file name"),
                ));
            }
            store.on_disk.insert(id, count);
            store.total_gaussians_ever += count;
            store.note_chunk_created(id)?;
        }
        for name in list_dir(&kf_dir)? {
            if let Some(id) = format::parse_keyframe_file_name(&name) {
                store.keyframes_on_disk.insert(id);
            }
        }
        store.stats.total_gaussians_ever = store.total_gaussians_ever;
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.cfg
    }

    pub fn chunk_size(&self) -> f64 {
        self.cfg.chunk_size_m
    }

    pub fn disk_root(&self) -> &Path {
        &self.cfg.disk_root
    }

    pub fn stats(&self) -> StoreStats {
        let mut s = self.stats.clone();
        s.active_gaussians = self.active_gaussians();
        s.active_chunks = self.resident.len() as u64;
        s.active_keyframes = self.keyframes.len() as u64;
        s.total_gaussians_ever = self.total_gaussians_ever;
        s
    }

    pub fn active_gaussians(&self) -> u64 {
        self.resident.values().map(|c| c.gaussians.len() as u64).sum()
    }

    /// Bumped whenever the set of existing chunks changes.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn extent(&self) -> Option<ChunkExtent> {
        self.extent
    }

    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn exists(&self, id: EncodedChunkId) -> bool {
        self.resident.contains_key(&id) || self.on_disk.contains_key(&id)
    }

    pub fn is_resident(&self, id: EncodedChunkId) -> bool {
        self.resident.contains_key(&id)
    }

    pub fn resident_ids(&self) -> BTreeSet<EncodedChunkId> {
        self.resident.keys().copied().collect()
    }

    /// All existing chunk ids, resident or on disk.
    pub fn chunk_ids(&self) -> BTreeSet<EncodedChunkId> {
        self.resident
            .keys()
            .chain(self.on_disk.keys())
            .copied()
            .collect()
    }

    pub fn resident_chunk(&self, id: EncodedChunkId) -> Option<&Chunk> {
        self.resident.get(&id)
    }

    /// Gaussian count of a chunk: live size if resident, otherwise the count
    /// recorded in its file header.
    pub fn chunk_len(&self, id: EncodedChunkId) -> Option<u64> {
        self.resident
            .get(&id)
            .map(|c| c.gaussians.len() as u64)
            .or_else(|| self.on_disk.get(&id).copied())
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    fn note_chunk_created(&mut self, id: EncodedChunkId) -> Result<()> {
        let c = grid::decode_id(id)?;
        match &mut self.extent {
            Some(e) => e.include(c),
            None => self.extent = Some(ChunkExtent::single(c)),
        }
        self.generation += 1;
        Ok(())
    }

    // ---- chunk tier ----------------------------------------------------

    /// Makes `id` resident (loading or creating it) and stamps it with `tick`.
    /// Returns whether a disk load happened.
    fn make_resident(&mut self, id: EncodedChunkId, tick: u64) -> Result<bool> {
        if let Some(c) = self.resident.get_mut(&id) {
            c.last_access = tick;
            return Ok(false);
        }
        if self.on_disk.contains_key(&id) {
            let path = format::chunk_path(&self.cfg.disk_root, id);
            let start = Instant::now();
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let (file_id, gaussians) = format::decode_chunk(&bytes, &path)?;
            self.stats.io_nanos += elapsed_nanos(start);
            self.stats.bytes_read += bytes.len() as u64;
            if file_id != id {
                return Err(Error::corrupt(
                    &path,
                    format!("file holds chunk {file_id}, expected {id}"),
                ));
            }
            self.stats.chunk_loads += 1;
            self.resident.insert(
                id,
                Chunk {
                    id,
                    gaussians,
                    last_access: tick,
                    dirty: false,
                },
            );
            return Ok(true);
        }
        grid::decode_id(id)?;
        self.resident.insert(
            id,
            Chunk {
                id,
                gaussians: Vec::new(),
                last_access: tick,
                dirty: true,
            },
        );
        self.note_chunk_created(id)?;
        Ok(false)
    }

    fn write_chunk(&mut self, id: EncodedChunkId) -> Result<()> {
        let chunk = &self.resident[&id];
        let path = format::chunk_path(&self.cfg.disk_root, id);
        let start = Instant::now();
        if chunk.gaussians.is_empty() {
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            self.on_disk.remove(&id);
        } else {
            let bytes = format::encode_chunk(id, &chunk.gaussians);
            format::write_atomic(&path, &bytes)?;
            self.stats.bytes_written += bytes.len() as u64;
            self.stats.chunk_writes += 1;
            self.on_disk.insert(id, chunk.gaussians.len() as u64);
        }
        self.stats.io_nanos += elapsed_nanos(start);
        self.pending_delete.remove(&id);
        if let Some(c) = self.resident.get_mut(&id) {
            c.dirty = false;
        }
        Ok(())
    }

    fn evict_chunk(&mut self, id: EncodedChunkId) -> Result<()> {
        let (dirty, empty) = {
            let c = &self.resident[&id];
            (c.dirty, c.gaussians.is_empty())
        };
        if dirty || empty {
            self.write_chunk(id)?;
        }
        self.resident.remove(&id);
        if empty && !self.on_disk.contains_key(&id) {
            self.generation += 1;
        }
        self.stats.chunk_evictions += 1;
        Ok(())
    }

    /// Oldest-first eviction plan over unprotected resident chunks.
    fn eviction_plan(
        &self,
        required_free: u64,
        protected: &BTreeSet<EncodedChunkId>,
    ) -> (Vec<EncodedChunkId>, u64, bool) {
        let mut candidates: Vec<(u64, EncodedChunkId, u64)> = self
            .resident
            .values()
            .filter(|c| !protected.contains(&c.id))
            .map(|c| (c.last_access, c.id, c.gaussians.len() as u64))
            .collect();
        candidates.sort_unstable();
        let mut freed = 0;
        let mut plan = Vec::new();
        for (_, id, size) in candidates {
            if freed >= required_free {
                break;
            }
            freed += size;
            plan.push(id);
        }
        (plan, freed, freed >= required_free)
    }

    /// Evicts the shortest oldest-first prefix of unprotected resident chunks
    /// whose sizes sum to at least `required_free`. Nothing is evicted when
    /// even all unprotected chunks would not suffice.
    pub fn evict_lru(
        &mut self,
        required_free: u64,
        protected: &BTreeSet<EncodedChunkId>,
    ) -> Result<Vec<EncodedChunkId>> {
        let (plan, freed, enough) = self.eviction_plan(required_free, protected);
        if !enough {
            return Err(Error::InsufficientEvictable {
                required: required_free,
                available: freed,
            });
        }
        for &id in &plan {
            self.evict_chunk(id)?;
        }
        Ok(plan)
    }

    /// Brings residency back under budget without touching `protected`.
    fn enforce_budget(&mut self, protected: &BTreeSet<EncodedChunkId>) -> Result<Vec<EncodedChunkId>> {
        let active = self.active_gaussians();
        let budget = self.cfg.gaussian_budget;
        if active <= budget {
            self.stats.overshoot = 0;
            return Ok(Vec::new());
        }
        let evicted = match self.evict_lru(active - budget, protected) {
            Ok(ids) => ids,
            Err(Error::InsufficientEvictable { .. }) => {
                let (plan, _, _) = self.eviction_plan(u64::MAX, protected);
                for &id in &plan {
                    self.evict_chunk(id)?;
                }
                plan
            }
            Err(e) => return Err(e),
        };
        self.stats.overshoot = self.active_gaussians().saturating_sub(budget);
        Ok(evicted)
    }

    /// Makes every id resident, loading from disk or creating empty chunks as
    /// needed, then evicts other chunks until the budget holds (or nothing
    /// evictable is left).
    pub fn ensure_resident(&mut self, ids: &[EncodedChunkId]) -> Result<LoadReport> {
        let tick = self.next_tick();
        let wanted: BTreeSet<EncodedChunkId> = ids.iter().copied().collect();
        let mut report = LoadReport::default();
        for &id in &wanted {
            if self.resident.contains_key(&id) {
                report.already_resident.push(id);
            } else {
                report.loaded.push(id);
            }
            self.make_resident(id, tick)?;
        }
        report.evicted = self.enforce_budget(&wanted)?;
        Ok(report)
    }

    /// Appends Gaussians to their owning chunks, creating or loading chunks
    /// as needed, then enforces the budget over chunks not touched here.
    pub fn insert_gaussians(&mut self, gs: Vec<Gaussian>) -> Result<usize> {
        if gs.is_empty() {
            return Ok(0);
        }
        for (index, g) in gs.iter().enumerate() {
            g.validate().map_err(|e| Error::GaussianOutOfRange {
                index,
                reason: e.to_string(),
            })?;
        }
        let n = gs.len();
        self.place(gs, &BTreeSet::new())?;
        self.total_gaussians_ever += n as u64;
        Ok(n)
    }

    /// Moves Gaussians into their owning chunks without counting them as new.
    /// Returns the address each one landed at, in input order.
    pub(crate) fn place(
        &mut self,
        gs: Vec<Gaussian>,
        extra_protected: &BTreeSet<EncodedChunkId>,
    ) -> Result<Vec<GaussianAddr>> {
        let s = self.cfg.chunk_size_m;
        let mut ids = Vec::with_capacity(gs.len());
        for (index, g) in gs.iter().enumerate() {
            ids.push(
                grid::gaussian_chunk(g, s).map_err(|e| Error::GaussianOutOfRange {
                    index,
                    reason: e.to_string(),
                })?,
            );
        }
        let tick = self.next_tick();
        let targets: BTreeSet<EncodedChunkId> = ids.iter().copied().collect();
        for &id in &targets {
            self.make_resident(id, tick)?;
        }
        let mut addrs = Vec::with_capacity(gs.len());
        for (g, id) in gs.into_iter().zip(ids) {
            let chunk = self.resident.get_mut(&id).expect("target made resident");
            addrs.push(GaussianAddr {
                chunk: id,
                index: chunk.gaussians.len() as u32,
            });
            chunk.gaussians.push(g);
            chunk.dirty = true;
        }
        let mut protected = targets;
        protected.extend(extra_protected.iter().copied());
        self.enforce_budget(&protected)?;
        Ok(addrs)
    }

    /// Addresses of every Gaussian in the given resident chunks, in id order.
    pub fn gather_visible(&mut self, ids: &[EncodedChunkId]) -> Result<Vec<GaussianAddr>> {
        let wanted: BTreeSet<EncodedChunkId> = ids.iter().copied().collect();
        if let Some(&missing) = wanted.iter().find(|id| !self.resident.contains_key(id)) {
            return Err(Error::NotResident(missing));
        }
        let tick = self.next_tick();
        let mut out = Vec::new();
        for id in wanted {
            let chunk = self.resident.get_mut(&id).expect("checked above");
            chunk.last_access = tick;
            out.extend((0..chunk.gaussians.len() as u32).map(|index| GaussianAddr { chunk: id, index }));
        }
        Ok(out)
    }

    pub fn gaussian(&self, addr: GaussianAddr) -> Result<&Gaussian> {
        self.resident
            .get(&addr.chunk)
            .ok_or(Error::NotResident(addr.chunk))?
            .gaussians
            .get(addr.index as usize)
            .ok_or_else(|| Error::InvalidInput(format!("stale address {addr:?}")))
    }

    /// Mutable access through a gathered address; marks the owning chunk dirty.
    pub fn gaussian_mut(&mut self, addr: GaussianAddr) -> Result<&mut Gaussian> {
        let chunk = self
            .resident
            .get_mut(&addr.chunk)
            .ok_or(Error::NotResident(addr.chunk))?;
        chunk.dirty = true;
        chunk
            .gaussians
            .get_mut(addr.index as usize)
            .ok_or_else(|| Error::InvalidInput(format!("stale address {addr:?}")))
    }

    /// Resolves many addresses at once.
    pub fn resolve<'a>(
        &'a self,
        addrs: &'a [GaussianAddr],
    ) -> impl Iterator<Item = Result<&'a Gaussian>> + 'a {
        addrs.iter().map(move |&a| self.gaussian(a))
    }

    /// Mutable access to a resident chunk's Gaussians; marks it dirty.
    pub(crate) fn chunk_gaussians_mut(&mut self, id: EncodedChunkId) -> Result<&mut Vec<Gaussian>> {
        let chunk = self.resident.get_mut(&id).ok_or(Error::NotResident(id))?;
        chunk.dirty = true;
        Ok(&mut chunk.gaussians)
    }

    /// Drops an empty resident chunk from the map. Its file, if any, is
    /// deleted on the next flush unless the chunk is recreated first.
    pub(crate) fn remove_empty_chunk(&mut self, id: EncodedChunkId) -> Result<()> {
        let chunk = self.resident.get(&id).ok_or(Error::NotResident(id))?;
        if !chunk.gaussians.is_empty() {
            return Err(Error::InvalidInput(format!("chunk {id} is not empty")));
        }
        self.resident.remove(&id);
        if self.on_disk.remove(&id).is_some() {
            self.pending_delete.insert(id);
        }
        self.generation += 1;
        Ok(())
    }

    // ---- keyframe tier -------------------------------------------------

    pub fn keyframe_known(&self, id: u64) -> bool {
        self.keyframes.contains_key(&id) || self.keyframes_on_disk.contains(&id)
    }

    pub fn keyframe_ids(&self) -> BTreeSet<u64> {
        self.keyframes
            .keys()
            .chain(self.keyframes_on_disk.iter())
            .copied()
            .collect()
    }

    pub fn resident_keyframe_ids(&self) -> BTreeSet<u64> {
        self.keyframes.keys().copied().collect()
    }

    /// Resident keyframes from least to most recently used.
    pub fn keyframe_lru_order(&self) -> Vec<u64> {
        self.keyframe_lru.values().copied().collect()
    }

    pub fn keyframe_add(&mut self, mut kf: Keyframe) -> Result<()> {
        kf.validate()?;
        if self.keyframe_known(kf.id) {
            return Err(Error::DuplicateKeyframe(kf.id));
        }
        let tick = self.next_tick();
        kf.last_access = tick;
        let id = kf.id;
        self.keyframes.insert(id, KeyframeSlot { kf, dirty: true });
        self.keyframe_lru.insert(tick, id);
        self.enforce_keyframe_budget(id)
    }

    pub fn keyframe_get(&mut self, id: u64) -> Result<&Keyframe> {
        self.touch_keyframe(id)?;
        Ok(&self.keyframes[&id].kf)
    }

    /// Like [`keyframe_get`](Self::keyframe_get) but marks the keyframe dirty.
    pub fn keyframe_get_mut(&mut self, id: u64) -> Result<&mut Keyframe> {
        self.touch_keyframe(id)?;
        let slot = self.keyframes.get_mut(&id).expect("touched");
        slot.dirty = true;
        Ok(&mut slot.kf)
    }

    fn touch_keyframe(&mut self, id: u64) -> Result<()> {
        let tick = self.next_tick();
        if let Some(slot) = self.keyframes.get_mut(&id) {
            self.keyframe_lru.remove(&slot.kf.last_access);
            slot.kf.last_access = tick;
            self.keyframe_lru.insert(tick, id);
            return Ok(());
        }
        if !self.keyframes_on_disk.contains(&id) {
            return Err(Error::UnknownKeyframe(id));
        }
        let path = format::keyframe_path(&self.cfg.disk_root, id);
        let start = Instant::now();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut kf = format::decode_keyframe(&bytes, &path)?;
        self.stats.io_nanos += elapsed_nanos(start);
        self.stats.bytes_read += bytes.len() as u64;
        if kf.id != id {
            return Err(Error::corrupt(&path, format!("file holds keyframe {}", kf.id)));
        }
        self.stats.keyframe_loads += 1;
        kf.last_access = tick;
        self.keyframes.insert(id, KeyframeSlot { kf, dirty: false });
        self.keyframe_lru.insert(tick, id);
        self.enforce_keyframe_budget(id)
    }

    fn enforce_keyframe_budget(&mut self, keep: u64) -> Result<()> {
        while self.keyframes.len() > self.cfg.keyframe_budget {
            let victim = self
                .keyframe_lru
                .values()
                .copied()
                .find(|&id| id != keep)
                .expect("budget >= 1 leaves another resident keyframe");
            self.evict_keyframe(victim)?;
        }
        Ok(())
    }

    fn write_keyframe(&mut self, id: u64) -> Result<()> {
        let slot = &self.keyframes[&id];
        let path = format::keyframe_path(&self.cfg.disk_root, id);
        let start = Instant::now();
        let bytes = format::encode_keyframe(&slot.kf);
        format::write_atomic(&path, &bytes)?;
        self.stats.io_nanos += elapsed_nanos(start);
        self.stats.bytes_written += bytes.len() as u64;
        self.stats.keyframe_writes += 1;
        self.keyframes_on_disk.insert(id);
        self.keyframes.get_mut(&id).expect("resident").dirty = false;
        Ok(())
    }

    fn evict_keyframe(&mut self, id: u64) -> Result<()> {
        if self.keyframes[&id].dirty {
            self.write_keyframe(id)?;
        }
        let slot = self.keyframes.remove(&id).expect("resident");
        self.keyframe_lru.remove(&slot.kf.last_access);
        self.stats.keyframe_evictions += 1;
        Ok(())
    }

    // ---- persistence ---------------------------------------------------

    /// Writes every dirty resident chunk and keyframe and deletes the files of
    /// chunks that no longer exist. Empty chunks are dropped from the map.
    pub fn flush(&mut self) -> Result<()> {
        let dirty: Vec<EncodedChunkId> = self
            .resident
            .values()
            .filter(|c| c.dirty || c.gaussians.is_empty())
            .map(|c| c.id)
            .collect();
        for id in dirty {
            self.write_chunk(id)?;
            if self.resident[&id].gaussians.is_empty() {
                self.resident.remove(&id);
                self.generation += 1;
            }
        }
        let stale: Vec<EncodedChunkId> = self
            .pending_delete
            .iter()
            .copied()
            .filter(|id| !self.exists(*id))
            .collect();
        for id in stale {
            let path = format::chunk_path(&self.cfg.disk_root, id);
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            self.pending_delete.remove(&id);
        }
        let dirty_kfs: Vec<u64> = self
            .keyframes
            .iter()
            .filter(|(_, s)| s.dirty)
            .map(|(&id, _)| id)
            .collect();
        for id in dirty_kfs {
            self.write_keyframe(id)?;
        }
        Ok(())
    }

    /// Every Gaussian in the map with its owning chunk id, read without
    /// disturbing residency. Resident chunks are read from memory.
    pub fn all_gaussians(&self) -> Result<Vec<(EncodedChunkId, Gaussian)>> {
        let mut out = Vec::new();
        for id in self.chunk_ids() {
            if let Some(c) = self.resident.get(&id) {
                out.extend(c.gaussians.iter().map(|g| (id, g.clone())));
            } else {
                let path = format::chunk_path(&self.cfg.disk_root, id);
                let (_, gs) = format::read_chunk(&path)?;
                out.extend(gs.into_iter().map(|g| (id, g)));
            }
        }
        Ok(out)
    }

    /// Scans the whole map and counts Gaussians stored under the wrong chunk.
    pub fn audit_placement(&self) -> Result<PlacementAudit> {
        let s = self.cfg.chunk_size_m;
        let mut audit = PlacementAudit::default();
        for (id, g) in self.all_gaussians()? {
            audit.total += 1;
            if grid::gaussian_chunk(&g, s).ok() != Some(id) {
                audit.misplaced += 1;
            }
        }
        audit.expected_total = self.total_gaussians_ever;
        Ok(audit)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlacementAudit {
    pub total: u64,
    pub misplaced: u64,
    /// Count the store believes it holds; equals `total` when nothing was
    /// lost or duplicated.
    pub expected_total: u64,
}

fn list_dir(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Ok(name) = entry.file_name().into_string() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests;
