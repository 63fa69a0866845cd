//! Propagating loop-closure pose corrections into the chunked map.
//!
//! A correction assigns a rigid transform to each affected keyframe. Every
//! chunk seen by an affected keyframe (at its pre-correction pose) has its
//! Gaussians moved by the transform of the first keyframe in entry order that
//! sees it. Afterwards Gaussians that crossed a chunk boundary are moved to
//! their new owners, and the map around junction keyframes has its opacity and
//! optimizer state reset for refinement.

use std::collections::BTreeSet;

use crate::culling::{visible_chunks, CullConfig};
use crate::error::{Error, Result};
use crate::geom::{pose_compose, transform_gaussian, Pose, Quat, RigidTransform, Vec3};
use crate::grid::{self, EncodedChunkId};
use crate::store::ChunkStore;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionSet {
    pub entries: Vec<(u64, RigidTransform)>,
    pub junction_ids: BTreeSet<u64>,
}

impl CorrectionSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, t) in &self.entries {
            if !seen.insert(*id) {
                return Err(Error::InvalidInput(format!("keyframe {id} corrected twice")));
            }
            if !(t.translation.is_finite() && t.rotation.norm().is_finite() && t.rotation.norm() > 0.0) {
                return Err(Error::InvalidInput(format!("bad transform for keyframe {id}")));
            }
        }
        Ok(())
    }

    /// The keyframe with the largest id mentioned in the set.
    pub fn trigger_keyframe(&self) -> Option<u64> {
        self.entries
            .iter()
            .map(|(id, _)| *id)
            .chain(self.junction_ids.iter().copied())
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    /// Every affected chunk is loaded at once.
    Batch,
    /// Chunks are loaded keyframe by keyframe.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPlan {
    pub mode: CorrectionMode,
    pub unique_chunks: BTreeSet<EncodedChunkId>,
    pub estimated_gaussians: u64,
    /// Visible chunks of each entry, in entry order, at the pre-correction pose.
    pub per_keyframe: Vec<(u64, BTreeSet<EncodedChunkId>)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionReport {
    pub transformed: u64,
    pub skipped_duplicates: u64,
    /// Chunks each entry transformed, in entry order. Disjoint.
    pub owned: Vec<(u64, BTreeSet<EncodedChunkId>)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoveReport {
    pub moved: u64,
    pub created_chunks: BTreeSet<EncodedChunkId>,
    pub emptied_chunks: BTreeSet<EncodedChunkId>,
}

impl MoveReport {
    fn absorb(&mut self, o: MoveReport) {
        self.moved += o.moved;
        self.created_chunks.extend(o.created_chunks);
        self.emptied_chunks.extend(o.emptied_chunks);
    }
}

/// Chunks visible from a stored keyframe's current pose.
pub fn keyframe_visible(
    store: &mut ChunkStore,
    id: u64,
    cull: &CullConfig,
) -> Result<BTreeSet<EncodedChunkId>> {
    let kf = store.keyframe_get(id)?;
    let (pose, intr) = (kf.pose, kf.intrinsics);
    let Some(extent) = store.extent() else {
        return Ok(BTreeSet::new());
    };
    let s = store.chunk_size();
    let st = &*store;
    Ok(visible_chunks(&pose, &intr, &extent, &|c| st.exists(c), cull, s))
}

pub fn plan_correction(
    cs: &CorrectionSet,
    store: &mut ChunkStore,
    cull: &CullConfig,
) -> Result<CorrectionPlan> {
    cs.validate()?;
    if let Some(&id) = cs
        .entries
        .iter()
        .map(|(id, _)| id)
        .chain(&cs.junction_ids)
        .find(|id| !store.keyframe_known(**id))
    {
        return Err(Error::UnknownKeyframe(id));
    }
    let mut per_keyframe = Vec::with_capacity(cs.entries.len());
    let mut unique_chunks = BTreeSet::new();
    for (id, _) in &cs.entries {
        let vis = keyframe_visible(store, *id, cull)?;
        unique_chunks.extend(vis.iter().copied());
        per_keyframe.push((*id, vis));
    }
    let estimated_gaussians = unique_chunks
        .iter()
        .map(|&c| store.chunk_len(c).unwrap_or(0))
        .sum();
    let mode = if estimated_gaussians <= store.config().gaussian_budget {
        CorrectionMode::Batch
    } else {
        CorrectionMode::Sequential
    };
    Ok(CorrectionPlan {
        mode,
        unique_chunks,
        estimated_gaussians,
        per_keyframe,
    })
}

/// Transforms the Gaussians of every affected chunk once and moves the
/// keyframe poses to `T * pose`. Chunk ownership follows entry order.
pub fn apply_correction(
    cs: &CorrectionSet,
    plan: &CorrectionPlan,
    store: &mut ChunkStore,
) -> Result<CorrectionReport> {
    let consistent = plan.per_keyframe.len() == cs.entries.len()
        && plan
            .per_keyframe
            .iter()
            .zip(&cs.entries)
            .all(|((a, _), (b, _))| a == b);
    if !consistent {
        return Err(Error::InvalidInput("plan does not match correction set".into()));
    }
    if plan.mode == CorrectionMode::Batch {
        let all: Vec<EncodedChunkId> = plan.unique_chunks.iter().copied().collect();
        store.ensure_resident(&all)?;
    }
    let mut report = CorrectionReport::default();
    let mut mask: BTreeSet<EncodedChunkId> = BTreeSet::new();
    for ((id, vis), (_, t)) in plan.per_keyframe.iter().zip(&cs.entries) {
        let owned: BTreeSet<EncodedChunkId> = vis.difference(&mask).copied().collect();
        for &c in vis.intersection(&mask) {
            report.skipped_duplicates += store.chunk_len(c).unwrap_or(0);
        }
        let list: Vec<EncodedChunkId> = owned.iter().copied().collect();
        store.ensure_resident(&list)?;
        for &c in &owned {
            for g in store.chunk_gaussians_mut(c)?.iter_mut() {
                *g = transform_gaussian(g, t);
                report.transformed += 1;
            }
        }
        mask.extend(owned.iter().copied());
        report.owned.push((*id, owned));
    }
    for (id, t) in &cs.entries {
        let kf = store.keyframe_get_mut(*id)?;
        kf.pose = pose_compose(t, &kf.pose);
    }
    Ok(report)
}

/// Moves every Gaussian in `touched` whose position now falls in another
/// chunk. All misplaced Gaussians are extracted before any is re-inserted.
pub fn redistribute(
    touched: &BTreeSet<EncodedChunkId>,
    store: &mut ChunkStore,
) -> Result<MoveReport> {
    if let Some(&c) = touched.iter().find(|c| !store.is_resident(**c)) {
        return Err(Error::NotResident(c));
    }
    let s = store.chunk_size();
    let mut report = MoveReport::default();
    let mut moving = Vec::new();
    for &id in touched {
        let chunk = store.resident_chunk(id).expect("checked resident");
        let mut homes = Vec::with_capacity(chunk.gaussians.len());
        for g in &chunk.gaussians {
            homes.push(grid::gaussian_chunk(g, s)?);
        }
        if homes.iter().all(|&h| h == id) {
            continue;
        }
        let gs = store.chunk_gaussians_mut(id)?;
        let mut keep = Vec::with_capacity(gs.len());
        for (g, home) in gs.drain(..).zip(homes) {
            if home == id {
                keep.push(g);
            } else {
                moving.push(g);
            }
        }
        *gs = keep;
        if gs.is_empty() {
            store.remove_empty_chunk(id)?;
            report.emptied_chunks.insert(id);
        }
    }
    for g in &moving {
        let home = grid::gaussian_chunk(g, s)?;
        if !store.exists(home) {
            report.created_chunks.insert(home);
        }
    }
    report.moved = moving.len() as u64;
    if !moving.is_empty() {
        store.place(moving, &BTreeSet::new())?;
    }
    Ok(report)
}

/// Resets opacity and optimizer state of every Gaussian visible to a
/// junction keyframe. Returns how many were reset.
pub fn refine_reset(
    junction_ids: &BTreeSet<u64>,
    store: &mut ChunkStore,
    cull: &CullConfig,
    init_opacity: f64,
) -> Result<u64> {
    if let Some(&id) = junction_ids.iter().find(|id| !store.keyframe_known(**id)) {
        return Err(Error::UnknownKeyframe(id));
    }
    let mut done = BTreeSet::new();
    let mut count = 0;
    for &id in junction_ids {
        let vis = keyframe_visible(store, id, cull)?;
        let fresh: Vec<EncodedChunkId> = vis.difference(&done).copied().collect();
        store.ensure_resident(&fresh)?;
        for &c in &fresh {
            for g in store.chunk_gaussians_mut(c)?.iter_mut() {
                g.opacity = init_opacity as f32;
                g.opt_state.clear();
                count += 1;
            }
        }
        done.extend(fresh);
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub plan: CorrectionPlan,
    pub report: CorrectionReport,
    pub moves: MoveReport,
    pub resets: u64,
}

/// Plan, apply, redistribute and reset in one go. `force_mode` overrides the
/// planned memory strategy.
pub fn run_correction(
    cs: &CorrectionSet,
    store: &mut ChunkStore,
    cull: &CullConfig,
    init_opacity: f64,
    force_mode: Option<CorrectionMode>,
) -> Result<CorrectionOutcome> {
    let mut plan = plan_correction(cs, store, cull)?;
    if let Some(m) = force_mode {
        plan.mode = m;
    }
    let report = apply_correction(cs, &plan, store)?;
    let mut moves = MoveReport::default();
    match plan.mode {
        CorrectionMode::Batch => {
            let live: BTreeSet<EncodedChunkId> = plan
                .unique_chunks
                .iter()
                .copied()
                .filter(|&c| store.exists(c))
                .collect();
            let list: Vec<EncodedChunkId> = live.iter().copied().collect();
            store.ensure_resident(&list)?;
            moves.absorb(redistribute(&live, store)?);
        }
        CorrectionMode::Sequential => {
            for (_, owned) in &report.owned {
                let live: BTreeSet<EncodedChunkId> =
                    owned.iter().copied().filter(|&c| store.exists(c)).collect();
                let list: Vec<EncodedChunkId> = live.iter().copied().collect();
                store.ensure_resident(&list)?;
                moves.absorb(redistribute(&live, store)?);
            }
        }
    }
    let resets = refine_reset(&cs.junction_ids, store, cull, init_opacity)?;
    Ok(CorrectionOutcome {
        plan,
        report,
        moves,
        resets,
    })
}

/// Parses correction events. Each non-comment line is
/// `kf_id tx ty tz qw qx qy qz [junction]`; blank lines separate events.
pub fn parse_corrections(text: &str) -> Result<Vec<CorrectionSet>> {
    let mut sets = Vec::new();
    let mut cur = CorrectionSet::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if raw.trim().is_empty() && !cur.entries.is_empty() {
                sets.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let bad = |what: &str| Error::InvalidInput(format!("correction line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 && fields.len() != 9 {
            return Err(bad("expected 8 or 9 fields"));
        }
        let id: u64 = fields[0].parse().map_err(|_| bad("keyframe id"))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..8]) {
            *slot = f.parse().map_err(|_| bad("number"))?;
        }
        if fields.len() == 9 {
            if fields[8] != "junction" {
                return Err(bad("trailing field must be `junction`"));
            }
            cur.junction_ids.insert(id);
        }
        cur.entries.push((
            id,
            Pose::new(Quat::new(v[3], v[4], v[5], v[6]), Vec3::new(v[0], v[1], v[2])),
        ));
    }
    if !cur.entries.is_empty() {
        sets.push(cur);
    }
    for s in &sets {
        s.validate()?;
    }
    Ok(sets)
}

/// Inverse of [`parse_corrections`].
pub fn format_corrections(sets: &[CorrectionSet]) -> String {
    let mut out = String::new();
    for (i, s) in sets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (id, t) in &s.entries {
            let (p, q) = (t.translation, t.rotation);
            out.push_str(&format!(
                "{id} {} {} {} {} {} {} {}",
                p.x, p.y, p.z, q.w, q.x, q.y, q.z
            ));
            if s.junction_ids.contains(id) {
                out.push_str(" junction");
            }
            out.push('\n');
        }
    }
    out
}
