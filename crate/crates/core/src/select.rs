//! Keyframe selection with spatial locality.
//!
//! Keyframes are bucketed into a coarse grid (default 200 m cells, not
//! center-shifted). Each optimization step draws from the bucket of the most
//! recently added keyframe, preferring keyframes with remaining usage and
//! weighting by their last loss. High-loss keyframes earn extra usage.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::grid::EncodedChunkId;

/// Loss floor so zero-loss keyframes stay selectable.
pub const LOSS_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectConfig {
    pub grid_resolution_m: f64,
    pub initial_usage: u32,
    pub bonus_usage: u32,
    pub loss_bonus_quantile: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            grid_resolution_m: 200.0,
            initial_usage: 8,
            bonus_usage: 4,
            loss_bonus_quantile: 0.5,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_resolution_m > 0.0)
            || self.initial_usage == 0
            || self.bonus_usage == 0
            || !(self.loss_bonus_quantile > 0.0 && self.loss_bonus_quantile < 1.0)
        {
            return Err(Error::InvalidInput(format!("invalid selection config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCell {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

/// Element-wise `floor(p / g)`.
pub fn grid_cell(p: Vec3, g: f64) -> GridCell {
    GridCell {
        x: (p.x / g).floor() as i64,
        y: (p.y / g).floor() as i64,
        z: (p.z / g).floor() as i64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub position: Vec3,
    pub cell: GridCell,
    pub usage_remaining: u32,
    pub last_loss: f64,
}

#[derive(Debug, Clone)]
pub struct KeyframeIndex {
    cfg: SelectConfig,
    entries: BTreeMap<u64, IndexEntry>,
    cells: BTreeMap<GridCell, BTreeSet<u64>>,
    latest: Option<u64>,
}

impl KeyframeIndex {
    pub fn new(cfg: SelectConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            entries: BTreeMap::new(),
            cells: BTreeMap::new(),
            latest: None,
        })
    }

    pub fn config(&self) -> &SelectConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: u64) -> Option<&IndexEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    /// Most recently inserted keyframe.
    pub fn latest(&self) -> Option<&IndexEntry> {
        self.latest.and_then(|id| self.entries.get(&id))
    }

    /// Registers a new keyframe with the initial usage allocation and makes
    /// it the latest one. Re-inserting an id moves it.
    pub fn insert(&mut self, id: u64, position: Vec3) {
        let usage = self.cfg.initial_usage;
        self.upsert(id, position, usage, 0.0);
        self.latest = Some(id);
    }

    /// Registers a keyframe with explicit bookkeeping, without changing which
    /// keyframe is latest.
    pub fn upsert(&mut self, id: u64, position: Vec3, usage_remaining: u32, last_loss: f64) {
        if let Some(old) = self.entries.get(&id) {
            let cell = old.cell;
            self.unlink(id, cell);
        }
        let cell = grid_cell(position, self.cfg.grid_resolution_m);
        self.cells.entry(cell).or_default().insert(id);
        self.entries.insert(
            id,
            IndexEntry {
                id,
                position,
                cell,
                usage_remaining,
                last_loss,
            },
        );
    }

    pub fn set_latest(&mut self, id: u64) -> Result<()> {
        if !self.entries.contains_key(&id) {
            return Err(Error::UnknownKeyframe(id));
        }
        self.latest = Some(id);
        Ok(())
    }

    /// Moves a keyframe after its pose was corrected.
    pub fn update_position(&mut self, id: u64, position: Vec3) -> Result<()> {
        let e = self.entries.get(&id).ok_or(Error::UnknownKeyframe(id))?;
        let (usage, loss) = (e.usage_remaining, e.last_loss);
        self.upsert(id, position, usage, loss);
        Ok(())
    }

    fn unlink(&mut self, id: u64, cell: GridCell) {
        if let Some(members) = self.cells.get_mut(&cell) {
            members.remove(&id);
            if members.is_empty() {
                self.cells.remove(&cell);
            }
        }
    }

    pub fn cell_members(&self, cell: GridCell) -> impl Iterator<Item = u64> + '_ {
        self.cells.get(&cell).into_iter().flatten().copied()
    }
}

/// Keyframes sharing the grid cell of `p_latest`, in id order.
pub fn candidate_set(p_latest: Vec3, idx: &KeyframeIndex) -> Result<Vec<u64>> {
    let cell = grid_cell(p_latest, idx.cfg.grid_resolution_m);
    let members: Vec<u64> = idx.cell_members(cell).collect();
    if members.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(members)
}

/// Fraction of `visible` already in `active`.
pub fn overlap(
    visible: &BTreeSet<EncodedChunkId>,
    active: &BTreeSet<EncodedChunkId>,
) -> Result<f64> {
    if visible.is_empty() {
        return Err(Error::UndefinedOverlap);
    }
    let shared = visible.intersection(active).count();
    Ok(shared as f64 / visible.len() as f64)
}

/// Draws one candidate with remaining usage, with probability proportional to
/// its last loss (floored at [`LOSS_EPSILON`]), and consumes one unit of its
/// usage. When no candidate has usage left, all candidates are first
/// replenished to the initial allocation.
pub fn select_keyframe<R: Rng + ?Sized>(
    candidates: &[u64],
    idx: &mut KeyframeIndex,
    rng: &mut R,
) -> Result<u64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    for &id in candidates {
        if !idx.entries.contains_key(&id) {
            return Err(Error::UnknownKeyframe(id));
        }
    }
    let has_usage = |idx: &KeyframeIndex| {
        candidates
            .iter()
            .any(|id| idx.entries[id].usage_remaining > 0)
    };
    if !has_usage(idx) {
        let fresh = idx.cfg.initial_usage;
        for id in candidates {
            idx.entries.get_mut(id).expect("checked").usage_remaining = fresh;
        }
    }
    let eligible: Vec<u64> = candidates
        .iter()
        .copied()
        .filter(|id| idx.entries[id].usage_remaining > 0)
        .collect();
    let weights: Vec<f64> = eligible
        .iter()
        .map(|id| idx.entries[id].last_loss.max(LOSS_EPSILON))
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidInput(format!("selection weights: {e}")))?;
    let picked = eligible[dist.sample(rng)];
    idx.entries.get_mut(&picked).expect("eligible").usage_remaining -= 1;
    Ok(picked)
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Stores a new loss for `id`. If it strictly exceeds the configured quantile
/// of the losses in its grid cell (itself included), the keyframe earns
/// `bonus_usage` more selections. Returns whether the bonus was granted.
pub fn record_loss(id: u64, loss: f64, idx: &mut KeyframeIndex) -> Result<bool> {
    if !(loss >= 0.0 && loss.is_finite()) {
        return Err(Error::InvalidInput(format!("loss must be finite and >= 0, got {loss}")));
    }
    let cell = {
        let e = idx.entries.get_mut(&id).ok_or(Error::UnknownKeyframe(id))?;
        e.last_loss = loss;
        e.cell
    };
    let mut losses: Vec<f64> = idx
        .cell_members(cell)
        .map(|k| idx.entries[&k].last_loss)
        .collect();
    let threshold = quantile(&mut losses, idx.cfg.loss_bonus_quantile);
    let bonus = loss > threshold;
    if bonus {
        let extra = idx.cfg.bonus_usage;
        let e = idx.entries.get_mut(&id).expect("present");
        e.usage_remaining = e.usage_remaining.saturating_add(extra);
    }
    Ok(bonus)
}
