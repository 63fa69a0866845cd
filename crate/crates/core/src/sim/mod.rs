//! Trajectory replay harness.
//!
//! Each keyframe event adds the frame to the store, samples new Gaussians
//! where the current map under-explains the image, and runs a fixed number of
//! optimization steps. A step selects a keyframe, culls and loads its chunks,
//! renders, scores and nudges the visible Gaussians, and emits one metrics
//! row. Loop-closure events correct the map and run a refinement phase with
//! ingestion paused.

mod dataset;
mod metrics;
pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    load_dataset, parse_camera, parse_keypoints, parse_trajectory, write_dataset, Dataset,
    DatasetPaths, FrameInput, DEPTH_SCALE,
};
pub use metrics::{read_metrics, report, FrameMetrics, MetricsWriter, Report, METRICS_HEADER};
pub use synth::{generate_synthetic, population_hash, SyntheticOutput, SyntheticScene, Topology};

use crate::culling::{CullCache, CullConfig};
use crate::error::{Error, Result};
use crate::geom::{Gaussian, Keyframe, SH_PER_CHANNEL};
use crate::grid::EncodedChunkId;
use crate::loopclose::{run_correction, CorrectionMode, CorrectionOutcome, CorrectionSet};
use crate::render::{render, total_loss, LossWeights, RenderStats};
use crate::sample::{lift_points, lift_to_gaussians, log_norm, sample_pixels, sampling_probability, SampleConfig};
use crate::select::{candidate_set, overlap, record_loss, select_keyframe, KeyframeIndex, SelectConfig};
use crate::store::{ChunkStore, PlacementAudit, StoreConfig, StoreStats};

/// How `io_ns` and `step_ns` are filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingMode {
    /// A fixed cost model over bytes, files and rasterization work. Runs with
    /// the same inputs produce identical numbers.
    #[default]
    Modeled,
    /// Measured wall-clock time.
    Wall,
}

/// Cost model used by [`TimingMode::Modeled`], in nanoseconds.
pub mod cost {
    pub const PER_BYTE: u64 = 1;
    pub const PER_FILE: u64 = 20_000;
    pub const PER_SPLAT: u64 = 60;
    pub const PER_FRAGMENT: u64 = 12;
    pub const PER_LOSS_PIXEL: u64 = 40;
}

/// Finite-difference nudging of color and opacity on the selected view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    /// Gaussians perturbed per step.
    pub max_params: usize,
    pub perturbation: f64,
    pub learning_rate: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_params: 64,
            perturbation: 0.05,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub store: StoreConfig,
    pub select: SelectConfig,
    pub sample: SampleConfig,
    pub cull: CullConfig,
    pub weights: LossWeights,
    pub opt: OptConfig,
    pub steps_per_frame: usize,
    /// Refinement steps after each loop closure.
    pub refine_iters: usize,
    pub seed: u64,
    pub timing: TimingMode,
    /// Overrides the planned correction strategy.
    pub force_mode: Option<CorrectionMode>,
}

impl ReplayConfig {
    pub fn desk(disk_root: impl Into<std::path::PathBuf>) -> Self {
        Self {
            store: StoreConfig::desk(disk_root),
            select: SelectConfig::default(),
            sample: SampleConfig::default(),
            cull: CullConfig::default(),
            weights: LossWeights::default(),
            opt: OptConfig::default(),
            steps_per_frame: 5,
            refine_iters: 1000,
            seed: 7,
            timing: TimingMode::Modeled,
            force_mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub rows: usize,
    pub frames: usize,
    pub stats: StoreStats,
    pub corrections: Vec<CorrectionOutcome>,
    /// Full-map placement check, run after any loop closure.
    pub audit: Option<PlacementAudit>,
}

fn frame_seed(seed: u64, frame: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ frame.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Meter {
    timing: TimingMode,
    last: StoreStats,
    started: Instant,
    compute: u64,
}

impl Meter {
    fn new(timing: TimingMode, stats: StoreStats) -> Self {
        Self {
            timing,
            last: stats,
            started: Instant::now(),
            compute: 0,
        }
    }

    fn charge_render(&mut self, s: RenderStats) {
        self.compute += s.splats * cost::PER_SPLAT + s.fragments * cost::PER_FRAGMENT;
    }

    fn charge_loss(&mut self, pixels: usize) {
        self.compute += pixels as u64 * cost::PER_LOSS_PIXEL;
    }

    /// Returns `(loads, evictions, io_ns, step_ns)` since the previous call.
    fn lap(&mut self, now: StoreStats) -> (u64, u64, u64, u64) {
        let d = |a: u64, b: u64| a.saturating_sub(b);
        let loads = d(now.chunk_loads, self.last.chunk_loads);
        let evictions = d(now.chunk_evictions, self.last.chunk_evictions);
        let (io, step) = match self.timing {
            TimingMode::Modeled => {
                let bytes = d(now.bytes_read + now.bytes_written, self.last.bytes_read + self.last.bytes_written);
                let files = d(
                    now.chunk_loads + now.chunk_writes + now.keyframe_loads + now.keyframe_writes,
                    self.last.chunk_loads + self.last.chunk_writes + self.last.keyframe_loads + self.last.keyframe_writes,
                );
                let io = bytes * cost::PER_BYTE + files * cost::PER_FILE;
                (io, io + self.compute)
            }
            TimingMode::Wall => {
                let io = d(now.io_nanos, self.last.io_nanos);
                let step = self.started.elapsed().as_nanos() as u64;
                (io, step.max(io))
            }
        };
        self.last = now;
        self.compute = 0;
        self.started = Instant::now();
        (loads, evictions, io, step)
    }
}

struct Replay<'a, F: FnMut(&FrameMetrics) -> Result<()>> {
    cfg: &'a ReplayConfig,
    store: ChunkStore,
    index: KeyframeIndex,
    cache: CullCache,
    rng: ChaCha8Rng,
    meter: Meter,
    sink: F,
    rows: usize,
}

impl<F: FnMut(&FrameMetrics) -> Result<()>> Replay<'_, F> {
    fn visible(&mut self, kf: &Keyframe) -> BTreeSet<EncodedChunkId> {
        let Some(extent) = self.store.extent() else {
            return BTreeSet::new();
        };
        let st = &self.store;
        self.cache
            .visible_chunks_cached(
                &kf.pose,
                &kf.intrinsics,
                &extent,
                &|c| st.exists(c),
                st.generation(),
                &self.cfg.cull,
                st.chunk_size(),
            )
            .0
    }

    fn ingest(&mut self, frame_id: u64, kf: Keyframe, keypoints: &[(crate::geom::Vec3, [f64; 3])]) -> Result<()> {
        self.store.keyframe_add(kf.clone())?;
        self.index.insert(frame_id, kf.pose.translation);
        self.store.keyframe_get_mut(frame_id)?.usage_remaining = self.index.config().initial_usage;

        let vis: Vec<EncodedChunkId> = self.visible(&kf).into_iter().collect();
        self.store.ensure_resident(&vis)?;
        let addrs = self.store.gather_visible(&vis)?;
        let current = render(
            self.store.resolve(&addrs).collect::<Result<Vec<&Gaussian>>>()?,
            &kf.pose,
            &kf.intrinsics,
        );
        self.meter.charge_render(current.stats);
        let p_in = log_norm(&kf.rgb_image(), &self.cfg.sample);
        let p_r = log_norm(&current.rgb, &self.cfg.sample);
        let ps = sampling_probability(&p_in, &p_r)?;
        let pixels = sample_pixels(&ps, self.cfg.sample.samples_per_keyframe, frame_seed(self.cfg.seed, frame_id));
        let mut fresh = lift_to_gaussians(&pixels, &kf, &self.cfg.sample).gaussians;
        fresh.extend(lift_points(keypoints, &kf, &self.cfg.sample).gaussians);
        self.store.insert_gaussians(fresh)?;
        Ok(())
    }

    fn step(&mut self, frame: u64, step: u64) -> Result<()> {
        let latest = self
            .index
            .latest()
            .ok_or(Error::EmptyCandidates)?
            .position;
        let candidates = candidate_set(latest, &self.index)?;
        let sel = select_keyframe(&candidates, &mut self.index, &mut self.rng)?;
        let kf = self.store.keyframe_get(sel)?.clone();

        let vis = self.visible(&kf);
        let ov = overlap(&vis, &self.store.resident_ids()).ok();
        let list: Vec<EncodedChunkId> = vis.into_iter().collect();
        self.store.ensure_resident(&list)?;
        let addrs = self.store.gather_visible(&list)?;
        let loss = self.optimize(&kf, &addrs)?;

        record_loss(sel, loss, &mut self.index)?;
        let usage = self.index.entry(sel).map(|e| e.usage_remaining).unwrap_or(0);
        let stored = self.store.keyframe_get_mut(sel)?;
        stored.last_loss = loss;
        stored.usage_remaining = usage;

        let stats = self.store.stats();
        let (loads, evictions, io, step_ns) = self.meter.lap(stats.clone());
        (self.sink)(&FrameMetrics {
            frame,
            step,
            active_gaussians: stats.active_gaussians,
            active_chunks: stats.active_chunks,
            active_keyframes: stats.active_keyframes,
            chunk_loads: loads,
            chunk_evictions: evictions,
            io_nanos: io,
            step_nanos: step_ns,
            selected_kf: sel,
            overlap: ov,
            loss,
            total_gaussians_ever: stats.total_gaussians_ever,
        })?;
        self.rows += 1;
        Ok(())
    }

    /// Scores the view, then applies one simultaneous-perturbation update to
    /// the base color and opacity of a random subset of the visible
    /// Gaussians. Returns the loss before the update.
    fn optimize(&mut self, kf: &Keyframe, addrs: &[crate::store::GaussianAddr]) -> Result<f64> {
        let pixels = kf.intrinsics.pixel_count();
        let base: Vec<&Gaussian> = self.store.resolve(addrs).collect::<Result<_>>()?;
        let frame = render(base.iter().copied(), &kf.pose, &kf.intrinsics);
        self.meter.charge_render(frame.stats);
        let loss = total_loss(&frame, kf, &self.cfg.weights)?;
        self.meter.charge_loss(pixels);

        let k = self.cfg.opt.max_params.min(addrs.len());
        if k == 0 {
            return Ok(loss);
        }
        let mut chosen: Vec<usize> = index::sample(&mut self.rng, addrs.len(), k).into_vec();
        chosen.sort_unstable();
        let signs: Vec<[f64; 4]> = (0..k)
            .map(|_| std::array::from_fn(|_| if self.rng.gen::<bool>() { 1.0 } else { -1.0 }))
            .collect();
        let c = self.cfg.opt.perturbation;
        let perturbed = |sign: f64| -> Vec<Gaussian> {
            chosen
                .iter()
                .zip(&signs)
                .map(|(&i, d)| nudge(base[i], d, sign * c))
                .collect()
        };
        let mut evaluate = |gs: Vec<Gaussian>| -> Result<f64> {
            let mut view = base.clone();
            for (&i, g) in chosen.iter().zip(&gs) {
                view[i] = g;
            }
            let f = render(view, &kf.pose, &kf.intrinsics);
            self.meter.charge_render(f.stats);
            self.meter.charge_loss(pixels);
            total_loss(&f, kf, &self.cfg.weights)
        };
        let plus = evaluate(perturbed(1.0))?;
        let minus = evaluate(perturbed(-1.0))?;
        let g = (plus - minus) / (2.0 * c);
        let step = -self.cfg.opt.learning_rate * g;

        for (&i, d) in chosen.iter().zip(&signs) {
            let target = self.store.gaussian_mut(addrs[i])?;
            *target = nudge(target, d, step);
            let count = target
                .opt_state
                .get(..4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .unwrap_or(0);
            target.opt_state = count.saturating_add(1).to_le_bytes().to_vec();
        }
        Ok(loss)
    }

    fn close_loop(&mut self, cs: &CorrectionSet, frame: u64, outcomes: &mut Vec<CorrectionOutcome>) -> Result<()> {
        let out = run_correction(cs, &mut self.store, &self.cfg.cull, self.cfg.sample.init_opacity, self.cfg.force_mode)?;
        for (id, _) in &cs.entries {
            let pos = self.store.keyframe_get(*id)?.pose.translation;
            self.index.update_position(*id, pos)?;
        }
        self.cache.clear();
        outcomes.push(out);
        for i in 0..self.cfg.refine_iters {
            self.step(frame, (self.cfg.steps_per_frame + i) as u64)?;
        }
        Ok(())
    }
}

/// Moves sh0 (per channel) and opacity along `dir` by `amount`.
fn nudge(g: &Gaussian, dir: &[f64; 4], amount: f64) -> Gaussian {
    let mut out = g.clone();
    for ch in 0..3 {
        let k = ch * SH_PER_CHANNEL;
        out.sh[k] = (out.sh[k] as f64 + amount * dir[ch]) as f32;
    }
    out.opacity = (out.opacity as f64 + amount * dir[3]).clamp(0.005, 1.0) as f32;
    out
}

fn ensure_fresh_root(root: &Path) -> Result<()> {
    for sub in ["chunks", "keyframes"] {
        let dir = root.join(sub);
        if let Ok(mut entries) = fs::read_dir(&dir) {
            if entries.next().is_some() {
                return Err(Error::InvalidInput(format!(
                    "store directory {} already holds a map",
                    root.display()
                )));
            }
        }
    }
    Ok(())
}

/// Replays `ds` into a fresh store at `cfg.store.disk_root`, handing each
/// metrics row to `sink` as it is produced.
pub fn replay(
    ds: &Dataset,
    cfg: &ReplayConfig,
    sink: impl FnMut(&FrameMetrics) -> Result<()>,
) -> Result<ReplayOutcome> {
    cfg.sample.validate()?;
    ensure_fresh_root(&cfg.store.disk_root)?;
    let store = ChunkStore::open(cfg.store.clone())?;
    let mut r = Replay {
        cfg,
        meter: Meter::new(cfg.timing, store.stats()),
        store,
        index: KeyframeIndex::new(cfg.select)?,
        cache: CullCache::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        sink,
        rows: 0,
    };
    let mut outcomes = Vec::new();
    for (i, f) in ds.frames.iter().enumerate() {
        let id = i as u64;
        let kf = Keyframe::new(id, f.pose, ds.intrinsics, f.rgb.clone(), f.depth.clone())?;
        let kps = ds.keypoints.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        r.ingest(id, kf, kps)?;
        for s in 0..cfg.steps_per_frame {
            r.step(id, s as u64)?;
        }
        for cs in ds.corrections.iter().filter(|c| c.trigger_keyframe() == Some(id)) {
            r.close_loop(cs, id, &mut outcomes)?;
        }
    }
    r.store.flush()?;
    let audit = if outcomes.is_empty() {
        None
    } else {
        Some(r.store.audit_placement()?)
    };
    Ok(ReplayOutcome {
        rows: r.rows,
        frames: ds.frames.len(),
        stats: r.store.stats(),
        corrections: outcomes,
        audit,
    })
}

/// File-to-file replay: loads the dataset and streams metrics to `out`.
pub fn run_replay(paths: &DatasetPaths, cfg: &ReplayConfig, out: &Path) -> Result<ReplayOutcome> {
    let ds = load_dataset(paths)?;
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = MetricsWriter::new(BufWriter::new(file))?;
    let outcome = replay(&ds, cfg, |row| w.write(row))?;
    w.finish()?.flush().map_err(|e| Error::io(out, e))?;
    Ok(outcome)
}
