//! Seedable random sources, uniform sphere sampling and the experiment
//! runner.
//!
//! Events are generated in fixed-size blocks. Block `i` draws settings, λ
//! and (for the quantum oracle) outcomes from three ChaCha substreams seeded
//! with `mix(seed, i, stream)`, so the event sequence depends only on
//! `(seed, config)` and never on the number of worker threads.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::models::{Model, Outcome, SettingRef, TieBreak};

/// Events per substream block.
pub const BLOCK_SIZE: u64 = 4096;

/// Fresh λ draws allowed per event under [`TieBreak::Resample`].
const MAX_RESAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Settings = 1,
    Lambda = 2,
    Outcome = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of substream `stream` for block `block`.
pub fn derive_seed(seed: u64, block: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ block) ^ stream as u64)
}

/// Seed for the `index`-th independent sub-run of a seeded computation.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn substream(seed: u64, block: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, block, stream))
}

/// Uniform point on S² from a normalized standard-normal triple.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R) -> UnitVector {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if x * x + y * y + z * z > 1e-20 {
            return UnitVector::new(x, y, z).expect("norm checked");
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSetting {
    pub label: String,
    pub dir: UnitVector,
}

/// Measurement directions available on each wing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingsGrid {
    pub a: Vec<LabeledSetting>,
    pub b: Vec<LabeledSetting>,
}

impl SettingsGrid {
    pub fn new(a: Vec<LabeledSetting>, b: Vec<LabeledSetting>) -> Result<Self> {
        let grid = SettingsGrid { a, b };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid from directions, labelled `a0, a1, …` and `b0, b1, …`.
    pub fn from_dirs(a: &[UnitVector], b: &[UnitVector]) -> Result<Self> {
        let label = |p: &str, v: &[UnitVector]| {
            v.iter().enumerate().map(|(i, d)| LabeledSetting { label: format!("{p}{i}"), dir: *d }).collect()
        };
        Self::new(label("a", a), label("b", b))
    }

    /// Directions in the xz-plane at the given angles from +z.
    pub fn planar(a_angles: &[f64], b_angles: &[f64]) -> Result<Self> {
        let dirs = |v: &[f64]| v.iter().map(|&t| UnitVector::in_xz_plane(t)).collect::<Vec<_>>();
        Self::from_dirs(&dirs(a_angles), &dirs(b_angles))
    }

    /// One setting per wing, `a = z` and `b` at angle `omega` in the xz-plane.
    pub fn single_pair(omega: f64) -> Self {
        Self::planar(&[0.0], &[omega]).expect("two labelled settings")
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let grid: SettingsGrid = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (wing, list) in [("A", &self.a), ("B", &self.b)] {
            if list.is_empty() {
                return Err(Error::Config(format!("wing {wing} has no settings")));
            }
            let mut seen = HashSet::new();
            for s in list {
                if !seen.insert(s.label.as_str()) {
                    return Err(Error::Config(format!("duplicate label '{}' on wing {wing}", s.label)));
                }
                if (s.dir.norm() - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!("setting '{}' is not unit-norm", s.label)));
                }
            }
        }
        Ok(())
    }

    pub fn setting_a(&self, i: usize) -> SettingRef {
        SettingRef { index: i, dir: self.a[i].dir }
    }

    pub fn setting_b(&self, i: usize) -> SettingRef {
        SettingRef { index: i, dir: self.b[i].dir }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SettingPolicy {
    /// Each wing picks uniformly and independently per run.
    #[default]
    UniformIid,
    Fixed(usize, usize),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: Model,
    pub grid: SettingsGrid,
    pub samples: u64,
    pub seed: u64,
    pub policy: SettingPolicy,
    pub tie: TieBreak,
}

impl RunConfig {
    pub fn new(model: Model, grid: SettingsGrid, samples: u64, seed: u64) -> Self {
        RunConfig { model, grid, samples, seed, policy: SettingPolicy::UniformIid, tie: TieBreak::Plus }
    }

    pub fn with_policy(mut self, policy: SettingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_tie_break(mut self, tie: TieBreak) -> Self {
        self.tie = tie;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        self.grid.validate()?;
        if let SettingPolicy::Fixed(ai, bi) = self.policy {
            if ai >= self.grid.a.len() || bi >= self.grid.b.len() {
                return Err(Error::Config(format!("fixed setting pair ({ai}, {bi}) outside the grid")));
            }
        }
        if let Model::LocalDet(m) = &self.model {
            if m.settings_a() != self.grid.a.len() || m.settings_b() != self.grid.b.len() {
                return Err(Error::Config(format!(
                    "mixture responds to {}x{} settings but the grid has {}x{}",
                    m.settings_a(),
                    m.settings_b(),
                    self.grid.a.len(),
                    self.grid.b.len()
                )));
            }
        }
        Ok(())
    }

    fn blocks(&self) -> u64 {
        self.samples.div_ceil(BLOCK_SIZE)
    }
}

/// One simulated run: settings chosen, λ drawn, joint outcomes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub run: u64,
    /// Index into the grid's wing-A list.
    pub a: usize,
    pub b: usize,
    pub lambda: UnitVector,
    pub x: Outcome,
    pub y: Outcome,
}

/// Generates the events of block `block`.
pub fn run_block(cfg: &RunConfig, block: u64) -> Result<Vec<EventRecord>> {
    let start = block * BLOCK_SIZE;
    let end = (start + BLOCK_SIZE).min(cfg.samples);
    let mut settings_rng = substream(cfg.seed, block, Stream::Settings);
    let mut lambda_rng = substream(cfg.seed, block, Stream::Lambda);
    let mut outcome_rng = substream(cfg.seed, block, Stream::Outcome);
    let (na, nb) = (cfg.grid.a.len(), cfg.grid.b.len());

    let mut out = Vec::with_capacity((end - start) as usize);
    for run in start..end {
        let (ai, bi) = match cfg.policy {
            SettingPolicy::UniformIid => (settings_rng.random_range(0..na), settings_rng.random_range(0..nb)),
            SettingPolicy::Fixed(ai, bi) => (ai, bi),
        };
        let (sa, sb) = (cfg.grid.setting_a(ai), cfg.grid.setting_b(bi));
        let mut attempts = 0;
        let (lambda, (x, y)) = loop {
            let lambda = sample_sphere(&mut lambda_rng);
            match cfg.model.joint_outcome(sa, sb, &lambda, cfg.tie, &mut outcome_rng) {
                Ok(o) => break (lambda, o),
                Err(Error::SignUndefined(_)) if attempts < MAX_RESAMPLES => attempts += 1,
                Err(e) => return Err(e),
            }
        };
        out.push(EventRecord { run, a: ai, b: bi, lambda, x, y });
    }
    Ok(out)
}

/// Lazily generated event stream, block by block, in run order.
pub fn run_experiment(cfg: &RunConfig) -> Result<impl Iterator<Item = Result<EventRecord>> + '_> {
    cfg.validate()?;
    Ok((0..cfg.blocks()).flat_map(move |block| match run_block(cfg, block) {
        Ok(events) => events.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    }))
}

/// All events, generated in parallel and returned in run order.
pub fn collect_events(cfg: &RunConfig) -> Result<Vec<EventRecord>> {
    cfg.validate()?;
    let blocks: Vec<Vec<EventRecord>> =
        (0..cfg.blocks()).into_par_iter().map(|block| run_block(cfg, block)).collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Parallel fold over all events. `merge` must be associative and
/// commutative for the result to be independent of scheduling.
pub fn fold_events<A, I, F, M>(cfg: &RunConfig, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &EventRecord) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    cfg.validate()?;
    (0..cfg.blocks())
        .into_par_iter()
        .map(|block| run_block(cfg, block).map(|events| events.iter().fold(init(), &fold)))
        .try_reduce(&init, |l, r| Ok(merge(l, r)))
}

/// Writes events as CSV with header `run,a,b,lx,ly,lz,x,y`, or
/// `run,a,b,x,y` when `hide_lambda` is set.
pub fn write_events_csv<W: Write>(
    sink: W,
    grid: &SettingsGrid,
    events: impl IntoIterator<Item = Result<EventRecord>>,
    hide_lambda: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if hide_lambda {
        w.write_record(["run", "a", "b", "x", "y"]).map_err(csv_err)?;
    } else {
        w.write_record(["run", "a", "b", "lx", "ly", "lz", "x", "y"]).map_err(csv_err)?;
    }
    for e in events {
        let e = e?;
        let mut row = vec![e.run.to_string(), grid.a[e.a].label.clone(), grid.b[e.b].label.clone()];
        if !hide_lambda {
            row.extend(e.lambda.components().iter().map(|c| c.to_string()));
        }
        row.push(e.x.to_string());
        row.push(e.y.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}
