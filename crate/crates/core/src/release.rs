//! Privacy-preserving aggregate release.
//!
//! Touches are counted per (stop, time block, direction) and every cell of
//! the full stop × block lattice receives independent noise, including cells
//! whose true count is zero. Each cell's noise stream is seeded from the
//! master seed and the cell coordinates, so output is independent of
//! evaluation order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{DateRange, Side, Timestamp};
use crate::mix::mix;
use crate::store::EventStore;

pub const DEFAULT_BLOCK_MINUTES: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateRow {
    pub stop_id: u32,
    pub block_start: Timestamp,
    pub direction: Side,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateTable {
    pub block_minutes: u32,
    pub period: Option<DateRange>,
    /// Stops spanning the lattice over which noise is applied.
    pub stops: Vec<u32>,
    /// Per-card, per-cell contribution bound applied while counting.
    pub max_contribution: Option<u32>,
    /// Sorted by (stop, block, direction).
    pub rows: Vec<AggregateRow>,
}

impl AggregateTable {
    pub fn total(&self, direction: Side) -> f64 {
        self.rows.iter().filter(|r| r.direction == direction).map(|r| r.count).sum()
    }

    pub fn get(&self, stop_id: u32, block_start: Timestamp, direction: Side) -> f64 {
        self.rows
            .binary_search_by(|r| (r.stop_id, r.block_start, dir_rank(r.direction)).cmp(&(stop_id, block_start, dir_rank(direction))))
            .map_or(0.0, |i| self.rows[i].count)
    }

    /// Every (stop, block) start in the lattice, in row order.
    fn lattice(&self) -> Vec<(u32, Timestamp, Side)> {
        let Some(period) = self.period else { return Vec::new() };
        let step = self.block_minutes as i64 * 60;
        let start = Timestamp::start_of(period.from).seconds();
        let end = period.end_exclusive().seconds();
        let mut cells = Vec::new();
        for &stop in &self.stops {
            let mut t = start;
            while t < end {
                for dir in [Side::TouchOn, Side::TouchOff] {
                    cells.push((stop, Timestamp::from_seconds(t), dir));
                }
                t += step;
            }
        }
        cells
    }
}

fn dir_rank(d: Side) -> u8 {
    match d {
        Side::TouchOn => 0,
        Side::TouchOff => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PostProcess {
    #[default]
    None,
    RoundAndClampToZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Adjacency {
    /// Neighbouring datasets differ by one touch.
    #[default]
    EventLevel,
    /// Neighbouring datasets differ by one card, whose contribution to each
    /// cell is capped at `max_contribution`.
    CardLevel { max_contribution: u32 },
}

impl Adjacency {
    pub fn sensitivity(self) -> f64 {
        match self {
            Adjacency::EventLevel => 1.0,
            Adjacency::CardLevel { max_contribution } => max_contribution as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Mechanism {
    /// Two-sided geometric (discrete Laplace); integer valued.
    #[default]
    Geometric,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub post_process: PostProcess,
    #[serde(default)]
    pub adjacency: Adjacency,
    #[serde(default)]
    pub mechanism: Mechanism,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        PrivacyParams {
            epsilon: 1.0,
            seed: 0,
            post_process: PostProcess::None,
            adjacency: Adjacency::EventLevel,
            mechanism: Mechanism::Geometric,
        }
    }
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParams("epsilon must be a positive number".into()));
        }
        if let Adjacency::CardLevel { max_contribution: 0 } = self.adjacency {
            return Err(Error::InvalidParams("maxContribution must be at least 1".into()));
        }
        Ok(())
    }

    /// Noise scale: sensitivity over epsilon.
    pub fn scale(&self) -> f64 {
        self.adjacency.sensitivity() / self.epsilon
    }

    /// E|noise| of the configured mechanism.
    pub fn expected_abs_noise(&self) -> f64 {
        match self.mechanism {
            Mechanism::Laplace => self.scale(),
            Mechanism::Geometric => {
                let alpha = (-1.0 / self.scale()).exp();
                2.0 * alpha / (1.0 - alpha * alpha)
            }
        }
    }
}

fn validate_block(block_minutes: u32) -> Result<()> {
    if block_minutes == 0 || 60 % block_minutes != 0 {
        return Err(Error::InvalidBlock(block_minutes));
    }
    Ok(())
}

/// Exact touch counts per (stop, block, direction). Zero cells are omitted.
pub fn aggregate_counts(store: &EventStore, block_minutes: u32, period: Option<DateRange>) -> Result<AggregateTable> {
    aggregate(store, block_minutes, period, None)
}

/// Like [`aggregate_counts`] but each card adds at most `max_contribution`
/// to any single cell.
pub fn aggregate_counts_clamped(
    store: &EventStore,
    block_minutes: u32,
    period: Option<DateRange>,
    max_contribution: u32,
) -> Result<AggregateTable> {
    if max_contribution == 0 {
        return Err(Error::InvalidParams("maxContribution must be at least 1".into()));
    }
    aggregate(store, block_minutes, period, Some(max_contribution))
}

fn aggregate(store: &EventStore, block_minutes: u32, period: Option<DateRange>, cap: Option<u32>) -> Result<AggregateTable> {
    validate_block(block_minutes)?;
    let period = period.or(store.date_range());
    let step = block_minutes as i64 * 60;
    let mut stops = BTreeSet::new();
    let per_card: Vec<BTreeMap<(u32, Timestamp, u8), u64>> = store
        .cards()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(_, events)| {
            let mut cells: BTreeMap<(u32, Timestamp, u8), u64> = BTreeMap::new();
            for e in events.iter() {
                let touches = [
                    Some((e.on_stop_id, e.on_time, Side::TouchOn)),
                    e.off.map(|o| (o.stop_id, o.time, Side::TouchOff)),
                ];
                for (stop, time, dir) in touches.into_iter().flatten() {
                    if period.is_some_and(|p| p.contains(time)) {
                        let block = Timestamp::from_seconds(time.seconds().div_euclid(step) * step);
                        *cells.entry((stop, block, dir_rank(dir))).or_default() += 1;
                    }
                }
            }
            cells
        })
        .collect();
    for e in store.iter_events() {
        stops.insert(e.on_stop_id);
        if let Some(o) = e.off {
            stops.insert(o.stop_id);
        }
    }
    let mut totals: BTreeMap<(u32, Timestamp, u8), u64> = BTreeMap::new();
    for cells in per_card {
        for (key, n) in cells {
            *totals.entry(key).or_default() += cap.map_or(n, |c| n.min(c as u64));
        }
    }
    let rows = totals
        .into_iter()
        .map(|((stop_id, block_start, d), n)| AggregateRow {
            stop_id,
            block_start,
            direction: if d == 0 { Side::TouchOn } else { Side::TouchOff },
            count: n as f64,
        })
        .collect();
    Ok(AggregateTable { block_minutes, period, stops: stops.into_iter().collect(), max_contribution: cap, rows })
}

fn cell_seed(seed: u64, stop: u32, block: Timestamp, dir: Side) -> u64 {
    mix(mix(mix(seed, stop as u64), block.seconds() as u64), dir_rank(dir) as u64)
}

/// Number of failures before the first success, success probability `1 - alpha`.
fn geometric(rng: &mut ChaCha8Rng, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    (u.ln() / alpha.ln()).floor()
}

fn sample_noise(params: &PrivacyParams, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = params.scale();
    match params.mechanism {
        Mechanism::Geometric => {
            let alpha = (-1.0 / scale).exp();
            geometric(&mut rng, alpha) - geometric(&mut rng, alpha)
        }
        Mechanism::Laplace => {
            let e1 = -(1.0 - rng.gen::<f64>()).ln();
            let e2 = -(1.0 - rng.gen::<f64>()).ln();
            scale * (e1 - e2)
        }
    }
}

/// Add calibrated noise to every lattice cell of a true-count table.
pub fn add_noise(table: &AggregateTable, params: &PrivacyParams) -> Result<AggregateTable> {
    params.validate()?;
    match (params.adjacency, table.max_contribution) {
        (Adjacency::CardLevel { max_contribution }, Some(cap)) if cap == max_contribution => {}
        (Adjacency::CardLevel { max_contribution }, _) => {
            return Err(Error::InvalidParams(format!(
                "card-level noise needs a table clamped to {max_contribution} per card"
            )))
        }
        (Adjacency::EventLevel, _) => {}
    }
    let rows: Vec<AggregateRow> = table
        .lattice()
        .into_par_iter()
        .map(|(stop_id, block_start, direction)| {
            let noisy = table.get(stop_id, block_start, direction) + sample_noise(params, cell_seed(params.seed, stop_id, block_start, direction));
            let count = match params.post_process {
                PostProcess::None => noisy,
                PostProcess::RoundAndClampToZero => noisy.round().max(0.0),
            };
            AggregateRow { stop_id, block_start, direction, count }
        })
        .collect();
    Ok(AggregateTable { rows, ..table.clone() })
}

/// Describes a published table without revealing the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReleaseMetadata {
    pub block_minutes: u32,
    pub period: Option<DateRange>,
    pub epsilon: f64,
    pub mechanism: Mechanism,
    pub adjacency: Adjacency,
    pub post_process: PostProcess,
    pub seed_policy: String,
    pub cells: usize,
}

impl ReleaseMetadata {
    pub fn new(table: &AggregateTable, params: &PrivacyParams) -> Self {
        ReleaseMetadata {
            block_minutes: table.block_minutes,
            period: table.period,
            epsilon: params.epsilon,
            mechanism: params.mechanism,
            adjacency: params.adjacency,
            post_process: params.post_process,
            seed_policy: "per-cell streams derived from a withheld master seed and the cell coordinates".into(),
            cells: table.rows.len(),
        }
    }
}

/// Aggregate and, when `privacy` is given, perturb.
pub fn release(
    store: &EventStore,
    block_minutes: u32,
    period: Option<DateRange>,
    privacy: Option<&PrivacyParams>,
) -> Result<(AggregateTable, Option<ReleaseMetadata>)> {
    let Some(params) = privacy else {
        return Ok((aggregate_counts(store, block_minutes, period)?, None));
    };
    params.validate()?;
    let exact = match params.adjacency {
        Adjacency::EventLevel => aggregate_counts(store, block_minutes, period)?,
        Adjacency::CardLevel { max_contribution } => aggregate_counts_clamped(store, block_minutes, period, max_contribution)?,
    };
    let noisy = add_noise(&exact, params)?;
    let meta = ReleaseMetadata::new(&noisy, params);
    Ok((noisy, Some(meta)))
}

pub const CSV_HEADER: &str = "stopId,blockStart,direction,count";

pub fn write_csv<W: Write>(table: &AggregateTable, mut sink: W) -> Result<()> {
    writeln!(sink, "{CSV_HEADER}").map_err(Error::UnwritableSink)?;
    for r in &table.rows {
        let dir = match r.direction {
            Side::TouchOn => "touchOn",
            Side::TouchOff => "touchOff",
        };
        writeln!(sink, "{},{},{},{}", r.stop_id, r.block_start, dir, r.count).map_err(Error::UnwritableSink)?;
    }
    Ok(())
}
