//! Sampled-set uniqueness.
//!
//! Each card's selected touches are permuted once per run (seeded by
//! `mix(seed, cardId)`); the first `n` entries of that permutation form the
//! card's sample of cardinality `n`. A sample is unique when no other card
//! has events in every one of the sample's signature bins.
//!
//! Because one permutation serves every granularity, location flag and
//! cardinality, the following hold exactly for a fixed run:
//! unique at a coarse granularity implies unique at every finer one, unique
//! without location implies unique with it, and unique at prefix length `n`
//! implies unique at every longer prefix.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{select_sub_events, CardId, DateRange, EventKind, EventSignature, SubEvent, TimeGranularity};
use crate::index::{CalendarSpec, SignatureCalendar};
use crate::mix::mix;
use crate::store::EventStore;

/// Largest store the brute-force oracle accepts.
pub const BRUTE_FORCE_EVENT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct UnicityParams {
    pub granularities: Vec<TimeGranularity>,
    pub location_flags: Vec<bool>,
    pub cardinalities: Vec<usize>,
    pub kind: EventKind,
    pub seed: u64,
    pub period: Option<DateRange>,
    /// Leave out cards with fewer selected touches than the largest cardinality.
    pub exclude_short_cards: bool,
}

impl Default for UnicityParams {
    fn default() -> Self {
        UnicityParams {
            granularities: TimeGranularity::ALL.to_vec(),
            location_flags: vec![true, false],
            cardinalities: (1..=5).collect(),
            kind: EventKind::TouchOn,
            seed: 0,
            period: None,
            exclude_short_cards: false,
        }
    }
}

impl UnicityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.granularities.is_empty() || self.location_flags.is_empty() || self.cardinalities.is_empty() {
            return bad("granularities, location flags and cardinalities must be non-empty");
        }
        if self.cardinalities[0] == 0 {
            return bad("cardinalities start at 1");
        }
        if !self.cardinalities.windows(2).all(|w| w[0] < w[1]) {
            return bad("cardinalities must be strictly ascending");
        }
        Ok(())
    }

    fn max_n(&self) -> usize {
        *self.cardinalities.last().expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UnicityRow {
    pub granularity: TimeGranularity,
    pub location: bool,
    pub n: usize,
    pub cards_considered: u64,
    pub cards_unique: u64,
}

impl UnicityRow {
    pub fn percent_unique(&self) -> f64 {
        if self.cards_considered == 0 {
            0.0
        } else {
            100.0 * self.cards_unique as f64 / self.cards_considered as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnicityReport {
    pub rows: Vec<UnicityRow>,
}

pub const REPORT_HEADER: &str = "granularity,location,n,cardsConsidered,cardsUnique,percentUnique";

impl UnicityReport {
    pub fn row(&self, g: TimeGranularity, location: bool, n: usize) -> Option<&UnicityRow> {
        self.rows.iter().find(|r| r.granularity == g && r.location == location && r.n == n)
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        let err = Error::UnwritableSink;
        writeln!(sink, "{REPORT_HEADER}").map_err(err)?;
        for r in &self.rows {
            writeln!(
                sink,
                "{},{},{},{},{},{:.4}",
                r.granularity,
                r.location,
                r.n,
                r.cards_considered,
                r.cards_unique,
                r.percent_unique()
            )
            .map_err(err)?;
        }
        Ok(())
    }
}

/// Full output of a run: the report plus every per-card verdict.
#[derive(Debug, Clone)]
pub struct UnicityDetail {
    pub report: UnicityReport,
    /// Cards in the denominator, ascending.
    pub cards: Vec<CardId>,
    /// Verdicts aligned with `cards`, one vector per report row.
    pub flags: Vec<Vec<bool>>,
}

impl UnicityDetail {
    pub fn flags_for(&self, g: TimeGranularity, location: bool, n: usize) -> Option<&[bool]> {
        let i = self.report.rows.iter().position(|r| r.granularity == g && r.location == location && r.n == n)?;
        Some(&self.flags[i])
    }
}

/// A uniformly random permutation of `items` (fixed by `card_seed`),
/// truncated to its first `n` entries.
pub fn sample_first_n<T: Clone>(items: &[T], n: usize, card_seed: u64) -> Vec<T> {
    let mut sample = items.to_vec();
    sample.shuffle(&mut ChaCha8Rng::seed_from_u64(card_seed));
    sample.truncate(n);
    sample
}

/// The per-card seed used by [`run_unicity`].
pub fn card_seed(seed: u64, card: CardId) -> u64 {
    mix(seed, card.0)
}

/// True iff the only card present in every bin is `self_id`.
///
/// Repeated bins are collapsed and the smallest bin is intersected first.
pub fn is_unique(bins: &[&[CardId]], self_id: CardId) -> Result<bool> {
    if bins.is_empty() {
        return Err(Error::InvalidParams("no bins to intersect".into()));
    }
    if bins.iter().any(|b| b.binary_search(&self_id).is_err()) {
        return Err(Error::SelfNotInBins(self_id));
    }
    let mut ordered: Vec<&[CardId]> = bins.to_vec();
    ordered.sort_by_key(|b| (b.len(), b.as_ptr() as usize));
    ordered.dedup_by(|a, b| a.as_ptr() == b.as_ptr() && a.len() == b.len());
    let mut running: Vec<CardId> = ordered[0].to_vec();
    for bin in &ordered[1..] {
        if running.len() <= 1 {
            break;
        }
        running = intersect(&running, bin);
    }
    Ok(running.len() == 1)
}

/// Sorted intersection; gallops through the longer side when sizes differ a lot.
fn intersect(a: &[CardId], b: &[CardId]) -> Vec<CardId> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut out = Vec::with_capacity(small.len());
    if small.len() * 16 < large.len() {
        let mut rest = large;
        for x in small {
            match rest.binary_search(x) {
                Ok(i) => {
                    out.push(*x);
                    rest = &rest[i + 1..];
                }
                Err(i) => rest = &rest[i..],
            }
        }
    } else {
        let (mut i, mut j) = (0, 0);
        while i < small.len() && j < large.len() {
            match small[i].cmp(&large[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(small[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    out
}

/// Smallest prefix length after which the running intersection of `bins`
/// is `{self}`; `None` if it never gets there.
fn first_unique_prefix(bins: &[&[CardId]]) -> Option<usize> {
    let first = bins.first()?;
    if first.len() == 1 {
        return Some(1);
    }
    let mut running: Option<Vec<CardId>> = None;
    for (k, bin) in bins.iter().enumerate().skip(1) {
        let next = match &running {
            None => intersect(first, bin),
            Some(r) => {
                if std::ptr::eq(bin.as_ptr(), first.as_ptr()) {
                    continue;
                }
                intersect(r, bin)
            }
        };
        if next.len() == 1 {
            return Some(k + 1);
        }
        running = Some(next);
    }
    None
}

/// Permuted indices into each card's selected touches, truncated to `max_n`.
/// Cards with no selected touch are absent.
fn sample_indices(store: &EventStore, params: &UnicityParams) -> BTreeMap<CardId, Vec<u32>> {
    let max_n = params.max_n();
    store
        .cards()
        .filter_map(|(card, events)| {
            let count = select_sub_events(events, params.kind, params.period.as_ref()).len();
            if count == 0 || (params.exclude_short_cards && count < max_n) {
                return None;
            }
            let indices: Vec<u32> = (0..count as u32).collect();
            Some((card, sample_first_n(&indices, max_n, card_seed(params.seed, card))))
        })
        .collect()
}

/// The touches [`run_unicity`] samples for every card in the denominator, in
/// sampled order and truncated to the largest cardinality.
pub fn sampled_sets(store: &EventStore, params: &UnicityParams) -> Result<BTreeMap<CardId, Vec<SubEvent>>> {
    params.validate()?;
    let indices = sample_indices(store, params);
    Ok(indices
        .into_iter()
        .map(|(card, idx)| {
            let subs = select_sub_events(store.events(card).expect("card from store"), params.kind, params.period.as_ref());
            (card, idx.iter().map(|&i| subs[i as usize]).collect())
        })
        .collect())
}

pub fn run_unicity(store: &EventStore, params: &UnicityParams) -> Result<UnicityReport> {
    run_unicity_detailed(store, params).map(|d| d.report)
}

pub fn run_unicity_detailed(store: &EventStore, params: &UnicityParams) -> Result<UnicityDetail> {
    run_unicity_with(store, params, |store, spec| Ok(SignatureCalendar::build(store, spec)))
}

/// Like [`run_unicity_detailed`] but calendars come from `calendars`, which
/// may serve them from a cache.
pub fn run_unicity_with<F>(store: &EventStore, params: &UnicityParams, mut calendars: F) -> Result<UnicityDetail>
where
    F: FnMut(&EventStore, CalendarSpec) -> Result<SignatureCalendar>,
{
    params.validate()?;
    let samples = sample_indices(store, params);
    let cards: Vec<CardId> = samples.keys().copied().collect();
    let samples: Vec<Vec<u32>> = samples.into_values().collect();
    let mut rows = Vec::new();
    let mut flags = Vec::new();

    for &g in &params.granularities {
        for &location in &params.location_flags {
            let spec = CalendarSpec { granularity: g, include_location: location, kind: params.kind, period: params.period };
            let calendar = calendars(store, spec)?;
            let first_unique: Vec<Option<usize>> = cards
                .par_iter()
                .zip(samples.par_iter())
                .map(|(card, sample)| {
                    let idx = calendar.card_index(*card).expect("sampled card has signatures");
                    let refs = calendar.card_refs(idx);
                    let bins: Vec<&[CardId]> = sample.iter().map(|&i| calendar.members_of(refs[i as usize])).collect();
                    first_unique_prefix(&bins)
                })
                .collect();
            for &n in &params.cardinalities {
                let verdicts: Vec<bool> = first_unique
                    .iter()
                    .zip(&samples)
                    .map(|(k, s)| k.is_some_and(|k| k <= n.min(s.len())))
                    .collect();
                rows.push(UnicityRow {
                    granularity: g,
                    location,
                    n,
                    cards_considered: cards.len() as u64,
                    cards_unique: verdicts.iter().filter(|&&u| u).count() as u64,
                });
                flags.push(verdicts);
            }
        }
    }
    Ok(UnicityDetail { report: UnicityReport { rows }, cards, flags })
}

/// Reference implementation without a calendar: a card is unique iff no
/// other card's full signature set contains its sampled signature set.
pub fn brute_force_unicity(
    store: &EventStore,
    sampled: &BTreeMap<CardId, Vec<SubEvent>>,
    g: TimeGranularity,
    include_location: bool,
    kind: EventKind,
    period: Option<&DateRange>,
) -> Result<BTreeMap<CardId, bool>> {
    if store.event_count() > BRUTE_FORCE_EVENT_LIMIT {
        return Err(Error::StoreTooLarge { events: store.event_count(), limit: BRUTE_FORCE_EVENT_LIMIT });
    }
    let full: Vec<(CardId, HashSet<EventSignature>)> = store
        .cards()
        .map(|(card, events)| {
            let set = select_sub_events(events, kind, period).iter().map(|s| s.signature(g, include_location)).collect();
            (card, set)
        })
        .collect();
    let mut out = BTreeMap::new();
    for (card, sample) in sampled {
        let wanted: HashSet<EventSignature> = sample.iter().map(|s| s.signature(g, include_location)).collect();
        let shared = full.iter().any(|(other, set)| other != card && wanted.iter().all(|w| set.contains(w)));
        out.insert(*card, !shared);
    }
    Ok(out)
}
