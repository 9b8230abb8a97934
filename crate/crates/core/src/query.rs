//! Constraint-refinement queries and dataset audits.
//!
//! A query is a conjunction of [`Constraint`]s; every card satisfying all of
//! them is a candidate. Adding a constraint can only shrink the candidate
//! set, which is what makes a handful of known trips enough to single out
//! one card.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{CardId, TapEvent, Timestamp};
use crate::store::{modal_card_type, EventStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Constraint {
    /// Some touch-on on `date` with time of day in `[lo, hi]`.
    TouchOnBetween { date: NaiveDate, lo: NaiveTime, hi: NaiveTime },
    /// Some touch-on within `tolerance_seconds` of `time`.
    TouchOnAt { time: Timestamp, tolerance_seconds: i64 },
    /// Some touch-on or touch-off at `stop_id`, on a date inside
    /// `[from, to]` when either bound is given.
    VisitedStop {
        stop_id: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<NaiveDate>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<NaiveDate>,
    },
    /// The card's modal type is `type_code`.
    CardTypeIs { type_code: u8 },
    /// The card's modal type is not `type_code`.
    CardTypeIsNot { type_code: u8 },
    /// First touch-on falls on a day before `date`.
    FirstSeenBefore { date: NaiveDate },
    /// First touch-on falls on a day after `date`.
    FirstSeenAfter { date: NaiveDate },
    /// Last recorded touch falls on a day before `date`.
    LastSeenBefore { date: NaiveDate },
    /// Last recorded touch falls on a day after `date`.
    LastSeenAfter { date: NaiveDate },
    /// At least `k` events.
    MinEventCount { k: usize },
}

impl Constraint {
    pub fn validate(&self) -> Result<()> {
        match self {
            Constraint::TouchOnBetween { lo, hi, .. } if lo > hi => {
                Err(Error::InvalidParams(format!("time window {lo}..{hi} is reversed")))
            }
            Constraint::TouchOnAt { tolerance_seconds, .. } if *tolerance_seconds < 0 => {
                Err(Error::InvalidParams("tolerance must be non-negative".into()))
            }
            Constraint::VisitedStop { from: Some(f), to: Some(t), .. } if f > t => {
                Err(Error::InvalidParams(format!("date range {f}..{t} is reversed")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the card with these (time-sorted) events satisfies the constraint.
    pub fn matches(&self, events: &[TapEvent]) -> bool {
        let Some(first) = events.first() else { return false };
        match self {
            Constraint::TouchOnBetween { date, lo, hi } => {
                let start = Timestamp::from_date_time(*date, *lo);
                let end = Timestamp::from_date_time(*date, *hi);
                let i = events.partition_point(|e| e.on_time < start);
                events.get(i).is_some_and(|e| e.on_time <= end)
            }
            Constraint::TouchOnAt { time, tolerance_seconds } => {
                let start = time.offset(-tolerance_seconds);
                let i = events.partition_point(|e| e.on_time < start);
                events.get(i).is_some_and(|e| e.on_time <= time.offset(*tolerance_seconds))
            }
            Constraint::VisitedStop { stop_id, from, to } => {
                let in_range = |t: Timestamp| {
                    let d = t.date();
                    from.is_none_or(|f| d >= f) && to.is_none_or(|x| d <= x)
                };
                events.iter().any(|e| {
                    (e.on_stop_id == *stop_id && in_range(e.on_time))
                        || e.off.is_some_and(|o| o.stop_id == *stop_id && in_range(o.time))
                })
            }
            Constraint::CardTypeIs { type_code } => modal_card_type(events) == *type_code,
            Constraint::CardTypeIsNot { type_code } => modal_card_type(events) != *type_code,
            Constraint::FirstSeenBefore { date } => first.on_time.date() < *date,
            Constraint::FirstSeenAfter { date } => first.on_time.date() > *date,
            Constraint::LastSeenBefore { date } => last_seen(events).date() < *date,
            Constraint::LastSeenAfter { date } => last_seen(events).date() > *date,
            Constraint::MinEventCount { k } => events.len() >= *k,
        }
    }
}

fn last_seen(events: &[TapEvent]) -> Timestamp {
    events.iter().map(TapEvent::last_time).max().expect("non-empty")
}

/// Cards matching a conjunction, tied to the store that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateSet {
    pub cards: BTreeSet<CardId>,
    pub constraints: Vec<Constraint>,
    #[serde(skip)]
    store_fingerprint: u64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

pub fn evaluate(store: &EventStore, constraints: &[Constraint]) -> Result<CandidateSet> {
    for c in constraints {
        c.validate()?;
    }
    let cards = store
        .cards()
        .filter(|(_, events)| constraints.iter().all(|c| c.matches(events)))
        .map(|(id, _)| id)
        .collect();
    Ok(CandidateSet { cards, constraints: constraints.to_vec(), store_fingerprint: store.fingerprint() })
}

/// Add one constraint to an existing candidate set.
pub fn refine(candidates: &CandidateSet, extra: Constraint, store: &EventStore) -> Result<CandidateSet> {
    if candidates.store_fingerprint != store.fingerprint() {
        return Err(Error::StoreMismatch);
    }
    extra.validate()?;
    let mut constraints = candidates.constraints.clone();
    constraints.push(extra);
    let cards = candidates
        .cards
        .iter()
        .copied()
        .filter(|id| {
            let events = store.events(*id).expect("candidate from this store");
            constraints.iter().all(|c| c.matches(events))
        })
        .collect();
    Ok(CandidateSet { cards, constraints, store_fingerprint: store.fingerprint() })
}

/// Summary row shown for each candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidatePreview {
    pub card_id: CardId,
    pub card_type: u8,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
    pub event_count: usize,
}

/// Exact total plus the first `limit` candidates in id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuerySummary {
    pub total: usize,
    pub preview: Vec<CandidatePreview>,
}

pub fn summarize(store: &EventStore, candidates: &CandidateSet, limit: usize) -> Result<QuerySummary> {
    if candidates.store_fingerprint != store.fingerprint() {
        return Err(Error::StoreMismatch);
    }
    let preview = candidates
        .cards
        .iter()
        .take(limit)
        .map(|&id| {
            let events = store.events(id)?;
            Ok(CandidatePreview {
                card_id: id,
                card_type: modal_card_type(events),
                first_seen: events[0].on_time,
                last_seen: last_seen(events),
                event_count: events.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(QuerySummary { total: candidates.len(), preview })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CardTimeline {
    pub card_id: CardId,
    pub card_type: u8,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
    pub events: Vec<TapEvent>,
}

pub fn card_timeline(store: &EventStore, card: CardId) -> Result<CardTimeline> {
    let events = store.events(card)?;
    Ok(CardTimeline {
        card_id: card,
        card_type: modal_card_type(events),
        first_seen: events[0].on_time,
        last_seen: last_seen(events),
        events: events.to_vec(),
    })
}

/// A run of unused card ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GapRecord {
    pub last_used_id: CardId,
    pub next_used_id: CardId,
    /// `next_used_id - last_used_id - 1`.
    pub missing_count: u64,
}

/// Every maximal run of at least `min_gap` unused ids between the smallest
/// and largest id in the store, ascending.
pub fn id_gap_scan(store: &EventStore, min_gap: u64) -> Result<Vec<GapRecord>> {
    if min_gap == 0 {
        return Err(Error::InvalidParams("minGap must be at least 1".into()));
    }
    let ids: Vec<CardId> = store.card_ids().collect();
    Ok(ids
        .windows(2)
        .filter_map(|w| {
            let missing = w[1].0 - w[0].0 - 1;
            (missing >= min_gap).then_some(GapRecord { last_used_id: w[0], next_used_id: w[1], missing_count: missing })
        })
        .collect())
}

pub const DEFAULT_SENSITIVITY_THRESHOLD: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CensusEntry {
    pub type_code: u8,
    /// Cards whose modal type is this code.
    pub card_count: usize,
    /// Events recorded with this code, whatever the card's modal type.
    pub event_count: usize,
    /// Fewer than the threshold number of cards.
    pub flagged: bool,
}

pub fn card_type_census(store: &EventStore, threshold: usize) -> BTreeMap<u8, CensusEntry> {
    let mut census: BTreeMap<u8, CensusEntry> = BTreeMap::new();
    let entry = |census: &mut BTreeMap<u8, CensusEntry>, code: u8| {
        *census.entry(code).or_insert(CensusEntry { type_code: code, card_count: 0, event_count: 0, flagged: false })
    };
    for (_, events) in store.cards() {
        let code = modal_card_type(events);
        entry(&mut census, code);
        census.get_mut(&code).unwrap().card_count += 1;
        for e in events {
            entry(&mut census, e.card_type);
            census.get_mut(&e.card_type).unwrap().event_count += 1;
        }
    }
    for e in census.values_mut() {
        e.flagged = e.card_count < threshold;
    }
    census
}

pub fn write_gaps_csv<W: Write>(gaps: &[GapRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "lastUsedId,nextUsedId,missingCount").map_err(Error::UnwritableSink)?;
    for g in gaps {
        writeln!(sink, "{},{},{}", g.last_used_id, g.next_used_id, g.missing_count).map_err(Error::UnwritableSink)?;
    }
    Ok(())
}

pub fn write_census_csv<W: Write>(census: &BTreeMap<u8, CensusEntry>, mut sink: W) -> Result<()> {
    writeln!(sink, "typeCode,cardCount,eventCount,flagged").map_err(Error::UnwritableSink)?;
    for e in census.values() {
        writeln!(sink, "{},{},{},{}", e.type_code, e.card_count, e.event_count, e.flagged).map_err(Error::UnwritableSink)?;
    }
    Ok(())
}
