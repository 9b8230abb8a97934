//! Co-traveller detection: cards touching on at the same stop within a
//! small time window of the subject card.
//!
//! Taps are paired one-to-one. For a subject card and another card, every
//! candidate pair (same stop, |Δt| ≤ window) is ranked by |Δt|, then by the
//! earlier and later of the two times, then stop, then the time on the
//! lower-numbered card; pairs are accepted greedily when neither tap is
//! already used. The ranking does not depend on which card is the subject,
//! so occurrence counts are symmetric.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{CardId, DateRange, Timestamp};
use crate::store::EventStore;

pub const DEFAULT_WINDOW_SECONDS: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoTravelPair {
    pub stop_id: u32,
    pub own_time: Timestamp,
    pub other_time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoTravelMatch {
    pub other_card_id: CardId,
    pub other_card_type: u8,
    pub occurrences: usize,
    pub event_pairs: Vec<CoTravelPair>,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    time: Timestamp,
    card: CardId,
    /// Position of the tap within its card's event list.
    event: u32,
}

/// Touch-ons bucketed by stop and sorted by time.
#[derive(Debug, Clone)]
pub struct CoTravelIndex {
    by_stop: FxHashMap<u32, Vec<Tap>>,
    card_types: FxHashMap<CardId, u8>,
}

impl CoTravelIndex {
    pub fn build(store: &EventStore) -> Self {
        let mut by_stop: FxHashMap<u32, Vec<Tap>> = FxHashMap::default();
        let mut card_types = FxHashMap::default();
        for (card, events) in store.cards() {
            card_types.insert(card, crate::store::modal_card_type(events));
            for (i, e) in events.iter().enumerate() {
                by_stop.entry(e.on_stop_id).or_default().push(Tap { time: e.on_time, card, event: i as u32 });
            }
        }
        for taps in by_stop.values_mut() {
            taps.sort_by_key(|t| (t.time, t.card, t.event));
        }
        CoTravelIndex { by_stop, card_types }
    }

    pub fn cotravellers(
        &self,
        store: &EventStore,
        card: CardId,
        window_seconds: i64,
        period: Option<&DateRange>,
    ) -> Result<Vec<CoTravelMatch>> {
        if window_seconds < 0 {
            return Err(Error::InvalidParams("window must be non-negative".into()));
        }
        let events = store.events(card)?;
        let in_period = |t: Timestamp| period.is_none_or(|p| p.contains(t));

        // (other card) -> candidate pairs as (own event index, other event index, pair)
        let mut candidates: BTreeMap<CardId, Vec<(u32, u32, CoTravelPair)>> = BTreeMap::new();
        for (own_idx, e) in events.iter().enumerate() {
            if !in_period(e.on_time) {
                continue;
            }
            let Some(taps) = self.by_stop.get(&e.on_stop_id) else { continue };
            let lo = e.on_time.offset(-window_seconds);
            let hi = e.on_time.offset(window_seconds);
            let start = taps.partition_point(|t| t.time < lo);
            for tap in taps[start..].iter().take_while(|t| t.time <= hi) {
                if tap.card == card || !in_period(tap.time) {
                    continue;
                }
                candidates.entry(tap.card).or_default().push((
                    own_idx as u32,
                    tap.event,
                    CoTravelPair { stop_id: e.on_stop_id, own_time: e.on_time, other_time: tap.time },
                ));
            }
        }

        let mut matches: Vec<CoTravelMatch> = candidates
            .into_iter()
            .map(|(other, pairs)| {
                let event_pairs = pair_greedily(card, other, pairs);
                CoTravelMatch {
                    other_card_id: other,
                    other_card_type: self.card_types.get(&other).copied().unwrap_or_default(),
                    occurrences: event_pairs.len(),
                    event_pairs,
                }
            })
            .collect();
        matches.sort_by(|a, b| b.occurrences.cmp(&a.occurrences).then(a.other_card_id.cmp(&b.other_card_id)));
        Ok(matches)
    }
}

fn pair_greedily(own: CardId, other: CardId, mut pairs: Vec<(u32, u32, CoTravelPair)>) -> Vec<CoTravelPair> {
    let own_is_lower = own < other;
    pairs.sort_by_key(|(own_idx, other_idx, p)| {
        let (a, b) = (p.own_time.seconds(), p.other_time.seconds());
        let (lower_time, lower_idx) = if own_is_lower { (a, *own_idx) } else { (b, *other_idx) };
        ((a - b).abs(), a.min(b), a.max(b), p.stop_id, lower_time, lower_idx)
    });
    let mut used_own = Vec::new();
    let mut used_other = Vec::new();
    let mut out = Vec::new();
    for (own_idx, other_idx, pair) in pairs {
        if used_own.contains(&own_idx) || used_other.contains(&other_idx) {
            continue;
        }
        used_own.push(own_idx);
        used_other.push(other_idx);
        out.push(pair);
    }
    out.sort();
    out
}

/// Co-travellers of `card` over `period` (all time when `None`).
pub fn cotravellers(
    store: &EventStore,
    card: CardId,
    window_seconds: i64,
    period: Option<&DateRange>,
) -> Result<Vec<CoTravelMatch>> {
    store.events(card)?;
    CoTravelIndex::build(store).cotravellers(store, card, window_seconds, period)
}

/// Co-travellers of `card` on a single date.
pub fn cotravel_on_date(store: &EventStore, card: CardId, date: NaiveDate, window_seconds: i64) -> Result<Vec<CoTravelMatch>> {
    cotravellers(store, card, window_seconds, Some(&DateRange::single(date)))
}

pub const CSV_HEADER: &str = "otherCardId,otherCardType,occurrences";

pub fn write_csv<W: Write>(matches: &[CoTravelMatch], mut sink: W) -> Result<()> {
    writeln!(sink, "{CSV_HEADER}").map_err(Error::UnwritableSink)?;
    for m in matches {
        writeln!(sink, "{},{},{}", m.other_card_id, m.other_card_type, m.occurrences).map_err(Error::UnwritableSink)?;
    }
    Ok(())
}
