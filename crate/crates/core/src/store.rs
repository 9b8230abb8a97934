//! Per-card event store.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use chrono::NaiveDate;
use rustc_hash::FxHasher;

use crate::error::{Error, Result};
use crate::event::{CardId, DateRange, TapEvent, Timestamp};

/// Events grouped by card, each card's list sorted by touch-on time.
///
/// Immutable once built. Cards never have empty lists.
#[derive(Debug, Clone, Default)]
pub struct EventStore {
    cards: BTreeMap<CardId, Vec<TapEvent>>,
    event_count: usize,
    date_range: Option<DateRange>,
    fingerprint: u64,
}

impl PartialEq for EventStore {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint && self.cards == other.cards
    }
}

impl Eq for EventStore {}

impl EventStore {
    pub fn card_count(&self) -> usize {
        self.cards.len()
    }

    pub fn event_count(&self) -> usize {
        self.event_count
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    /// First and last calendar date touched by any on- or off-event.
    pub fn date_range(&self) -> Option<DateRange> {
        self.date_range
    }

    /// Content hash, used to tie derived artifacts back to their store.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn events(&self, card: CardId) -> Result<&[TapEvent]> {
        self.cards.get(&card).map(Vec::as_slice).ok_or(Error::UnknownCard(card))
    }

    pub fn contains(&self, card: CardId) -> bool {
        self.cards.contains_key(&card)
    }

    /// Cards in ascending id order.
    pub fn cards(&self) -> impl ExactSizeIterator<Item = (CardId, &[TapEvent])> + Clone {
        self.cards.iter().map(|(id, evs)| (*id, evs.as_slice()))
    }

    pub fn card_ids(&self) -> impl ExactSizeIterator<Item = CardId> + '_ {
        self.cards.keys().copied()
    }

    /// All events ordered by (cardId, onTime).
    pub fn iter_events(&self) -> impl Iterator<Item = &TapEvent> {
        self.cards.values().flatten()
    }

    /// Most frequent per-event card type; ties go to the lowest code.
    pub fn card_type(&self, card: CardId) -> Result<u8> {
        self.events(card).map(modal_card_type)
    }

    /// Copy of the store restricted to events whose touch-on falls in `period`.
    pub fn restricted_to(&self, period: &DateRange) -> EventStore {
        build_store(self.iter_events().filter(|e| period.contains(e.on_time)).copied())
    }
}

pub(crate) fn modal_card_type(events: &[TapEvent]) -> u8 {
    let mut counts = [0usize; 256];
    for e in events {
        counts[e.card_type as usize] += 1;
    }
    let mut best = 0u8;
    for code in 0..=255u8 {
        if counts[code as usize] > counts[best as usize] {
            best = code;
        }
    }
    best
}

/// Group a stream of events by card and sort each card's events.
pub fn build_store<I: IntoIterator<Item = TapEvent>>(events: I) -> EventStore {
    let mut cards: BTreeMap<CardId, Vec<TapEvent>> = BTreeMap::new();
    let mut event_count = 0usize;
    for event in events {
        cards.entry(event.card_id).or_default().push(event);
        event_count += 1;
    }
    finish(cards, event_count)
}

/// Assemble a store from lists already grouped per card.
pub(crate) fn from_card_lists(lists: Vec<(CardId, Vec<TapEvent>)>) -> EventStore {
    let mut cards: BTreeMap<CardId, Vec<TapEvent>> = BTreeMap::new();
    let mut event_count = 0;
    for (id, events) in lists {
        if events.is_empty() {
            continue;
        }
        event_count += events.len();
        match cards.entry(id) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(events);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => slot.get_mut().extend(events),
        }
    }
    finish(cards, event_count)
}

fn finish(mut cards: BTreeMap<CardId, Vec<TapEvent>>, event_count: usize) -> EventStore {
    let mut lo: Option<Timestamp> = None;
    let mut hi: Option<Timestamp> = None;
    let mut hasher = FxHasher::default();
    for (id, events) in cards.iter_mut() {
        // Stable sort keeps input order among equal touch-on times.
        events.sort_by_key(|e| e.on_time);
        id.hash(&mut hasher);
        for e in events.iter() {
            e.hash(&mut hasher);
            lo = Some(lo.map_or(e.on_time, |l| l.min(e.on_time)));
            hi = Some(hi.map_or(e.last_time(), |h| h.max(e.last_time())));
        }
    }
    let date_range = lo.zip(hi).map(|(lo, hi)| DateRange { from: lo.date(), to: hi.date() });
    EventStore { cards, event_count, date_range, fingerprint: hasher.finish() }
}

/// Days in `range` that fall Monday to Friday.
pub fn weekdays(range: &DateRange) -> impl Iterator<Item = NaiveDate> {
    use chrono::Datelike;
    range.days().filter(|d| d.weekday().number_from_monday() <= 5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::OffSide;

    fn ev(card: u64, secs: i64) -> TapEvent {
        TapEvent {
            card_id: CardId(card),
            card_type: 0,
            on_time: Timestamp::from_seconds(1_500_000_000 + secs),
            on_mode: 2,
            on_route_id: 1,
            on_stop_id: 10,
            off: None,
        }
    }

    #[test]
    fn counts_cards_and_events() {
        let store = build_store(vec![ev(1, 0), ev(1, 10), ev(1, 20), ev(2, 5)]);
        assert_eq!(store.card_count(), 2);
        assert_eq!(store.event_count(), 4);
    }

    #[test]
    fn empty_stream() {
        let store = build_store(Vec::new());
        assert_eq!(store.card_count(), 0);
        assert_eq!(store.event_count(), 0);
        assert!(store.date_range().is_none());
    }

    #[test]
    fn per_card_lists_sorted_like_an_independent_sort() {
        let offsets = [300i64, -20, 7, 7000, 0, 55, -3000];
        let input: Vec<TapEvent> = offsets.iter().map(|&s| ev(9, s)).collect();
        let store = build_store(input.clone());
        let mut expected: Vec<i64> = offsets.to_vec();
        expected.sort_unstable();
        let got: Vec<i64> = store
            .events(CardId(9))
            .unwrap()
            .iter()
            .map(|e| e.on_time.seconds() - 1_500_000_000)
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn date_range_includes_off_side() {
        let mut e = ev(1, 0);
        e.off = Some(OffSide {
            time: Timestamp::from_seconds(1_500_000_000 + 86_400 * 3),
            mode: 2,
            route_id: 1,
            stop_id: 11,
        });
        let store = build_store(vec![e]);
        let range = store.date_range().unwrap();
        assert_eq!(range.day_count(), 4);
    }

    #[test]
    fn modal_type_prefers_lowest_code_on_ties() {
        let mut a = ev(1, 0);
        a.card_type = 51;
        let mut b = ev(1, 1);
        b.card_type = 3;
        assert_eq!(modal_card_type(&[a, b]), 3);
        assert_eq!(modal_card_type(&[a, b, a]), 51);
    }

    #[test]
    fn unknown_card() {
        let store = build_store(vec![ev(1, 0)]);
        assert!(matches!(store.events(CardId(2)), Err(Error::UnknownCard(CardId(2)))));
    }
}
