//! Signature calendar: every distinct event signature mapped to the cards
//! that produced it.
//!
//! Bins are stored column-wise. Members of all bins live in one flat vector
//! (`member_offsets` delimits each bin), and each card's ordered list of bin
//! references lives in another (`card_offsets` delimits each card). Members
//! of a bin are distinct and ascending, so intersections are merges.

mod snapshot;

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::event::{select_sub_events, CardId, DateRange, EventKind, EventSignature, TimeGranularity};
use crate::store::EventStore;

/// Index of a bin inside its calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinRef(pub u32);

/// Which signatures a calendar is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CalendarSpec {
    pub granularity: TimeGranularity,
    pub include_location: bool,
    pub kind: EventKind,
    /// Only touches inside this range are binned.
    pub period: Option<DateRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bin<'a> {
    pub id: BinRef,
    pub signature: &'a EventSignature,
    pub members: &'a [CardId],
    pub event_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureCalendar {
    pub(crate) spec: CalendarSpec,
    pub(crate) store_fingerprint: u64,
    pub(crate) signatures: Vec<EventSignature>,
    pub(crate) event_counts: Vec<u64>,
    pub(crate) member_offsets: Vec<u64>,
    pub(crate) members: Vec<CardId>,
    pub(crate) cards: Vec<CardId>,
    pub(crate) card_offsets: Vec<u64>,
    pub(crate) refs: Vec<u32>,
    pub(crate) lookup: FxHashMap<EventSignature, u32>,
}

pub fn build_calendar(
    store: &EventStore,
    granularity: TimeGranularity,
    include_location: bool,
    kind: EventKind,
) -> SignatureCalendar {
    SignatureCalendar::build(store, CalendarSpec { granularity, include_location, kind, period: None })
}

impl SignatureCalendar {
    pub fn build(store: &EventStore, spec: CalendarSpec) -> Self {
        let mut lookup: FxHashMap<EventSignature, u32> = FxHashMap::default();
        let mut signatures = Vec::new();
        let mut event_counts: Vec<u64> = Vec::new();
        let mut cards = Vec::new();
        let mut card_offsets = vec![0u64];
        let mut refs: Vec<u32> = Vec::new();

        // Pass 1: assign bins and record every card's references.
        for (card, events) in store.cards() {
            let subs = select_sub_events(events, spec.kind, spec.period.as_ref());
            if subs.is_empty() {
                continue;
            }
            for sub in subs {
                let sig = sub.signature(spec.granularity, spec.include_location);
                let id = *lookup.entry(sig).or_insert_with(|| {
                    signatures.push(sig);
                    event_counts.push(0);
                    (signatures.len() - 1) as u32
                });
                event_counts[id as usize] += 1;
                refs.push(id);
            }
            cards.push(card);
            card_offsets.push(refs.len() as u64);
        }

        // Pass 2: count distinct members per bin, then fill. Cards are visited
        // in ascending order, so a bin's last writer is enough to deduplicate.
        let bins = signatures.len();
        let mut last_seen = vec![u32::MAX; bins];
        let mut member_counts = vec![0u64; bins];
        for (ci, window) in card_offsets.windows(2).enumerate() {
            for &b in &refs[window[0] as usize..window[1] as usize] {
                if last_seen[b as usize] != ci as u32 {
                    last_seen[b as usize] = ci as u32;
                    member_counts[b as usize] += 1;
                }
            }
        }
        let mut member_offsets = Vec::with_capacity(bins + 1);
        member_offsets.push(0u64);
        let mut acc = 0;
        for c in &member_counts {
            acc += c;
            member_offsets.push(acc);
        }
        drop(member_counts);
        let mut cursor: Vec<u64> = member_offsets[..bins].to_vec();
        let mut members = vec![CardId(0); acc as usize];
        last_seen.fill(u32::MAX);
        for (ci, window) in card_offsets.windows(2).enumerate() {
            for &b in &refs[window[0] as usize..window[1] as usize] {
                if last_seen[b as usize] != ci as u32 {
                    last_seen[b as usize] = ci as u32;
                    members[cursor[b as usize] as usize] = cards[ci];
                    cursor[b as usize] += 1;
                }
            }
        }

        SignatureCalendar {
            spec,
            store_fingerprint: store.fingerprint(),
            signatures,
            event_counts,
            member_offsets,
            members,
            cards,
            card_offsets,
            refs,
            lookup,
        }
    }

    pub fn spec(&self) -> &CalendarSpec {
        &self.spec
    }

    pub fn granularity(&self) -> TimeGranularity {
        self.spec.granularity
    }

    pub fn include_location(&self) -> bool {
        self.spec.include_location
    }

    pub fn kind(&self) -> EventKind {
        self.spec.kind
    }

    pub fn store_fingerprint(&self) -> u64 {
        self.store_fingerprint
    }

    pub fn bin_count(&self) -> usize {
        self.signatures.len()
    }

    /// Total signatures generated, i.e. the sum of all bin event counts.
    pub fn signature_count(&self) -> usize {
        self.refs.len()
    }

    /// Cards with at least one signature, ascending.
    pub fn cards(&self) -> &[CardId] {
        &self.cards
    }

    pub fn bin(&self, id: BinRef) -> Bin<'_> {
        let i = id.0 as usize;
        Bin {
            id,
            signature: &self.signatures[i],
            members: self.members_of(id.0),
            event_count: self.event_counts[i],
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = Bin<'_>> {
        (0..self.signatures.len() as u32).map(|i| self.bin(BinRef(i)))
    }

    pub fn find(&self, signature: &EventSignature) -> Option<BinRef> {
        self.lookup.get(signature).copied().map(BinRef)
    }

    /// Members of the bin keyed by `signature`; empty when no such bin exists.
    /// The signature is used verbatim, so one built with another granularity
    /// or location convention finds nothing.
    pub fn bin_members(&self, signature: &EventSignature) -> &[CardId] {
        self.find(signature).map_or(&[], |b| self.members_of(b.0))
    }

    /// One bin per signature of `card`, in the card's event order. Bins hit
    /// twice appear twice.
    pub fn card_bins(&self, card: CardId) -> Result<Vec<Bin<'_>>> {
        let idx = self.card_index(card).ok_or(Error::UnknownCard(card))?;
        Ok(self.card_refs(idx).iter().map(|&b| self.bin(BinRef(b))).collect())
    }

    pub fn card_index(&self, card: CardId) -> Option<usize> {
        self.cards.binary_search(&card).ok()
    }

    pub(crate) fn card_refs(&self, idx: usize) -> &[u32] {
        &self.refs[self.card_offsets[idx] as usize..self.card_offsets[idx + 1] as usize]
    }

    pub(crate) fn members_of(&self, bin: u32) -> &[CardId] {
        let i = bin as usize;
        &self.members[self.member_offsets[i] as usize..self.member_offsets[i + 1] as usize]
    }
}
