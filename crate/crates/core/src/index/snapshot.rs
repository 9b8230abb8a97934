//! Binary calendar snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "TRCALSNP"
//! version     u16      currently 1
//! granularity u8       0 exact .. 4 zeroHour
//! location    u8       0 / 1
//! kind        u8       0 touchOn, 1 touchOff, 2 both
//! has_period  u8       0 / 1, followed by from/to as i32 days since 0001-01-01
//! fingerprint u64      fingerprint of the source store
//! bins        u64      then per bin:
//!     time i64, has_location u8, [mode u8, stop u32], event_count u64, member_count u64
//! members     u64 each, bin after bin
//! cards       u64      then per card: id u64, ref_count u64
//! refs        u32 each, card after card
//! ```

use std::io::{BufReader, BufWriter, Read, Write};

use chrono::{Datelike, NaiveDate};
use rustc_hash::FxHashMap;

use super::{CalendarSpec, SignatureCalendar};
use crate::error::{Error, Result};
use crate::event::{CardId, DateRange, EventKind, EventSignature, Location, TimeGranularity, Timestamp};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"TRCALSNP";
pub const SNAPSHOT_VERSION: u16 = 1;

pub fn write_snapshot<W: Write>(calendar: &SignatureCalendar, sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(Error::UnwritableSink);
    let spec = &calendar.spec;
    put(SNAPSHOT_MAGIC)?;
    put(&SNAPSHOT_VERSION.to_le_bytes())?;
    put(&[spec.granularity.code(), spec.include_location as u8, spec.kind.code()])?;
    match spec.period {
        Some(p) => {
            put(&[1])?;
            put(&p.from.num_days_from_ce().to_le_bytes())?;
            put(&p.to.num_days_from_ce().to_le_bytes())?;
        }
        None => put(&[0])?,
    }
    put(&calendar.store_fingerprint.to_le_bytes())?;
    put(&(calendar.signatures.len() as u64).to_le_bytes())?;
    for (i, sig) in calendar.signatures.iter().enumerate() {
        put(&sig.truncated_time.seconds().to_le_bytes())?;
        match sig.location {
            Some(l) => {
                put(&[1, l.mode])?;
                put(&l.stop.to_le_bytes())?;
            }
            None => put(&[0])?,
        }
        put(&calendar.event_counts[i].to_le_bytes())?;
        let n = calendar.member_offsets[i + 1] - calendar.member_offsets[i];
        put(&n.to_le_bytes())?;
    }
    for m in &calendar.members {
        put(&m.0.to_le_bytes())?;
    }
    put(&(calendar.cards.len() as u64).to_le_bytes())?;
    for (i, c) in calendar.cards.iter().enumerate() {
        put(&c.0.to_le_bytes())?;
        put(&(calendar.card_offsets[i + 1] - calendar.card_offsets[i]).to_le_bytes())?;
    }
    for r in &calendar.refs {
        put(&r.to_le_bytes())?;
    }
    w.flush().map_err(Error::UnwritableSink)
}

struct Input<R: Read>(R);

impl<R: Read> Input<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Snapshot("truncated snapshot".into()),
            _ => Error::UnreadableSource(e),
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn i64(&mut self) -> Result<i64> {
        self.array().map(i64::from_le_bytes)
    }
    fn date(&mut self) -> Result<NaiveDate> {
        let days = self.i32()?;
        NaiveDate::from_num_days_from_ce_opt(days).ok_or_else(|| Error::Snapshot(format!("bad date {days}")))
    }
}

fn corrupt(what: &str) -> Error {
    Error::Snapshot(format!("corrupt snapshot: {what}"))
}

pub fn read_snapshot<R: Read>(source: R) -> Result<SignatureCalendar> {
    let mut r = Input(BufReader::new(source));
    if &r.array::<8>()? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("not a calendar snapshot".into()));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
    }
    let granularity = TimeGranularity::from_code(r.u8()?).ok_or_else(|| corrupt("granularity"))?;
    let include_location = r.u8()? != 0;
    let kind = EventKind::from_code(r.u8()?).ok_or_else(|| corrupt("kind"))?;
    let period = match r.u8()? {
        0 => None,
        _ => Some(DateRange { from: r.date()?, to: r.date()? }),
    };
    let store_fingerprint = r.u64()?;

    let bins = r.u64()? as usize;
    let mut signatures = Vec::with_capacity(bins);
    let mut event_counts = Vec::with_capacity(bins);
    let mut member_offsets = Vec::with_capacity(bins + 1);
    member_offsets.push(0u64);
    let mut lookup = FxHashMap::default();
    for i in 0..bins {
        let time = Timestamp::from_seconds(r.i64()?);
        let location = match r.u8()? {
            0 => None,
            _ => Some(Location { mode: r.u8()?, stop: r.u32()? }),
        };
        let sig = EventSignature { granularity, truncated_time: time, location };
        if lookup.insert(sig, i as u32).is_some() {
            return Err(corrupt("duplicate signature"));
        }
        signatures.push(sig);
        event_counts.push(r.u64()?);
        let n = r.u64()?;
        member_offsets.push(member_offsets[i] + n);
    }
    let total_members = *member_offsets.last().unwrap() as usize;
    let mut members = Vec::with_capacity(total_members);
    for _ in 0..total_members {
        members.push(CardId(r.u64()?));
    }
    let card_count = r.u64()? as usize;
    let mut cards = Vec::with_capacity(card_count);
    let mut card_offsets = Vec::with_capacity(card_count + 1);
    card_offsets.push(0u64);
    for i in 0..card_count {
        cards.push(CardId(r.u64()?));
        let n = r.u64()?;
        card_offsets.push(card_offsets[i] + n);
    }
    let total_refs = *card_offsets.last().unwrap() as usize;
    let mut refs = Vec::with_capacity(total_refs);
    for _ in 0..total_refs {
        let b = r.u32()?;
        if b as usize >= bins {
            return Err(corrupt("bin reference out of range"));
        }
        refs.push(b);
    }
    Ok(SignatureCalendar {
        spec: CalendarSpec { granularity, include_location, kind, period },
        store_fingerprint,
        signatures,
        event_counts,
        member_offsets,
        members,
        cards,
        card_offsets,
        refs,
        lookup,
    })
}
