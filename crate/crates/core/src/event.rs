//! Tap events, time granularities and event signatures.
//!
//! Timestamps are naive local time stored as whole seconds since
//! `1970-01-01T00:00:00`. No timezone arithmetic is ever applied; the
//! dataset's own clock is the only clock.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Pseudonymous card identifier as it appears in a release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CardId(pub u64);

impl fmt::Display for CardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Second-resolution naive timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_seconds(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn seconds(self) -> i64 {
        self.0
    }

    pub fn from_naive(dt: NaiveDateTime) -> Self {
        Timestamp(dt.and_utc().timestamp())
    }

    pub fn from_date_time(date: NaiveDate, time: NaiveTime) -> Self {
        Self::from_naive(date.and_time(time))
    }

    /// Midnight at the start of `date`.
    pub fn start_of(date: NaiveDate) -> Self {
        Self::from_date_time(date, NaiveTime::MIN)
    }

    pub fn to_naive(self) -> NaiveDateTime {
        chrono::DateTime::from_timestamp(self.0, 0)
            .expect("timestamp within chrono range")
            .naive_utc()
    }

    pub fn date(self) -> NaiveDate {
        self.to_naive().date()
    }

    /// Seconds elapsed since midnight of the timestamp's own day.
    pub fn second_of_day(self) -> i64 {
        self.0.rem_euclid(SECONDS_PER_DAY)
    }

    pub fn offset(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format(ISO_FORMAT))
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        NaiveDateTime::parse_from_str(s.trim(), ISO_FORMAT).map(Timestamp::from_naive)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a tap happened: transport mode plus stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub mode: u8,
    pub stop: u32,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mode, self.stop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OffSide {
    pub time: Timestamp,
    pub mode: u8,
    pub route_id: u32,
    pub stop_id: u32,
}

/// One touch-on with an optional matching touch-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TapEvent {
    pub card_id: CardId,
    pub card_type: u8,
    pub on_time: Timestamp,
    pub on_mode: u8,
    pub on_route_id: u32,
    pub on_stop_id: u32,
    pub off: Option<OffSide>,
}

impl TapEvent {
    pub fn on_location(&self) -> Location {
        Location { mode: self.on_mode, stop: self.on_stop_id }
    }

    pub fn off_location(&self) -> Option<Location> {
        self.off.map(|o| Location { mode: o.mode, stop: o.stop_id })
    }

    /// Time of the requested side, if that side exists.
    pub fn side_time(&self, side: Side) -> Option<Timestamp> {
        match side {
            Side::TouchOn => Some(self.on_time),
            Side::TouchOff => self.off.map(|o| o.time),
        }
    }

    pub fn side_location(&self, side: Side) -> Option<Location> {
        match side {
            Side::TouchOn => Some(self.on_location()),
            Side::TouchOff => self.off_location(),
        }
    }

    /// Latest timestamp recorded on this event.
    pub fn last_time(&self) -> Timestamp {
        self.off.map_or(self.on_time, |o| o.time.max(self.on_time))
    }
}

/// Time resolution applied before signatures are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TimeGranularity {
    Exact,
    ZeroSeconds,
    NearestFiveMinutes,
    ZeroMinutes,
    ZeroHour,
}

impl TimeGranularity {
    /// Finest first. The derived `Ord` follows the same order, so
    /// `a < b` means `a` is finer than `b`.
    pub const ALL: [TimeGranularity; 5] = [
        TimeGranularity::Exact,
        TimeGranularity::ZeroSeconds,
        TimeGranularity::NearestFiveMinutes,
        TimeGranularity::ZeroMinutes,
        TimeGranularity::ZeroHour,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TimeGranularity::Exact => "exact",
            TimeGranularity::ZeroSeconds => "zeroSeconds",
            TimeGranularity::NearestFiveMinutes => "nearestFiveMinutes",
            TimeGranularity::ZeroMinutes => "zeroMinutes",
            TimeGranularity::ZeroHour => "zeroHour",
        }
    }

    /// True when every bin at `self` lies inside one bin at `coarser`.
    ///
    /// Exact and the floor truncations form a chain. Rounding to the
    /// nearest five minutes splits some minutes and crosses hour and day
    /// boundaries, so it is only refined by Exact.
    pub fn refines(self, coarser: TimeGranularity) -> bool {
        use TimeGranularity::*;
        match (self, coarser) {
            (a, b) if a == b => true,
            (Exact, _) => true,
            (NearestFiveMinutes, _) | (_, NearestFiveMinutes) => false,
            (a, b) => a < b,
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for TimeGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TimeGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParams(format!("unknown granularity `{s}`")))
    }
}

/// Which half of a tap event is being looked at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Side {
    TouchOn,
    TouchOff,
}

/// Which sub-events of a [`TapEvent`] produce signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EventKind {
    #[default]
    TouchOn,
    TouchOff,
    Both,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::TouchOn, EventKind::TouchOff, EventKind::Both];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::TouchOn => "touchOn",
            EventKind::TouchOff => "touchOff",
            EventKind::Both => "both",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn sides(self) -> &'static [Side] {
        match self {
            EventKind::TouchOn => &[Side::TouchOn],
            EventKind::TouchOff => &[Side::TouchOff],
            EventKind::Both => &[Side::TouchOn, Side::TouchOff],
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "touchon" | "on" => Ok(EventKind::TouchOn),
            "touchoff" | "off" => Ok(EventKind::TouchOff),
            "both" => Ok(EventKind::Both),
            _ => Err(Error::InvalidParams(format!("unknown event kind `{s}`"))),
        }
    }
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateRange {
    pub fn new(from: NaiveDate, to: NaiveDate) -> Result<Self> {
        if to < from {
            return Err(Error::InvalidParams(format!("empty date range {from}..{to}")));
        }
        Ok(DateRange { from, to })
    }

    pub fn single(date: NaiveDate) -> Self {
        DateRange { from: date, to: date }
    }

    pub fn contains_date(&self, date: NaiveDate) -> bool {
        self.from <= date && date <= self.to
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= Timestamp::start_of(self.from) && t < self.end_exclusive()
    }

    /// Midnight after the last day.
    pub fn end_exclusive(&self) -> Timestamp {
        Timestamp::start_of(self.to).offset(SECONDS_PER_DAY)
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let to = self.to;
        self.from.iter_days().take_while(move |d| *d <= to)
    }

    pub fn day_count(&self) -> i64 {
        (self.to - self.from).num_days() + 1
    }
}

/// Map a timestamp onto the lattice of a granularity.
///
/// `NearestFiveMinutes` rounds to the closest multiple of 300 s; an offset of
/// exactly 150 s rounds up, which can roll over into the next day.
pub fn truncate_time(t: Timestamp, g: TimeGranularity) -> Timestamp {
    let s = t.seconds();
    let floor_to = |unit: i64| s.div_euclid(unit) * unit;
    Timestamp(match g {
        TimeGranularity::Exact => s,
        TimeGranularity::ZeroSeconds => floor_to(60),
        TimeGranularity::NearestFiveMinutes => (s + 150).div_euclid(300) * 300,
        TimeGranularity::ZeroMinutes => floor_to(3_600),
        TimeGranularity::ZeroHour => floor_to(SECONDS_PER_DAY),
    })
}

/// Binning key of one sub-event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventSignature {
    pub granularity: TimeGranularity,
    pub truncated_time: Timestamp,
    pub location: Option<Location>,
}

impl EventSignature {
    pub fn new(time: Timestamp, location: Option<Location>, g: TimeGranularity) -> Self {
        EventSignature { granularity: g, truncated_time: truncate_time(time, g), location }
    }

    /// `"<mode>:<stopId>"` when the signature carries a location.
    pub fn location_key(&self) -> Option<String> {
        self.location.map(|l| l.to_string())
    }

    pub fn without_location(self) -> Self {
        EventSignature { location: None, ..self }
    }
}

pub fn make_signature(
    event: &TapEvent,
    side: Side,
    g: TimeGranularity,
    include_location: bool,
) -> Result<EventSignature> {
    let time = event.side_time(side).ok_or(Error::MissingOffEvent(event.card_id))?;
    let location = if include_location { event.side_location(side) } else { None };
    Ok(EventSignature::new(time, location, g))
}

/// A single touch (on or off) pulled out of a [`TapEvent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubEvent {
    pub side: Side,
    pub time: Timestamp,
    pub location: Location,
}

impl SubEvent {
    pub fn signature(&self, g: TimeGranularity, include_location: bool) -> EventSignature {
        EventSignature::new(self.time, include_location.then_some(self.location), g)
    }
}

/// Sub-events selected by `kind`, in event order (on before off), limited to
/// touches whose own time falls in `period`.
pub fn select_sub_events(
    events: &[TapEvent],
    kind: EventKind,
    period: Option<&DateRange>,
) -> Vec<SubEvent> {
    let mut out = Vec::with_capacity(events.len() * kind.sides().len());
    for event in events {
        for &side in kind.sides() {
            let (Some(time), Some(location)) = (event.side_time(side), event.side_location(side))
            else {
                continue;
            };
            if period.is_none_or(|p| p.contains(time)) {
                out.push(SubEvent { side, time, location });
            }
        }
    }
    out
}
