//! Re-identification risk analysis for smart-card tap-on/tap-off data.
//!
//! The library loads or synthesises tap records into an [`EventStore`],
//! indexes them into signature calendars, measures unicity, finds
//! co-travellers, narrows candidate sets for a target card, and produces
//! noisy aggregate releases.

pub mod cli;
pub mod cotravel;
pub mod csv_io;
pub mod error;
pub mod event;
pub mod index;
pub mod mix;
pub mod query;
pub mod release;
pub mod service;
pub mod store;
pub mod synth;
pub mod unicity;

pub use error::{Error, Result};
pub use event::{
    make_signature, truncate_time, CardId, DateRange, EventKind, EventSignature, Location, OffSide, Side, TapEvent,
    TimeGranularity, Timestamp,
};
pub use index::{build_calendar, CalendarSpec, SignatureCalendar};
pub use store::{build_store, EventStore};
