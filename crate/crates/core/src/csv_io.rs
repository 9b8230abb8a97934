//! Event CSV reading and writing.
//!
//! Header (extra columns such as `onVid` are accepted and ignored):
//!
//! ```text
//! cardId,cardType,onDate,onMode,onRouteId,onStopId,offDate,offMode,offRouteId,offStopId
//! ```
//!
//! A missing touch-off is written as four empty fields.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::event::{CardId, OffSide, TapEvent, Timestamp};
use crate::store::{build_store, EventStore};

pub const HEADER: [&str; 10] = [
    "cardId", "cardType", "onDate", "onMode", "onRouteId", "onStopId", "offDate", "offMode",
    "offRouteId", "offStopId",
];

/// A data row that could not be turned into a [`TapEvent`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    /// 1-based data row number (the header is row 0).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedRow {
    Event(TapEvent),
    Malformed(RecordError),
}

/// Streaming reader over an event CSV.
pub struct EventReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    columns: [usize; 10],
    row: u64,
    done: bool,
}

/// Open an event stream. Fails only if the header cannot be read or lacks a
/// required column.
pub fn parse_events<R: Read>(source: R) -> Result<EventReader<R>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.headers().map_err(csv_to_io).map_err(Error::UnreadableSource)?.clone();
    let mut columns = [0usize; 10];
    for (slot, name) in columns.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    Ok(EventReader { records: reader.into_records(), columns, row: 0, done: false })
}

fn csv_to_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = Result<ParsedRow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) if e.is_io_error() => {
                self.done = true;
                return Some(Err(Error::UnreadableSource(csv_to_io(e))));
            }
            Err(e) => {
                self.row += 1;
                return Some(Ok(ParsedRow::Malformed(RecordError {
                    row: self.row,
                    reason: format!("malformed csv: {e}"),
                })));
            }
        };
        self.row += 1;
        let fields: [&str; 10] = self.columns.map(|i| record.get(i).unwrap_or("").trim());
        Some(Ok(match parse_fields(&fields) {
            Ok(event) => ParsedRow::Event(event),
            Err(reason) => ParsedRow::Malformed(RecordError { row: self.row, reason }),
        }))
    }
}

fn parse_fields(f: &[&str; 10]) -> std::result::Result<TapEvent, String> {
    let [card, card_type, on_date, on_mode, on_route, on_stop, off_date, off_mode, off_route, off_stop] =
        *f;
    let timestamp = |s: &str| s.parse::<Timestamp>().map_err(|_| "unparseable timestamp".to_string());
    // Timestamps are checked first; a broken date usually means a shifted row.
    let on_time = timestamp(on_date)?;
    let off_time = if off_date.is_empty() { None } else { Some(timestamp(off_date)?) };

    fn int<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("invalid integer in {name}"))
    }
    let card_id: u64 = int(card, "cardId")?;
    if card_id == 0 {
        return Err("cardId must be positive".into());
    }
    let card_type: u8 = int(card_type, "cardType")?;
    if card_type > 127 {
        return Err("cardType out of range".into());
    }
    let off = match off_time {
        None => {
            if [off_mode, off_route, off_stop].iter().any(|s| !s.is_empty()) {
                return Err("off-side fields present without offDate".into());
            }
            None
        }
        Some(time) => {
            if time < on_time {
                return Err("offDate before onDate".into());
            }
            Some(OffSide {
                time,
                mode: int(off_mode, "offMode")?,
                route_id: int(off_route, "offRouteId")?,
                stop_id: int(off_stop, "offStopId")?,
            })
        }
    };
    Ok(TapEvent {
        card_id: CardId(card_id),
        card_type,
        on_time,
        on_mode: int(on_mode, "onMode")?,
        on_route_id: int(on_route, "onRouteId")?,
        on_stop_id: int(on_stop, "onStopId")?,
        off,
    })
}

/// Outcome of loading a file or directory into a store.
#[derive(Debug)]
pub struct LoadOutcome {
    pub store: EventStore,
    pub errors: Vec<(PathBuf, RecordError)>,
}

/// Load a CSV file, or every `*.csv` file of a directory in name order.
pub fn load_path(path: &Path) -> Result<LoadOutcome> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(Error::UnreadableSource)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut events = Vec::new();
    let mut errors = Vec::new();
    for file in files {
        let handle = File::open(&file).map_err(Error::UnreadableSource)?;
        for row in parse_events(BufReader::new(handle))? {
            match row? {
                ParsedRow::Event(e) => events.push(e),
                ParsedRow::Malformed(err) => errors.push((file.clone(), err)),
            }
        }
    }
    Ok(LoadOutcome { store: build_store(events), errors })
}

/// Write the store as CSV, rows sorted by (cardId, onTime). Returns the row count.
pub fn write_events<W: Write>(store: &EventStore, sink: W) -> Result<usize> {
    let mut out = io::BufWriter::new(sink);
    let io_err = Error::UnwritableSink;
    writeln!(out, "{}", HEADER.join(",")).map_err(io_err)?;
    let mut rows = 0;
    for e in store.iter_events() {
        write!(
            out,
            "{},{},{},{},{},{},",
            e.card_id, e.card_type, e.on_time, e.on_mode, e.on_route_id, e.on_stop_id
        )
        .map_err(io_err)?;
        match e.off {
            Some(o) => writeln!(out, "{},{},{},{}", o.time, o.mode, o.route_id, o.stop_id),
            None => writeln!(out, ",,,"),
        }
        .map_err(io_err)?;
        rows += 1;
    }
    out.flush().map_err(io_err)?;
    Ok(rows)
}
