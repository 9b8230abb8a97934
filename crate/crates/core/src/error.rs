use std::io;

use crate::event::CardId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("card {0} has no touch-off event")]
    MissingOffEvent(CardId),

    #[error("unreadable source: {0}")]
    UnreadableSource(#[source] io::Error),

    #[error("unwritable sink: {0}")]
    UnwritableSink(#[source] io::Error),

    #[error("source header is missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid population config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unknown card {0}")]
    UnknownCard(CardId),

    #[error("card {0} is not a member of every selected bin")]
    SelfNotInBins(CardId),

    #[error("store has {events} events, brute force is limited to {limit}")]
    StoreTooLarge { events: usize, limit: usize },

    #[error("candidate set was produced from a different store")]
    StoreMismatch,

    #[error("block length of {0} minutes does not divide an hour")]
    InvalidBlock(u32),

    #[error("calendar snapshot: {0}")]
    Snapshot(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used by the HTTP and C interfaces.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingOffEvent(_) => "missing_off_event",
            Error::UnreadableSource(_) => "unreadable_source",
            Error::UnwritableSink(_) => "unwritable_sink",
            Error::MissingColumn(_) => "missing_column",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidParams(_) => "invalid_params",
            Error::UnknownCard(_) => "unknown_card",
            Error::SelfNotInBins(_) => "self_not_in_bins",
            Error::StoreTooLarge { .. } => "store_too_large",
            Error::StoreMismatch => "store_mismatch",
            Error::InvalidBlock(_) => "invalid_block",
            Error::Snapshot(_) => "snapshot",
            Error::Json(_) => "invalid_json",
        }
    }
}
