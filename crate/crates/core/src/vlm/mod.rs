//! Pluggable vision-language model backends.
//!
//! A backend turns one grid image plus prompt into a raw text reply; the
//! shared [`VlmBackend::query`] then parses the `{"points": [...]}` answer.
//! Keeping the raw reply as the unit of exchange lets the record/replay
//! wrappers store exactly what a model said, including unparseable replies.

mod http;
mod oracle;
mod ratelimit;
mod replay;

use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT, DEFAULT_MODEL};
pub use oracle::{nearest_label, OracleBackend};
pub use ratelimit::RateLimiter;
pub use replay::{RecordingBackend, ReplayBackend, ReplayEntry};

use crate::grid::FrameGrid;
use crate::prompt::{parse_answer, Boundary, VlmAnswer};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VlmError {
    #[error("no `points` JSON object in reply: {0}")]
    Parse(String),

    #[error("reply listed no usable label: {0}")]
    EmptyAnswer(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("no recorded reply for request {0}")]
    CacheMiss(String),

    #[error("backend config: {0}")]
    Config(String),

    #[error("store I/O: {0}")]
    Io(String),
}

impl VlmError {
    /// Errors that re-asking the same question may fix.
    pub fn is_answer_error(&self) -> bool {
        matches!(self, VlmError::Parse(_) | VlmError::EmptyAnswer(_))
    }
}

/// One question put to a backend.
#[derive(Debug, Clone, Copy)]
pub struct VlmQuery<'a> {
    pub grid: &'a FrameGrid,
    pub prompt: &'a str,
    /// 1-based index of the focused task.
    pub task_focus: usize,
    pub boundary: Boundary,
}

impl VlmQuery<'_> {
    /// Content hash identifying this request for record/replay.
    pub fn request_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prompt.as_bytes());
        h.update([0u8]);
        h.update(self.grid.image.width().to_le_bytes());
        h.update(self.grid.image.height().to_le_bytes());
        h.update(self.grid.image.as_raw());
        for t in self.grid.label_map.times() {
            h.update(t.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub trait VlmBackend: Send + Sync {
    /// Short identifier recorded in result metadata.
    fn id(&self) -> String;

    /// The model's raw text reply.
    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError>;

    fn query(&self, query: &VlmQuery<'_>) -> Result<VlmAnswer, VlmError> {
        let raw = self.query_raw(query)?;
        parse_answer(&raw, |p| query.grid.label_map.contains(p))
    }
}

impl<B: VlmBackend + ?Sized> VlmBackend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        (**self).query_raw(query)
    }
}

impl<B: VlmBackend + ?Sized> VlmBackend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        (**self).query_raw(query)
    }
}
