//! Learning-free temporal action localization by iterative visual prompting.
//!
//! A video is searched one task boundary at a time: evenly spaced frames are
//! tiled into a numbered grid, a vision-language backend names the frame
//! closest to the boundary, and the window is narrowed around that frame.

pub mod annotation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod prompt;
pub mod record;
pub mod search;
pub mod synth;
pub mod text;
pub mod video;
pub mod vlm;

pub use annotation::{GroundTruthSegmentation, Segment};
pub use config::{BackendKind, RunConfig};
pub use dataset::{Dataset, DatasetItem};
pub use error::{Error, Result};
pub use eval::{FrameLabeling, MetricsReport};
pub use grid::{compose_grid, AnnotationStyle, FrameGrid, GridShape, GridSpec, LabelMap, PromptStyle};
pub use prompt::{build_prompt, parse_answer, Boundary, PromptRequest, PromptTemplates, TaskSequence, VlmAnswer};
pub use record::{localize, LocalizationRecord, LocalizeOptions};
pub use search::{
    estimate_transitions, localize_tasks_parallel, tpivot_search, uniform_baseline, BoundaryEstimate, SearchParams,
    TimeWindow,
};
pub use video::{FrameSource, VideoSource};
pub use vlm::{OracleBackend, VlmBackend, VlmError};
