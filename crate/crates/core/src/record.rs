//! Whole-video localization and its JSON result file.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::annotation::Segment;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::prompt::TaskSequence;
use crate::search::{
    estimate_transitions, localize_tasks_parallel, monotone_transitions, BoundaryOutcome, SearchParams, TraceStep,
};
use crate::video::FrameSource;
use crate::vlm::VlmBackend;

pub const TOOLKIT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// How one boundary search went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySearch {
    /// Time used downstream: the estimate, or the uniform-baseline position
    /// when the search failed.
    pub time_s: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The window got too narrow to sample before all passes ran.
    pub early_stop: bool,
    /// Some pass had no usable reply and took the centre frame.
    pub fallback: bool,
    pub trace: Vec<TraceStep>,
}

impl From<&BoundaryOutcome> for BoundarySearch {
    fn from(o: &BoundaryOutcome) -> Self {
        match &o.result {
            Ok(est) => Self {
                time_s: o.time_s,
                failed: false,
                error: None,
                early_stop: est.early_stop,
                fallback: est.used_fallback(),
                trace: est.trace.clone(),
            },
            Err(e) => Self {
                time_s: o.time_s,
                failed: true,
                error: Some(e.to_string()),
                early_stop: false,
                fallback: e.trace.iter().any(|s| s.fallback),
                trace: e.trace.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBoundary {
    /// 1-based.
    pub task: usize,
    pub label: String,
    pub start: BoundarySearch,
    pub end: BoundarySearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub version: String,
    pub backend: String,
    pub grid: GridSpec,
    pub iterations: u32,
    /// The full run configuration, as supplied by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

/// Result file for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub video_id: String,
    pub fps: f64,
    pub duration_s: f64,
    /// Predicted segmentation implied by `transitions`.
    pub segments: Vec<Segment>,
    pub tasks: TaskSequence,
    pub boundaries: Vec<TaskBoundary>,
    /// `transitions[i]` is the switch from task `i+1` to task `i+2`.
    pub transitions: Vec<f64>,
    pub meta: RecordMeta,
}

impl LocalizationRecord {
    pub fn any_failed(&self) -> bool {
        self.boundaries.iter().any(|b| b.start.failed || b.end.failed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Options for [`localize`] beyond the search itself.
#[derive(Debug, Clone, Default)]
pub struct LocalizeOptions {
    pub workers: usize,
    /// Stored verbatim in the record's meta.
    pub config: serde_json::Value,
    /// Record elapsed wall-clock time. Off by default so records stay
    /// byte-identical across runs.
    pub timing: bool,
}

/// Finds every task's start and end, merges them into transitions and
/// returns the result record. Individual search failures fall back to the
/// uniform baseline and are flagged in the record.
pub fn localize(
    video: &dyn FrameSource,
    video_id: &str,
    tasks: &TaskSequence,
    params: &SearchParams,
    backend: &dyn VlmBackend,
    opts: &LocalizeOptions,
) -> Result<LocalizationRecord> {
    let started = Instant::now();
    let duration = video.duration_s();
    let found = localize_tasks_parallel(video, tasks, params, backend, opts.workers)?;

    let starts: Vec<f64> = found.starts.iter().map(|o| o.time_s).collect();
    let ends: Vec<f64> = found.ends.iter().map(|o| o.time_s).collect();
    let merged = estimate_transitions(&starts, &ends)?;
    let transitions = monotone_transitions(&merged.transitions, duration);

    let mut bounds = vec![0.0];
    bounds.extend_from_slice(&transitions);
    bounds.push(duration);
    let segments = tasks
        .labels()
        .iter()
        .zip(bounds.windows(2))
        .map(|(label, w)| Segment {
            label: label.clone(),
            start_s: w[0],
            end_s: w[1],
        })
        .collect();

    let boundaries = tasks
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| TaskBoundary {
            task: i + 1,
            label: label.clone(),
            start: (&found.starts[i]).into(),
            end: (&found.ends[i]).into(),
        })
        .collect();

    Ok(LocalizationRecord {
        video_id: video_id.to_string(),
        fps: video.fps(),
        duration_s: duration,
        segments,
        tasks: tasks.clone(),
        boundaries,
        transitions,
        meta: RecordMeta {
            version: TOOLKIT_VERSION.to_string(),
            backend: backend.id(),
            grid: params.grid,
            iterations: params.iterations,
            config: opts.config.clone(),
            wall_clock_s: opts.timing.then(|| started.elapsed().as_secs_f64()),
        },
    })
}
