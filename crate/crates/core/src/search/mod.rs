//! Iterative narrowing search over a video's timeline.
//!
//! Each pass samples evenly spaced frames from the current window, tiles
//! them into a numbered grid, asks a backend which label is closest to the
//! boundary of interest, then recentres the window on that frame and halves
//! its width.

mod sampling;
mod tpivot;
mod transitions;

pub use sampling::{
    sample_frames, sample_indices, sample_times, snap_to_frames, SampleError, SampleOrVideoError, TimeWindow,
};
pub use tpivot::{
    localize_tasks_parallel, tpivot_search, BoundaryEstimate, BoundaryOutcome, SearchError, SearchFailure,
    SearchParams, TaskBoundaries, TraceStep, DEFAULT_ANSWER_RETRIES, DEFAULT_ITERATIONS, DEFAULT_WORKERS,
    MAX_ITERATIONS,
};
pub use transitions::{estimate_transitions, monotone_transitions, uniform_baseline, TransitionEstimate};
