//! Frame-level scoring (MoF, IoU, F1) and dataset evaluation runs.

mod metrics;
mod report;

pub use metrics::{f1, iou, mof, score, score_transitions, to_frame_labels, FrameLabeling, Scores};
pub use report::{
    baseline_report, evaluate, quartiles, sweep, BackendFor, EvalOptions, GroupRow, MetricsReport, SweepReport,
    SweepRow, VideoFailure, VideoScore,
};
