use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{score_transitions, Scores};
use crate::annotation::GroundTruthSegmentation;
use crate::config::{RunConfig, SharedBackend};
use crate::dataset::{Dataset, DatasetItem};
use crate::error::{Error, Result};
use crate::grid::{GridShape, PromptStyle};
use crate::prompt::TaskSequence;
use crate::record::{localize, LocalizationRecord, LocalizeOptions};
use crate::search::uniform_baseline;
use crate::video::{FrameSource, VideoSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub n_tasks: usize,
    pub duration_s: f64,
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
    /// Boundary searches that failed and fell back to the baseline.
    pub failed_boundaries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub videos: usize,
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
}

/// Dataset-level scores: the mean of per-video scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub videos: usize,
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
    pub per_video: Vec<VideoScore>,
    pub by_task_count: Vec<GroupRow>,
    /// Quartiles of the scored videos' durations.
    pub by_duration: Vec<GroupRow>,
    pub failures: Vec<VideoFailure>,
}

fn mean_scores<'a>(videos: impl Iterator<Item = &'a VideoScore>) -> (usize, Scores) {
    let (mut n, mut s) = (0usize, Scores { mof: 0.0, iou: 0.0, f1: 0.0 });
    for v in videos {
        n += 1;
        s.mof += v.mof;
        s.iou += v.iou;
        s.f1 += v.f1;
    }
    if n > 0 {
        let k = n as f64;
        s = Scores { mof: s.mof / k, iou: s.iou / k, f1: s.f1 / k };
    }
    (n, s)
}

fn group_row<'a>(group: String, videos: impl Iterator<Item = &'a VideoScore>) -> GroupRow {
    let (videos, s) = mean_scores(videos);
    GroupRow { group, videos, mof: s.mof, iou: s.iou, f1: s.f1 }
}

/// Nearest-rank quartile cut points of `values`.
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    [rank(0.25), rank(0.5), rank(0.75)]
}

impl MetricsReport {
    pub fn new(per_video: Vec<VideoScore>, failures: Vec<VideoFailure>) -> Self {
        let (videos, s) = mean_scores(per_video.iter());

        let mut counts: BTreeMap<usize, Vec<&VideoScore>> = BTreeMap::new();
        for v in &per_video {
            counts.entry(v.n_tasks).or_default().push(v);
        }
        let by_task_count = counts
            .into_iter()
            .map(|(n, vs)| group_row(format!("{n} tasks"), vs.into_iter()))
            .collect();

        let by_duration = if per_video.is_empty() {
            Vec::new()
        } else {
            let durations: Vec<f64> = per_video.iter().map(|v| v.duration_s).collect();
            let q = quartiles(&durations);
            let bucket = |d: f64| q.iter().position(|&c| d <= c).unwrap_or(3);
            (0..4)
                .filter_map(|b| {
                    let members: Vec<&VideoScore> = per_video.iter().filter(|v| bucket(v.duration_s) == b).collect();
                    if members.is_empty() {
                        return None;
                    }
                    let label = match b {
                        0 => format!("Q1 <= {:.1} s", q[0]),
                        3 => format!("Q4 > {:.1} s", q[2]),
                        _ => format!("Q{} {:.1}-{:.1} s", b + 1, q[b - 1], q[b]),
                    };
                    Some(group_row(label, members.into_iter()))
                })
                .collect()
        };

        Self {
            videos,
            mof: s.mof,
            iou: s.iou,
            f1: s.f1,
            per_video,
            by_task_count,
            by_duration,
            failures,
        }
    }
}

fn video_score(truth: &GroundTruthSegmentation, transitions: &[f64], failed_boundaries: usize) -> Result<VideoScore> {
    let s = score_transitions(transitions, truth)?;
    Ok(VideoScore {
        video_id: truth.video_id.clone(),
        n_tasks: truth.segments.len(),
        duration_s: truth.duration_s,
        mof: s.mof,
        iou: s.iou,
        f1: s.f1,
        failed_boundaries,
    })
}

/// Scores of the equal-split baseline.
pub fn baseline_report<'a>(truths: impl IntoIterator<Item = &'a GroundTruthSegmentation>) -> MetricsReport {
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for t in truths {
        let tr = uniform_baseline(t.duration_s, t.segments.len());
        match video_score(t, &tr, 0) {
            Ok(s) => scores.push(s),
            Err(e) => failures.push(VideoFailure { video_id: t.video_id.clone(), error: e.to_string() }),
        }
    }
    MetricsReport::new(scores, failures)
}

/// Picks the backend for one video. Oracles need that video's truth.
pub type BackendFor<'a> = dyn Fn(&DatasetItem) -> Result<SharedBackend> + Sync + 'a;

/// Extra knobs for [`evaluate`].
#[derive(Default)]
pub struct EvalOptions {
    /// Write each video's result record here as `<video_id>.json`.
    pub records_dir: Option<PathBuf>,
    pub timing: bool,
}

fn localize_item(item: &DatasetItem, config: &RunConfig, backend_for: &BackendFor<'_>, opts: &EvalOptions) -> Result<LocalizationRecord> {
    let video = VideoSource::open(&item.video_path)?;
    let params = config.search_params(video.frame_size()?)?;
    let backend = backend_for(item)?;
    let tasks = TaskSequence::new(item.truth.labels())?;
    let rec = localize(
        &video,
        &item.truth.video_id,
        &tasks,
        &params,
        backend.as_ref(),
        &LocalizeOptions { workers: 1, config: config.to_json(), timing: opts.timing },
    )?;
    if let Some(dir) = &opts.records_dir {
        rec.save(dir.join(format!("{}.json", item.truth.video_id)))?;
    }
    Ok(rec)
}

/// Localizes every video of `dataset` under `config` and scores the result.
/// Videos run in parallel on `config.workers` threads; a failing video is
/// recorded in the report instead of aborting the run.
pub fn evaluate(dataset: &Dataset, config: &RunConfig, backend_for: &BackendFor<'_>, opts: &EvalOptions) -> Result<MetricsReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<std::result::Result<VideoScore, VideoFailure>> = pool.install(|| {
        dataset
            .items
            .par_iter()
            .map(|item| {
                localize_item(item, config, backend_for, opts)
                    .and_then(|rec| {
                        let failed = rec
                            .boundaries
                            .iter()
                            .map(|b| b.start.failed as usize + b.end.failed as usize)
                            .sum();
                        video_score(&item.truth, &rec.transitions, failed)
                    })
                    .map_err(|e| {
                        log::warn!("{}: {e}", item.truth.video_id);
                        VideoFailure { video_id: item.truth.video_id.clone(), error: e.to_string() }
                    })
            })
            .collect()
    });

    let mut scores = Vec::new();
    let mut failures: Vec<VideoFailure> = dataset
        .problems
        .iter()
        .map(|p| VideoFailure { video_id: p.path.display().to_string(), error: p.message.clone() })
        .collect();
    for r in results {
        match r {
            Ok(s) => scores.push(s),
            Err(f) => failures.push(f),
        }
    }
    Ok(MetricsReport::new(scores, failures))
}

/// One configuration's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `baseline` or `tpivot`.
    pub method: String,
    pub grid: Option<GridShape>,
    pub style: Option<PromptStyle>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// The baseline row comes first.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.report.failures.len()).sum()
    }

    fn key(row: &SweepRow) -> [String; 3] {
        [
            row.method.clone(),
            row.grid.map(|g| g.to_string()).unwrap_or_default(),
            row.style.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }

    /// One line per configuration: method, grid, style, counts and scores.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "grid", "style", "videos", "failed", "mof", "iou", "f1"])?;
        for row in &self.rows {
            let r = &row.report;
            let [m, g, s] = Self::key(row);
            w.write_record([
                m,
                g,
                s,
                r.videos.to_string(),
                r.failures.len().to_string(),
                format!("{:.2}", r.mof),
                format!("{:.2}", r.iou),
                format!("{:.2}", r.f1),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Scores grouped by task count and by duration quartile, for plotting.
    pub fn write_groups_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "grid", "style", "grouping", "group", "videos", "mof", "iou", "f1"])?;
        for row in &self.rows {
            let [m, g, s] = Self::key(row);
            for (grouping, groups) in [("task_count", &row.report.by_task_count), ("duration", &row.report.by_duration)] {
                for gr in groups {
                    w.write_record([
                        m.clone(),
                        g.clone(),
                        s.clone(),
                        grouping.to_string(),
                        gr.group.clone(),
                        gr.videos.to_string(),
                        format!("{:.2}", gr.mof),
                        format!("{:.2}", gr.iou),
                        format!("{:.2}", gr.f1),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Writes `summary.csv`, `groups.csv` and `report.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join("summary.csv"))?;
        self.write_groups_csv(&dir.join("groups.csv"))?;
        self.write_json(&dir.join("report.json"))
    }
}

/// Evaluates every grid size and style combination plus the baseline.
pub fn sweep(
    dataset: &Dataset,
    base: &RunConfig,
    grids: &[GridShape],
    styles: &[PromptStyle],
    backend_for: &BackendFor<'_>,
    opts: &EvalOptions,
) -> Result<SweepReport> {
    let mut rows = vec![SweepRow {
        method: "baseline".into(),
        grid: None,
        style: None,
        report: baseline_report(dataset.items.iter().map(|i| &i.truth)),
    }];
    for &grid in grids {
        for &style in styles {
            let config = RunConfig { grid, style, ..base.clone() };
            let records_dir = opts.records_dir.as_ref().map(|d| d.join(format!("{grid}_{style}")));
            let sub = EvalOptions { records_dir, timing: opts.timing };
            log::info!("evaluating grid {grid} style {style}");
            rows.push(SweepRow {
                method: "tpivot".into(),
                grid: Some(grid),
                style: Some(style),
                report: evaluate(dataset, &config, backend_for, &sub)?,
            });
        }
    }
    Ok(SweepReport { rows })
}
