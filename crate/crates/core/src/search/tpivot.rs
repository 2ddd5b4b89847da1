use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sampling::{sample_frames, SampleError, SampleOrVideoError, TimeWindow};
use super::transitions::uniform_baseline;
use crate::error::{Error, Result};
use crate::grid::{compose_grid, render_debug, FrameGrid, GridSpec};
use crate::prompt::{build_prompt, Boundary, PromptRequest, PromptTemplates, TaskSequence};
use crate::video::FrameSource;
use crate::vlm::{VlmBackend, VlmError, VlmQuery};

pub const DEFAULT_ITERATIONS: u32 = 4;
pub const MAX_ITERATIONS: u32 = 16;
pub const DEFAULT_ANSWER_RETRIES: u32 = 3;
pub const DEFAULT_WORKERS: usize = 4;

/// Knobs for one boundary search.
///
/// A search makes one pass over its initial window and then `iterations`
/// narrowing passes, each at half the previous width. The last pass thus
/// samples a window `initial / 2^iterations` wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub grid: GridSpec,
    pub iterations: u32,
    /// Keep narrowing until consecutive frames are sampled (capped at
    /// [`MAX_ITERATIONS`]).
    pub until_frame_level: bool,
    /// Re-asks after an unparseable or empty reply before falling back to
    /// the grid's centre label.
    pub answer_retries: u32,
    /// Search each of this many equal slices of the video separately and
    /// keep the earliest slice whose estimate lands inside it. 1 disables.
    pub split_segments: u32,
    pub templates: PromptTemplates,
    /// Directory to dump every grid and its label map into.
    #[serde(skip)]
    pub debug_dir: Option<PathBuf>,
}

impl SearchParams {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            iterations: DEFAULT_ITERATIONS,
            until_frame_level: false,
            answer_retries: DEFAULT_ANSWER_RETRIES,
            split_segments: 1,
            templates: PromptTemplates::default(),
            debug_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return Err(Error::Config(format!(
                "iterations must be in 1..={MAX_ITERATIONS}, got {}",
                self.iterations
            )));
        }
        if self.grid.cells() < 4 {
            return Err(Error::Config(format!(
                "grid has {} cells; at least 4 are needed for the window to keep the boundary",
                self.grid.cells()
            )));
        }
        if self.split_segments == 0 {
            return Err(Error::Config("split_segments must be >= 1".into()));
        }
        self.templates.validate()
    }

    pub fn passes(&self) -> u32 {
        self.iterations + 1
    }
}

/// One pass of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub center_s: f64,
    pub width_s: f64,
    pub chosen_label: u32,
    pub chosen_time_s: f64,
    /// Every valid label the backend listed.
    pub points: Vec<u32>,
    /// The backend never answered usably; the centre label was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    /// 1-based.
    pub task_index: usize,
    pub boundary: Boundary,
    pub time_s: f64,
    pub trace: Vec<TraceStep>,
    /// The window became too narrow to sample before all passes ran.
    pub early_stop: bool,
}

impl BoundaryEstimate {
    pub fn used_fallback(&self) -> bool {
        self.trace.iter().any(|s| s.fallback)
    }
}

#[derive(Debug, Error)]
pub enum SearchFailure {
    #[error(transparent)]
    Backend(#[from] VlmError),
    #[error("{0}")]
    Video(String),
}

/// A search that could not finish, with the passes completed before it failed.
#[derive(Debug, Error)]
#[error("search for {boundary} of task {task} failed after {} passes: {cause}", trace.len())]
pub struct SearchError {
    pub task: usize,
    pub boundary: Boundary,
    pub cause: SearchFailure,
    pub trace: Vec<TraceStep>,
}

impl SearchError {
    pub fn is_backend(&self) -> bool {
        matches!(self.cause, SearchFailure::Backend(_))
    }
}

struct SearchCtx<'a> {
    video: &'a dyn FrameSource,
    tasks: &'a TaskSequence,
    focus: usize,
    boundary: Boundary,
    params: &'a SearchParams,
    backend: &'a dyn VlmBackend,
}

impl SearchCtx<'_> {
    fn fail(&self, cause: SearchFailure, trace: Vec<TraceStep>) -> SearchError {
        SearchError {
            task: self.focus,
            boundary: self.boundary,
            cause,
            trace,
        }
    }

    /// Asks for a label, re-asking on unusable replies.
    fn choose(&self, grid: &FrameGrid, prompt: &str) -> Result<(u32, Vec<u32>, bool), VlmError> {
        let query = VlmQuery {
            grid,
            prompt,
            task_focus: self.focus,
            boundary: self.boundary,
        };
        for attempt in 0..=self.params.answer_retries {
            match self.backend.query(&query) {
                Ok(ans) => return Ok((ans.selected, ans.points, false)),
                Err(e) if e.is_answer_error() => {
                    log::debug!("task {} {}: unusable reply (attempt {}): {e}", self.focus, self.boundary, attempt + 1);
                }
                Err(e) => return Err(e),
            }
        }
        log::warn!("task {} {}: no usable reply, taking centre label", self.focus, self.boundary);
        Ok((grid.label_map.center_label(), Vec::new(), true))
    }

    fn run(&self, initial: TimeWindow, tag: &str) -> std::result::Result<BoundaryEstimate, SearchError> {
        let prompt = build_prompt(
            &PromptRequest {
                tasks: self.tasks,
                focus: self.focus,
                boundary: self.boundary,
            },
            &self.params.templates,
        )
        .map_err(|e| self.fail(SearchFailure::Video(e.to_string()), Vec::new()))?;

        let n = self.params.grid.cells();
        let frame_period = 1.0 / self.video.fps();
        let max_passes = if self.params.until_frame_level {
            MAX_ITERATIONS.max(self.params.iterations) + 1
        } else {
            self.params.passes()
        };

        let mut win = initial;
        let mut trace: Vec<TraceStep> = Vec::new();
        let mut early_stop = false;
        for pass in 0..max_passes {
            if pass >= self.params.passes() {
                let (lo, hi) = win.effective_range();
                let prev_spacing = trace
                    .last()
                    .map(|s| (s.window_end_s - s.window_start_s) / (n - 1) as f64)
                    .unwrap_or(f64::INFINITY);
                if prev_spacing <= frame_period || hi <= lo {
                    break;
                }
            }

            let frames = match sample_frames(self.video, &win, n) {
                Ok(f) => f,
                Err(SampleOrVideoError::Sample(SampleError::Degenerate { .. })) => {
                    early_stop = true;
                    break;
                }
                Err(e) => return Err(self.fail(SearchFailure::Video(e.to_string()), trace)),
            };
            let grid = compose_grid(&frames, &self.params.grid)
                .map_err(|e| self.fail(SearchFailure::Video(e.to_string()), trace.clone()))?;

            if let Some(dir) = &self.params.debug_dir {
                let name = format!("task{:02}_{}{tag}_pass{pass}", self.focus, self.boundary);
                if let Err(e) = render_debug(&grid, dir.join(name)) {
                    log::warn!("could not write debug grid: {e}");
                }
            }

            let (label, points, fallback) = self
                .choose(&grid, &prompt)
                .map_err(|e| self.fail(SearchFailure::Backend(e), trace.clone()))?;
            let chosen = grid.label_map.time_of(label).expect("answer validated against label map");
            let (lo, hi) = win.effective_range();
            trace.push(TraceStep {
                window_start_s: lo,
                window_end_s: hi,
                center_s: win.center_s,
                width_s: win.width_s,
                chosen_label: label,
                chosen_time_s: chosen,
                points,
                fallback,
            });
            win = win.narrowed(chosen);
        }

        Ok(BoundaryEstimate {
            task_index: self.focus,
            boundary: self.boundary,
            time_s: win.center_s.clamp(0.0, self.video.duration_s()),
            trace,
            early_stop,
        })
    }

    /// Splits `[lo, hi]` along the video's equal slices and keeps the
    /// earliest slice whose estimate lands strictly inside it.
    fn run_split(&self, lo: f64, hi: f64) -> std::result::Result<BoundaryEstimate, SearchError> {
        let duration = self.video.duration_s();
        let splits = self.params.split_segments as usize;
        let n = self.params.grid.cells();
        let window = |a: f64, b: f64| {
            TimeWindow::spanning(a, b, duration).map_err(|e| self.fail(SearchFailure::Video(e.to_string()), Vec::new()))
        };

        for s in 0..splits {
            let a = (s as f64 * duration / splits as f64).max(lo);
            let b = ((s + 1) as f64 * duration / splits as f64).min(hi);
            if b - a < 1.0 / self.video.fps() {
                continue;
            }
            let est = self.run(window(a, b)?, &format!("_split{s}"))?;
            let margin = est
                .trace
                .last()
                .map(|st| (st.window_end_s - st.window_start_s) / (n - 1) as f64)
                .unwrap_or(0.0);
            let inside_lo = a <= lo || est.time_s > a + margin;
            let inside_hi = b >= hi || est.time_s < b - margin;
            if inside_lo && inside_hi {
                return Ok(est);
            }
        }
        self.run(window(lo, hi)?, "")
    }
}

/// Locates one boundary of task `focus` (1-based) starting from `initial`.
pub fn tpivot_search(
    video: &dyn FrameSource,
    tasks: &TaskSequence,
    focus: usize,
    boundary: Boundary,
    params: &SearchParams,
    backend: &dyn VlmBackend,
    initial: TimeWindow,
) -> std::result::Result<BoundaryEstimate, SearchError> {
    SearchCtx {
        video,
        tasks,
        focus,
        boundary,
        params,
        backend,
    }
    .run(initial, "")
}

/// Result of one boundary search plus the time actually used downstream.
#[derive(Debug)]
pub struct BoundaryOutcome {
    /// The estimate, or the uniform-baseline position if the search failed.
    pub time_s: f64,
    pub result: std::result::Result<BoundaryEstimate, SearchError>,
}

impl BoundaryOutcome {
    fn new(result: std::result::Result<BoundaryEstimate, SearchError>, baseline_s: f64) -> Self {
        let time_s = result.as_ref().map_or(baseline_s, |e| e.time_s);
        Self { time_s, result }
    }

    pub fn failed(&self) -> bool {
        self.result.is_err()
    }
}

#[derive(Debug)]
pub struct TaskBoundaries {
    pub starts: Vec<BoundaryOutcome>,
    pub ends: Vec<BoundaryOutcome>,
}

/// Runs every task's start search and then its end search (from the found
/// start to the end of the video) on a pool of `workers` threads. Output is
/// ordered by task regardless of completion order.
pub fn localize_tasks_parallel(
    video: &dyn FrameSource,
    tasks: &TaskSequence,
    params: &SearchParams,
    backend: &dyn VlmBackend,
    workers: usize,
) -> Result<TaskBoundaries> {
    params.validate()?;
    let duration = video.duration_s();
    let n_tasks = tasks.len();
    let mut cuts = vec![0.0];
    cuts.extend(uniform_baseline(duration, n_tasks));
    cuts.push(duration);

    let per_task = |focus: usize| {
        let ctx = |boundary| SearchCtx {
            video,
            tasks,
            focus,
            boundary,
            params,
            backend,
        };
        let start_ctx = ctx(Boundary::Start);
        let start = if params.split_segments > 1 {
            start_ctx.run_split(0.0, duration)
        } else {
            TimeWindow::full(duration)
                .map_err(|e| start_ctx.fail(SearchFailure::Video(e.to_string()), Vec::new()))
                .and_then(|w| start_ctx.run(w, ""))
        };
        if let Err(e) = &start {
            log::warn!("{e}");
        }
        let start = BoundaryOutcome::new(start, cuts[focus - 1]);

        let end_ctx = ctx(Boundary::End);
        let end = if params.split_segments > 1 {
            end_ctx.run_split(start.time_s, duration)
        } else {
            TimeWindow::spanning(start.time_s, duration, duration)
                .map_err(|e| end_ctx.fail(SearchFailure::Video(e.to_string()), Vec::new()))
                .and_then(|w| end_ctx.run(w, ""))
        };
        if let Err(e) = &end {
            log::warn!("{e}");
        }
        (start, BoundaryOutcome::new(end, cuts[focus]))
    };

    let per_task: Vec<(BoundaryOutcome, BoundaryOutcome)> = if workers <= 1 {
        (1..=n_tasks).map(per_task).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (1..=n_tasks).into_par_iter().map(per_task).collect())
    };

    let (starts, ends) = per_task.into_iter().unzip();
    Ok(TaskBoundaries { starts, ends })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{GroundTruthSegmentation, Segment};
    use crate::grid::{AnnotationStyle, GridShape};
    use crate::synth::SyntheticVideo;
    use crate::vlm::OracleBackend;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn params(rows: u32, cols: u32, iterations: u32) -> SearchParams {
        let grid = GridSpec::new(GridShape::new(rows, cols), (8, 6), AnnotationStyle::CornerCircle, 0).unwrap();
        SearchParams {
            iterations,
            ..SearchParams::new(grid)
        }
    }

    fn truth(duration: f64, fps: f64, cuts: &[f64]) -> GroundTruthSegmentation {
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(cuts);
        bounds.push(duration);
        let segments = bounds
            .windows(2)
            .enumerate()
            .map(|(i, w)| Segment { label: format!("task{i}"), start_s: w[0], end_s: w[1] })
            .collect();
        GroundTruthSegmentation::new("t", fps, duration, segments).unwrap()
    }

    fn tasks(n: usize) -> TaskSequence {
        TaskSequence::new((0..n).map(|i| format!("task{i}"))).unwrap()
    }

    /// Independent model of the search: continuous time, no frames, no grid.
    /// Returns the worst error over many truths for the given setup.
    fn simulated_worst_error(w0: f64, n: usize, iterations: u32, truths: &[f64]) -> f64 {
        truths
            .iter()
            .map(|&truth| {
                let (mut c, mut w) = (w0 / 2.0, w0);
                for _ in 0..=iterations {
                    let lo = (c - w / 2.0).max(0.0);
                    let hi = (c + w / 2.0).min(w0);
                    let pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
                    c = pts
                        .iter()
                        .copied()
                        .min_by(|a, b| (a - truth).abs().total_cmp(&(b - truth).abs()))
                        .unwrap();
                    w /= 2.0;
                }
                (c - truth).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn simulation_confirms_error_bound() {
        // Worst case over a dense sweep of truths stays within
        // (W0 / 2^K) / (2 (n - 1)) for the continuous model.
        for (w0, n) in [(16.0, 16usize), (16.0, 9), (100.0, 25), (37.0, 4)] {
            let truths: Vec<f64> = (0..=4000).map(|i| w0 * i as f64 / 4000.0).collect();
            let worst = simulated_worst_error(w0, n, 4, &truths);
            let bound = (w0 / 16.0) / (2.0 * (n - 1) as f64);
            assert!(worst <= bound + 1e-9, "w0={w0} n={n}: {worst} > {bound}");
            assert!(worst > 0.8 * bound, "bound is loose: {worst} vs {bound}");
        }
    }

    #[test]
    fn converges_on_known_start() {
        let gt = truth(16.0, 10.0, &[5.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let est = tpivot_search(
            &video,
            &tasks(2),
            2,
            Boundary::Start,
            &params(4, 4, 4),
            &oracle,
            TimeWindow::full(16.0).unwrap(),
        )
        .unwrap();
        assert!((est.time_s - 5.0).abs() <= 0.067, "{}", est.time_s);
        assert_eq!(est.trace.len(), 5);
        assert!(!est.early_stop);
        for (j, step) in est.trace.iter().enumerate() {
            assert_eq!(step.width_s, 16.0 / 2f64.powi(j as i32));
        }
    }

    #[test]
    fn one_iteration_picks_nearest_sample() {
        let gt = truth(16.0, 10.0, &[5.37]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let est = tpivot_search(
            &video,
            &tasks(2),
            2,
            Boundary::Start,
            &params(3, 3, 1),
            &oracle,
            TimeWindow::full(16.0).unwrap(),
        )
        .unwrap();
        let last = est.trace.last().unwrap();
        let nearest = crate::search::sample_indices(
            &video,
            &TimeWindow::new(last.center_s, last.width_s, 16.0).unwrap(),
            9,
        )
        .unwrap()
        .into_iter()
        .map(|i| i as f64 / 10.0)
        .min_by(|a, b| (a - 5.37).abs().total_cmp(&(b - 5.37).abs()))
        .unwrap();
        assert_eq!(est.time_s, nearest);
    }

    #[test]
    fn boundary_at_video_start() {
        let gt = truth(16.0, 10.0, &[8.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let p = params(3, 3, 4);
        let est =
            tpivot_search(&video, &tasks(2), 1, Boundary::Start, &p, &oracle, TimeWindow::full(16.0).unwrap())
                .unwrap();
        assert!(est.time_s >= 0.0);
        assert!(est.time_s <= (16.0 / 16.0) / 2.0, "{}", est.time_s);
    }

    #[test]
    fn degenerate_end_window_stops_early() {
        let gt = truth(16.0, 10.0, &[8.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let est = tpivot_search(
            &video,
            &tasks(2),
            2,
            Boundary::End,
            &params(2, 2, 4),
            &oracle,
            TimeWindow::spanning(16.0, 16.0, 16.0).unwrap(),
        )
        .unwrap();
        assert!(est.early_stop);
        assert!(est.trace.is_empty());
        assert_eq!(est.time_s, 16.0);
    }

    #[test]
    fn until_frame_level_reaches_consecutive_frames() {
        let gt = truth(60.0, 10.0, &[21.33]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let p = SearchParams { until_frame_level: true, ..params(3, 3, 2) };
        let est =
            tpivot_search(&video, &tasks(2), 2, Boundary::Start, &p, &oracle, TimeWindow::full(60.0).unwrap())
                .unwrap();
        assert!(est.trace.len() > 3);
        assert!((est.time_s - 21.33).abs() <= 0.05 + 1e-9, "{}", est.time_s);
    }

    struct Garbage(AtomicUsize);

    impl VlmBackend for Garbage {
        fn id(&self) -> String {
            "garbage".into()
        }
        fn query_raw(&self, _: &VlmQuery<'_>) -> std::result::Result<String, VlmError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("no idea".into())
        }
    }

    #[test]
    fn unusable_replies_fall_back_to_centre() {
        let gt = truth(16.0, 10.0, &[5.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let backend = Garbage(AtomicUsize::new(0));
        let p = params(3, 3, 1);
        let est =
            tpivot_search(&video, &tasks(2), 1, Boundary::Start, &p, &backend, TimeWindow::full(16.0).unwrap())
                .unwrap();
        assert!(est.used_fallback());
        assert_eq!(est.trace[0].chosen_label, 5);
        assert_eq!(backend.0.load(Ordering::SeqCst), 2 * 4);
    }

    struct Down;

    impl VlmBackend for Down {
        fn id(&self) -> String {
            "down".into()
        }
        fn query_raw(&self, _: &VlmQuery<'_>) -> std::result::Result<String, VlmError> {
            Err(VlmError::Status { status: 503, body: "unavailable".into() })
        }
    }

    #[test]
    fn backend_failure_isolated_per_task() {
        let gt = truth(30.0, 10.0, &[10.0, 20.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let res = localize_tasks_parallel(&video, &tasks(3), &params(3, 3, 2), &Down, 2).unwrap();
        assert!(res.starts.iter().all(|o| o.failed()));
        let times: Vec<f64> = res.starts.iter().map(|o| o.time_s).collect();
        assert_eq!(times, vec![0.0, 10.0, 20.0]);
        let ends: Vec<f64> = res.ends.iter().map(|o| o.time_s).collect();
        assert_eq!(ends, vec![10.0, 20.0, 30.0]);
        let err = res.starts[0].result.as_ref().unwrap_err();
        assert!(err.is_backend());
        assert!(err.trace.is_empty());
    }

    #[test]
    fn single_task_spans_video() {
        let gt = truth(20.0, 10.0, &[]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let res = localize_tasks_parallel(&video, &tasks(1), &params(4, 4, 4), &oracle, 1).unwrap();
        let final_half = (20.0 / 16.0) / 2.0;
        assert!(res.starts[0].time_s <= final_half);
        assert!((20.0 - res.ends[0].time_s) <= final_half + 0.1);
    }

    #[test]
    fn starts_increase_over_random_segmentations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let duration = rng.gen_range(30.0..200.0f64).round();
            let mut cuts: Vec<f64> = (0..2).map(|_| (rng.gen_range(0.15..0.85) * duration * 10.0).round() / 10.0).collect();
            cuts.sort_by(f64::total_cmp);
            if cuts[1] - cuts[0] < 0.1 * duration {
                continue;
            }
            let gt = truth(duration, 10.0, &cuts);
            let video = SyntheticVideo::from_truth(&gt, (8, 6));
            let oracle = OracleBackend::exact(gt);
            let res = localize_tasks_parallel(&video, &tasks(3), &params(3, 3, 4), &oracle, 3).unwrap();
            let starts: Vec<f64> = res.starts.iter().map(|o| o.time_s).collect();
            let ends: Vec<f64> = res.ends.iter().map(|o| o.time_s).collect();
            let est = crate::search::estimate_transitions(&starts, &ends).unwrap();
            assert!(est.starts.windows(2).all(|w| w[0] < w[1]), "{:?}", est.starts);
        }
    }

    #[test]
    fn split_search_finds_boundary_in_its_slice() {
        let gt = truth(100.0, 10.0, &[37.0, 71.0]);
        let video = SyntheticVideo::from_truth(&gt, (8, 6));
        let oracle = OracleBackend::exact(gt);
        let p = SearchParams { split_segments: 10, ..params(3, 3, 3) };
        let res = localize_tasks_parallel(&video, &tasks(3), &p, &oracle, 2).unwrap();
        let starts: Vec<f64> = res.starts.iter().map(|o| o.time_s).collect();
        assert!((starts[1] - 37.0).abs() < 0.2, "{starts:?}");
        assert!((starts[2] - 71.0).abs() < 0.2, "{starts:?}");
        let ends: Vec<f64> = res.ends.iter().map(|o| o.time_s).collect();
        assert!((ends[0] - 37.0).abs() < 0.2, "{ends:?}");
    }

    #[test]
    fn params_validation() {
        assert!(params(2, 2, 4).validate().is_ok());
        assert!(params(1, 3, 4).validate().is_err());
        assert!(params(3, 3, 0).validate().is_err());
        assert!(params(3, 3, 17).validate().is_err());
    }
}
