use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;

use tpivot_core::config::SharedBackend;
use tpivot_core::eval::{self, EvalOptions, SweepReport};
use tpivot_core::grid::{compose_grid, render_debug, GridShape, GridSpec, PromptStyle};
use tpivot_core::search::{sample_frames, TimeWindow};
use tpivot_core::synth::{generate_dataset, SynthParams};
use tpivot_core::{
    Dataset, DatasetItem, Error, FrameSource, GroundTruthSegmentation, LocalizeOptions, RunConfig,
    TaskSequence, VideoSource,
};

use crate::RunArgs;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

/// Backend failures exit with 2; everything else that stops a run with 1.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err.chain().any(|c| {
        matches!(c.downcast_ref::<Error>(), Some(Error::Vlm(_)) | Some(Error::Search(_)))
            || c.downcast_ref::<tpivot_core::VlmError>().is_some()
    });
    if backend {
        EXIT_BACKEND
    } else {
        EXIT_VALIDATION
    }
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = &args.backend {
        cfg.backend = b.parse()?;
    }
    if let Some(v) = args.canvas_px {
        cfg.canvas_px = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if args.until_frame_level {
        cfg.until_frame_level = true;
    }
    if let Some(v) = args.answer_retries {
        cfg.answer_retries = v;
    }
    if let Some(v) = args.split_segments {
        cfg.split_segments = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.noise_std {
        cfg.noise_std_s = v;
    }
    if let Some(v) = &args.replay_store {
        cfg.replay_store = Some(v.clone());
    }
    if let Some(v) = &args.record_store {
        cfg.record_store = Some(v.clone());
    }
    if let Some(v) = &args.endpoint {
        cfg.http.endpoint = v.clone();
    }
    if let Some(v) = &args.model {
        cfg.http.model = v.clone();
    }
    if let Some(v) = &args.api_key_env {
        cfg.http.api_key_env = v.clone();
    }
    Ok(cfg)
}

fn parse_list<T>(list: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = Error>,
{
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(anyhow::Error::from))
        .collect()
}

fn read_tasks(inline: Option<&str>, file: Option<&Path>, truth: Option<&GroundTruthSegmentation>) -> Result<TaskSequence> {
    if let Some(s) = inline {
        return Ok(s.parse()?);
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(TaskSequence::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))?);
    }
    if let Some(t) = truth {
        return Ok(TaskSequence::new(t.labels())?);
    }
    bail!(Error::Config("give the task list with --tasks, --tasks-file or --annotations".into()))
}

#[derive(Args)]
pub struct LocalizeArgs {
    /// Video file, or a directory of frames with a meta.json giving fps.
    video: PathBuf,
    /// Comma-separated task labels in order.
    #[arg(long)]
    tasks: Option<String>,
    /// File with one task label per line.
    #[arg(long)]
    tasks_file: Option<PathBuf>,
    /// Ground-truth annotation JSON (required by oracle backends).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Identifier stored in the result; defaults to the video file stem.
    #[arg(long)]
    video_id: Option<String>,
    /// Grid shape, e.g. 5x5.
    #[arg(long)]
    grid: Option<GridShape>,
    /// original, center or spacing.
    #[arg(long)]
    style: Option<PromptStyle>,
    /// Result file (default: <output_dir>/<video_id>.json).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Dump every grid and label map shown to the backend into this directory.
    #[arg(long)]
    debug_grids: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

pub fn localize(a: LocalizeArgs) -> Result<ExitCode> {
    let mut cfg = run_config(&a.run)?;
    if let Some(g) = a.grid {
        cfg.grid = g;
    }
    if let Some(s) = a.style {
        cfg.style = s;
    }
    cfg.validate()?;

    let truth = a.annotations.as_ref().map(GroundTruthSegmentation::load).transpose()?;
    let tasks = read_tasks(a.tasks.as_deref(), a.tasks_file.as_deref(), truth.as_ref())?;
    let backend: SharedBackend = if cfg.backend.is_oracle() {
        let truth = truth
            .as_ref()
            .ok_or_else(|| Error::Config(format!("backend {} needs --annotations", cfg.backend)))?;
        if truth.segments.len() != tasks.len() {
            bail!(Error::Config(format!(
                "{} tasks given but the annotations have {} segments",
                tasks.len(),
                truth.segments.len()
            )));
        }
        cfg.oracle_backend(truth)?
    } else {
        cfg.shared_backend()?
    };

    let video = VideoSource::open(&a.video)?;
    let video_id = a
        .video_id
        .or_else(|| truth.as_ref().map(|t| t.video_id.clone()))
        .unwrap_or_else(|| a.video.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let mut params = cfg.search_params(video.frame_size()?)?;
    params.debug_dir = a.debug_grids.clone();

    let rec = tpivot_core::localize(
        &video,
        &video_id,
        &tasks,
        &params,
        backend.as_ref(),
        &LocalizeOptions {
            workers: cfg.workers,
            config: cfg.to_json(),
            timing: a.run.timing,
        },
    )?;

    let out = a.out.unwrap_or_else(|| {
        cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(format!("{video_id}.json"))
    });
    rec.save(&out)?;
    for (i, t) in rec.transitions.iter().enumerate() {
        println!("{} -> {}: {t:.3} s", tasks.labels()[i], tasks.labels()[i + 1]);
    }
    eprintln!("wrote {}", out.display());

    if rec.any_failed() {
        for b in &rec.boundaries {
            for (what, s) in [("start", &b.start), ("end", &b.end)] {
                if let Some(e) = &s.error {
                    eprintln!("task {} {what}: {e} (used baseline {:.3} s)", b.task, s.time_s);
                }
            }
        }
        return Ok(ExitCode::from(EXIT_BACKEND));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory of <id>.json annotations next to <id>/ frame dirs or <id>.<ext> videos.
    dataset: PathBuf,
    /// Comma-separated grid shapes, e.g. 2x2,3x3,5x5.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated styles: original,center,spacing.
    #[arg(long)]
    style: Option<String>,
    /// Output directory for summary.csv, groups.csv, report.json and records/.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

pub fn evaluate(a: EvaluateArgs, sweep_defaults: bool) -> Result<ExitCode> {
    let cfg = run_config(&a.run)?;
    cfg.validate()?;
    let grids: Vec<GridShape> = match &a.grid {
        Some(list) => parse_list(list)?,
        None if sweep_defaults => (2..=6).map(|n| GridShape::new(n, n)).collect(),
        None => vec![cfg.grid],
    };
    let styles: Vec<PromptStyle> = match &a.style {
        Some(list) => parse_list(list)?,
        None if sweep_defaults => PromptStyle::ALL.to_vec(),
        None => vec![cfg.style],
    };
    for &grid in &grids {
        RunConfig { grid, ..cfg.clone() }.validate()?;
    }

    let shared = if cfg.backend.is_oracle() { None } else { Some(cfg.shared_backend()?) };
    let factory = |item: &DatasetItem| -> tpivot_core::Result<SharedBackend> {
        match &shared {
            Some(b) => Ok(b.clone()),
            None => cfg.oracle_backend(&item.truth),
        }
    };

    let dataset = Dataset::load(&a.dataset)?;
    for p in &dataset.problems {
        log::warn!("{}: {}", p.path.display(), p.message);
    }
    let out = a
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tpivot-eval"));
    let opts = EvalOptions {
        records_dir: Some(out.join("records")),
        timing: a.run.timing,
    };
    let report = eval::sweep(&dataset, &cfg, &grids, &styles, &factory, &opts)?;
    report.write_all(&out)?;
    print_table(&report);
    eprintln!("wrote {}", out.display());

    if report.failures() > 0 {
        eprintln!("{} video runs failed; see report.json", report.failures());
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_table(report: &SweepReport) {
    println!("{:<9} {:<5} {:<9} {:>6} {:>7} {:>7} {:>7}", "method", "grid", "style", "videos", "MoF", "IoU", "F1");
    for row in &report.rows {
        let r = &row.report;
        println!(
            "{:<9} {:<5} {:<9} {:>6} {:>7.2} {:>7.2} {:>7.2}",
            row.method,
            row.grid.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
            row.style.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            r.videos,
            r.mof,
            r.iou,
            r.f1
        );
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    videos: usize,
    #[arg(long, default_value_t = 2.0)]
    fps: f64,
    #[arg(long, default_value_t = 3)]
    min_tasks: usize,
    #[arg(long, default_value_t = 6)]
    max_tasks: usize,
    #[arg(long, default_value_t = 30.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 120.0)]
    max_duration: f64,
    #[arg(long, default_value_t = 160)]
    width: u32,
    #[arg(long, default_value_t = 120)]
    height: u32,
    /// Split every video into equal-length segments.
    #[arg(long)]
    uniform: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let params = SynthParams {
        videos: a.videos,
        fps: a.fps,
        min_tasks: a.min_tasks,
        max_tasks: a.max_tasks,
        min_duration_s: a.min_duration,
        max_duration_s: a.max_duration,
        frame_size: (a.width, a.height),
        uniform: a.uniform,
        seed: a.seed,
    };
    let truths = generate_dataset(&a.out, &params)?;
    eprintln!("wrote {} videos to {}", truths.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Label file with `start-end label` lines (1-based inclusive frames).
    input: PathBuf,
    #[arg(long)]
    fps: f64,
    /// Defaults to the input file stem.
    #[arg(long)]
    video_id: Option<String>,
    /// Defaults to the input path with a .json extension.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn convert(a: ConvertArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let id = a
        .video_id
        .unwrap_or_else(|| a.input.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let truth = GroundTruthSegmentation::from_breakfast(&text, &id, a.fps)?;
    let out = a.out.unwrap_or_else(|| a.input.with_extension("json"));
    truth.save(&out)?;
    eprintln!("wrote {} segments to {}", truth.segments.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct DumpGridArgs {
    video: PathBuf,
    /// Window centre in seconds (default: middle of the video).
    #[arg(long)]
    center: Option<f64>,
    /// Window width in seconds (default: whole video).
    #[arg(long)]
    width: Option<f64>,
    #[arg(long, default_value = "5x5")]
    grid: GridShape,
    #[arg(long, default_value = "original")]
    style: PromptStyle,
    #[arg(long, default_value_t = tpivot_core::grid::DEFAULT_CANVAS_PX)]
    canvas_px: u32,
    /// Output path; `.png` and `.json` are written next to each other.
    #[arg(short, long)]
    out: PathBuf,
}

pub fn dump_grid(a: DumpGridArgs) -> Result<ExitCode> {
    let video = VideoSource::open(&a.video)?;
    let d = video.duration_s();
    let win = TimeWindow::new(a.center.unwrap_or(d / 2.0), a.width.unwrap_or(d), d)?;
    let spec = GridSpec::fit(a.grid, a.style, a.canvas_px, video.frame_size()?)?;
    let frames = sample_frames(&video, &win, spec.cells()).map_err(|e| Error::Validation(e.to_string()))?;
    let grid = compose_grid(&frames, &spec)?;
    let (png, json) = render_debug(&grid, &a.out)?;
    for (label, t) in grid.label_map.iter() {
        println!("{label}\t{t:.3}");
    }
    eprintln!("wrote {} and {}", png.display(), json.display());
    Ok(ExitCode::SUCCESS)
}
