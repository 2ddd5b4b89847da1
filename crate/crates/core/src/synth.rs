//! Procedural test videos: each task is a solid colour with its label drawn on top.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{GroundTruthSegmentation, Segment};
use crate::error::{Error, Result};
use crate::text::{draw_text, text_size};
use crate::video::{write_frame_dir, FrameSource};

const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
    [0, 0, 128],
];

const VOCABULARY: [&str; 16] = [
    "take bowl",
    "pour cereals",
    "pour milk",
    "stir",
    "crack egg",
    "fry egg",
    "take plate",
    "put egg on plate",
    "cut bun",
    "smear butter",
    "pick up cup",
    "pour coffee",
    "add sugar",
    "spoon powder",
    "grasp",
    "place",
];

/// Colour for the `task`-th segment (0-based). Distinct for the first 12.
pub fn palette(task: usize) -> Rgb<u8> {
    if task < PALETTE.len() {
        return Rgb(PALETTE[task]);
    }
    // Walk the hue circle by the golden angle for anything beyond the table.
    let h = (task as f64 * 137.508).rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    Rgb([(r * 200.0) as u8 + 30, (g * 200.0) as u8 + 30, (b * 200.0) as u8 + 30])
}

#[derive(Debug, Clone)]
struct Span {
    end_frame: usize,
    label: String,
}

/// An in-memory video whose frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    fps: f64,
    frame_count: usize,
    size: (u32, u32),
    spans: Vec<Span>,
}

impl SyntheticVideo {
    /// Frame `f` shows the task whose segment contains `f / fps`.
    pub fn from_truth(truth: &GroundTruthSegmentation, size: (u32, u32)) -> Self {
        let frame_count = ((truth.duration_s * truth.fps).round() as usize).max(1);
        let transitions = truth.transitions();
        let spans = truth
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let end_frame = match transitions.get(i) {
                    Some(t) => (0..frame_count).find(|&f| f as f64 / truth.fps >= *t).unwrap_or(frame_count),
                    None => frame_count,
                };
                Span {
                    end_frame,
                    label: s.label.clone(),
                }
            })
            .collect();
        Self {
            fps: truth.fps,
            frame_count,
            size,
            spans,
        }
    }

    /// `n_tasks` equal-length segments.
    pub fn uniform_colors(duration_s: f64, fps: f64, n_tasks: usize, size: (u32, u32)) -> Self {
        let truth = uniform_truth("uniform", duration_s, fps, n_tasks).expect("valid uniform segmentation");
        Self::from_truth(&truth, size)
    }

    /// 0-based task index shown in frame `index`.
    pub fn task_at(&self, index: usize) -> usize {
        self.spans.iter().position(|s| index < s.end_frame).unwrap_or(self.spans.len() - 1)
    }

    fn render(&self, index: usize) -> RgbImage {
        let task = self.task_at(index);
        let (w, h) = self.size;
        let mut img = RgbImage::from_pixel(w, h, palette(task));
        let label = &self.spans[task].label;
        let scale = (w / 160).max(1);
        let (tw, th) = text_size(label, scale);
        if tw <= w && th * 2 <= h {
            let x = (w - tw) / 2;
            let y = (h - th) / 2;
            draw_text(&mut img, x as i64, y as i64, scale, Rgb([255, 255, 255]), label);
        }
        img
    }
}

impl FrameSource for SyntheticVideo {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn frame_size(&self) -> Result<(u32, u32)> {
        Ok(self.size)
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        if index >= self.frame_count {
            return Err(Error::OutOfRange {
                t: index as f64 / self.fps,
                duration_s: self.duration_s(),
            });
        }
        Ok(self.render(index))
    }
}

/// Equal segments named `task 1`, `task 2`, ...
pub fn uniform_truth(video_id: &str, duration_s: f64, fps: f64, n_tasks: usize) -> Result<GroundTruthSegmentation> {
    if n_tasks == 0 {
        return Err(Error::Validation("need at least one task".into()));
    }
    let segments = (0..n_tasks)
        .map(|i| Segment {
            label: format!("task {}", i + 1),
            start_s: i as f64 * duration_s / n_tasks as f64,
            end_s: (i + 1) as f64 * duration_s / n_tasks as f64,
        })
        .collect();
    GroundTruthSegmentation::new(video_id, fps, duration_s, segments)
}

/// Settings for [`generate_truths`] and [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub videos: usize,
    pub fps: f64,
    pub min_tasks: usize,
    pub max_tasks: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub frame_size: (u32, u32),
    /// Make every segment the same length.
    pub uniform: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            videos: 10,
            fps: 2.0,
            min_tasks: 3,
            max_tasks: 6,
            min_duration_s: 30.0,
            max_duration_s: 120.0,
            frame_size: (160, 120),
            uniform: false,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be > 0, got {}", self.fps));
        }
        if self.min_tasks == 0 || self.min_tasks > self.max_tasks {
            return bad(format!("bad task range {}..={}", self.min_tasks, self.max_tasks));
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return bad(format!("bad duration range {}..={}", self.min_duration_s, self.max_duration_s));
        }
        let min_frames = (self.min_duration_s * self.fps).round() as usize;
        if min_frames < 2 * self.max_tasks {
            return bad(format!(
                "{min_frames} frames cannot hold {} tasks of at least two frames",
                self.max_tasks
            ));
        }
        if self.frame_size.0 == 0 || self.frame_size.1 == 0 {
            return bad("frame size must be non-zero".into());
        }
        Ok(())
    }
}

/// Random segmentation with frame-aligned boundaries.
pub fn random_truth(rng: &mut impl Rng, video_id: &str, params: &SynthParams) -> Result<GroundTruthSegmentation> {
    let n = rng.gen_range(params.min_tasks..=params.max_tasks);
    let duration = rng.gen_range(params.min_duration_s..=params.max_duration_s);
    let mut count = ((duration * params.fps).round() as usize).max(2 * n);
    if params.uniform {
        count = count.div_ceil(n) * n;
    }

    let weights: Vec<f64> = if params.uniform {
        vec![1.0; n]
    } else {
        (0..n).map(|_| rng.gen_range(0.3..1.0)).collect()
    };
    let total: f64 = weights.iter().sum();
    let mut cuts = Vec::with_capacity(n + 1);
    cuts.push(0usize);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate().take(n - 1) {
        acc += w;
        let ideal = if params.uniform { (i + 1) * count / n } else { (acc / total * count as f64).round() as usize };
        // Leave at least two frames for this and every remaining segment.
        let lo = cuts[i] + 2;
        let hi = count - 2 * (n - 1 - i);
        cuts.push(ideal.clamp(lo, hi));
    }
    cuts.push(count);

    let fps = params.fps;
    let segments = cuts
        .windows(2)
        .map(|w| Segment {
            label: VOCABULARY.choose(rng).unwrap().to_string(),
            start_s: w[0] as f64 / fps,
            end_s: w[1] as f64 / fps,
        })
        .collect();
    GroundTruthSegmentation::new(video_id, fps, count as f64 / fps, segments)
}

/// The segmentations [`generate_dataset`] would write, without any frames.
pub fn generate_truths(params: &SynthParams) -> Result<Vec<GroundTruthSegmentation>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.videos)
        .map(|i| random_truth(&mut rng, &format!("synth_{i:03}"), params))
        .collect()
}

/// Writes `<id>/` frame directories and `<id>.json` annotations into `dir`.
pub fn generate_dataset(dir: &Path, params: &SynthParams) -> Result<Vec<GroundTruthSegmentation>> {
    let truths = generate_truths(params)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for truth in &truths {
        let video = SyntheticVideo::from_truth(truth, params.frame_size);
        let frames = (0..video.frame_count()).map(|i| video.render(i));
        write_frame_dir(&dir.join(&truth.video_id), truth.fps, frames)?;
        truth.save(dir.join(format!("{}.json", truth.video_id)))?;
    }
    Ok(truths)
}
