//! Ground-truth segmentations and their JSON / Breakfast-style text formats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two boundaries closer than this are considered the same instant.
pub const CONTIGUITY_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// A gap-free, time-ordered labelling of a whole video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSegmentation {
    pub video_id: String,
    pub fps: f64,
    pub duration_s: f64,
    pub segments: Vec<Segment>,
}

impl GroundTruthSegmentation {
    /// Builds and validates a segmentation.
    pub fn new(
        video_id: impl Into<String>,
        fps: f64,
        duration_s: f64,
        segments: Vec<Segment>,
    ) -> Result<Self> {
        let seg = Self {
            video_id: video_id.into(),
            fps,
            duration_s,
            segments,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Validation(format!("fps must be > 0, got {}", self.fps)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Validation(format!(
                "duration_s must be > 0, got {}",
                self.duration_s
            )));
        }
        if self.segments.is_empty() {
            return Err(Error::Validation("segment list is empty".into()));
        }

        let mut problems = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            if s.label.trim().is_empty() {
                problems.push(format!("segment {i}: empty label"));
            }
            if !(s.start_s < s.end_s) {
                problems.push(format!(
                    "segment {i}: start {} is not before end {}",
                    s.start_s, s.end_s
                ));
            }
        }
        for (i, pair) in self.segments.windows(2).enumerate() {
            let delta = pair[1].start_s - pair[0].end_s;
            if delta > CONTIGUITY_TOLERANCE_S {
                problems.push(format!("gap at index {}: {} s", i + 1, delta));
            } else if delta < -CONTIGUITY_TOLERANCE_S {
                problems.push(format!("overlap at index {}: {} s", i + 1, -delta));
            }
        }

        let first = &self.segments[0];
        if first.start_s.abs() > CONTIGUITY_TOLERANCE_S {
            problems.push(format!("segment 0 starts at {} instead of 0", first.start_s));
        }
        let last = self.segments.last().unwrap();
        let frame_period = 1.0 / self.fps;
        if (last.end_s - self.duration_s).abs() > frame_period + CONTIGUITY_TOLERANCE_S {
            problems.push(format!(
                "last segment ends at {} but duration is {}",
                last.end_s, self.duration_s
            ));
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.label.clone()).collect()
    }

    /// Interior boundaries, i.e. `segments[i].end_s` for all but the last segment.
    pub fn transitions(&self) -> Vec<f64> {
        let n = self.segments.len();
        self.segments[..n - 1].iter().map(|s| s.end_s).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        seg.validate()?;
        Ok(seg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Parses Breakfast-style label files: one `start-end label` line per
    /// segment with 1-based, inclusive frame ranges.
    pub fn from_breakfast(text: &str, video_id: &str, fps: f64) -> Result<Self> {
        let mut segments = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Validation(format!("line {}: malformed `{line}`", lineno + 1));
            let (range, label) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
            let (a, b) = range.split_once('-').ok_or_else(bad)?;
            let first: u64 = a.trim().parse().map_err(|_| bad())?;
            let last: u64 = b.trim().parse().map_err(|_| bad())?;
            if first == 0 || last < first {
                return Err(bad());
            }
            segments.push(Segment {
                label: label.trim().to_string(),
                start_s: (first - 1) as f64 / fps,
                end_s: last as f64 / fps,
            });
        }
        let duration_s = segments.last().map(|s| s.end_s).unwrap_or(0.0);
        Self::new(video_id, fps, duration_s, segments)
    }
}
