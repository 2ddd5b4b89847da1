use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::video::FrameSource;

/// A sampling window over a video's timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub center_s: f64,
    pub width_s: f64,
    pub video_duration_s: f64,
}

impl TimeWindow {
    pub fn new(center_s: f64, width_s: f64, video_duration_s: f64) -> Result<Self, Error> {
        if !(video_duration_s > 0.0 && video_duration_s.is_finite()) {
            return Err(Error::Validation(format!("video duration {video_duration_s} must be > 0")));
        }
        if !(width_s >= 0.0 && width_s.is_finite() && center_s.is_finite()) {
            return Err(Error::Validation(format!("bad window center={center_s} width={width_s}")));
        }
        Ok(Self {
            center_s,
            width_s,
            video_duration_s,
        })
    }

    /// The whole video: centre at half the duration, width equal to it.
    pub fn full(video_duration_s: f64) -> Result<Self, Error> {
        Self::new(video_duration_s / 2.0, video_duration_s, video_duration_s)
    }

    /// Window covering exactly `[start_s, end_s]`.
    pub fn spanning(start_s: f64, end_s: f64, video_duration_s: f64) -> Result<Self, Error> {
        Self::new((start_s + end_s) / 2.0, (end_s - start_s).max(0.0), video_duration_s)
    }

    /// `[center - width/2, center + width/2]` clipped to the video.
    pub fn effective_range(&self) -> (f64, f64) {
        (
            (self.center_s - self.width_s / 2.0).max(0.0),
            (self.center_s + self.width_s / 2.0).min(self.video_duration_s),
        )
    }

    /// Next window: centred on `center_s`, half as wide.
    pub fn narrowed(&self, center_s: f64) -> Self {
        Self {
            center_s,
            width_s: self.width_s / 2.0,
            video_duration_s: self.video_duration_s,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    /// The window no longer spans enough distinct frames to fill a grid.
    #[error("window {lo}..{hi} s is too narrow to sample {n} distinct frames")]
    Degenerate { lo: f64, hi: f64, n: usize },

    #[error("need at least 2 samples per window, got {0}")]
    TooFewSamples(usize),
}

/// `n` evenly spaced times over the window's effective range, both ends
/// included.
pub fn sample_times(win: &TimeWindow, n: usize) -> Result<Vec<f64>, SampleError> {
    if n < 2 {
        return Err(SampleError::TooFewSamples(n));
    }
    let (lo, hi) = win.effective_range();
    if !(hi > lo) {
        return Err(SampleError::Degenerate { lo, hi, n });
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
        .collect())
}

/// Snaps times to nearest frame indices, then pushes colliding indices apart
/// onto neighbouring frames so the result is strictly increasing. Every
/// index the plain snap produced is still present afterwards.
pub fn snap_to_frames(times: &[f64], fps: f64, frame_count: usize) -> Option<Vec<usize>> {
    let n = times.len();
    if n == 0 || n > frame_count {
        return None;
    }
    let last = frame_count as i64 - 1;
    let mut idx: Vec<i64> = times
        .iter()
        .map(|t| ((t * fps).round() as i64).clamp(0, last))
        .collect();
    for i in 1..n {
        idx[i] = idx[i].max(idx[i - 1] + 1);
    }
    idx[n - 1] = idx[n - 1].min(last);
    for i in (0..n - 1).rev() {
        idx[i] = idx[i].min(idx[i + 1] - 1);
    }
    (idx[0] >= 0).then(|| idx.into_iter().map(|i| i as usize).collect())
}

/// Frame indices to show for one pass over `win`.
pub fn sample_indices(video: &dyn FrameSource, win: &TimeWindow, n: usize) -> Result<Vec<usize>, SampleError> {
    let fps = video.fps();
    let times = sample_times(win, n)?;
    let (lo, hi) = win.effective_range();
    let degenerate = SampleError::Degenerate { lo, hi, n };
    if hi - lo < 1.0 / fps {
        return Err(degenerate);
    }
    let plain_distinct = {
        let mut raw: Vec<i64> = times.iter().map(|t| (t * fps).round() as i64).collect();
        raw.dedup();
        raw.len()
    };
    if plain_distinct < 2 {
        return Err(degenerate);
    }
    snap_to_frames(&times, fps, video.frame_count()).ok_or(degenerate)
}

/// Decoded frames with their actual timestamps, ready for [`crate::grid::compose_grid`].
pub fn sample_frames(
    video: &dyn FrameSource,
    win: &TimeWindow,
    n: usize,
) -> Result<Vec<(RgbImage, f64)>, SampleOrVideoError> {
    let fps = video.fps();
    sample_indices(video, win, n)?
        .into_iter()
        .map(|i| Ok((video.frame(i)?, i as f64 / fps)))
        .collect()
}

#[derive(Debug, Error)]
pub enum SampleOrVideoError {
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Video(#[from] Error),
}
