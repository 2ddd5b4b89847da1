//! Frame-addressable video access.
//!
//! Two kinds of on-disk sources are supported: a directory of image frames
//! (sorted lexicographically, with a `meta.json` sidecar carrying `fps`) and a
//! container file decoded through `ffprobe`/`ffmpeg` subprocesses. Everything
//! downstream only sees the [`FrameSource`] trait.

use std::borrow::Borrow;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Name of the sidecar file that gives the frame rate of an image directory.
pub const FRAME_DIR_META: &str = "meta.json";

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Random access to the frames of one video.
///
/// Frame `i` is shown at time `i / fps`. Implementations must be safe for
/// concurrent reads.
pub trait FrameSource: Send + Sync {
    fn fps(&self) -> f64;

    fn frame_count(&self) -> usize;

    fn duration_s(&self) -> f64 {
        self.frame_count() as f64 / self.fps()
    }

    /// Pixel dimensions of a decoded frame.
    fn frame_size(&self) -> Result<(u32, u32)>;

    fn frame(&self, index: usize) -> Result<RgbImage>;

    /// Index of the frame whose timestamp is nearest to `t`.
    fn index_at(&self, t: f64) -> Result<usize> {
        let duration_s = self.duration_s();
        if !(0.0..=duration_s).contains(&t) {
            return Err(Error::OutOfRange { t, duration_s });
        }
        let idx = (t * self.fps()).round() as usize;
        Ok(idx.min(self.frame_count() - 1))
    }

    /// Nearest frame to `t` together with its actual timestamp.
    fn frame_at(&self, t: f64) -> Result<(RgbImage, f64)> {
        let idx = self.index_at(t)?;
        Ok((self.frame(idx)?, idx as f64 / self.fps()))
    }
}

#[derive(Debug, Clone)]
enum Backing {
    Frames(Vec<PathBuf>),
    Container { width: u32, height: u32 },
}

/// A video opened from disk. Frames are decoded lazily on request.
#[derive(Debug, Clone)]
pub struct VideoSource {
    pub uri: PathBuf,
    pub duration_s: f64,
    pub fps: f64,
    pub frame_count: usize,
    backing: Backing,
}

#[derive(Deserialize)]
struct FrameDirMeta {
    fps: f64,
}

impl VideoSource {
    /// Opens an image-frame directory or a container file.
    pub fn open(uri: impl AsRef<Path>) -> Result<Self> {
        let uri = uri.as_ref();
        if uri.is_dir() {
            Self::open_frame_dir(uri)
        } else if uri.is_file() {
            Self::open_container(uri)
        } else {
            Err(Error::Decode(format!("{}: no such file or directory", uri.display())))
        }
    }

    fn open_frame_dir(dir: &Path) -> Result<Self> {
        let mut frames: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(Error::EmptySource(format!("{} contains no frames", dir.display())));
        }

        let meta_path = dir.join(FRAME_DIR_META);
        let meta_text = fs::read_to_string(&meta_path).map_err(|_| {
            Error::Config(format!("{} is missing; it must give the frame rate", meta_path.display()))
        })?;
        let meta: FrameDirMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
        if !(meta.fps > 0.0 && meta.fps.is_finite()) {
            return Err(Error::Config(format!("{}: fps must be > 0", meta_path.display())));
        }

        let frame_count = frames.len();
        Ok(Self {
            uri: dir.to_path_buf(),
            duration_s: frame_count as f64 / meta.fps,
            fps: meta.fps,
            frame_count,
            backing: Backing::Frames(frames),
        })
    }

    fn open_container(path: &Path) -> Result<Self> {
        let probe = probe_container(path)?;
        Ok(Self {
            uri: path.to_path_buf(),
            duration_s: probe.duration_s,
            fps: probe.fps,
            frame_count: probe.frame_count,
            backing: Backing::Container {
                width: probe.width,
                height: probe.height,
            },
        })
    }
}

impl FrameSource for VideoSource {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn duration_s(&self) -> f64 {
        self.duration_s
    }

    fn frame_size(&self) -> Result<(u32, u32)> {
        match &self.backing {
            Backing::Frames(paths) => Ok(image::image_dimensions(&paths[0])?),
            Backing::Container { width, height } => Ok((*width, *height)),
        }
    }

    fn frame(&self, index: usize) -> Result<RgbImage> {
        if index >= self.frame_count {
            return Err(Error::OutOfRange {
                t: index as f64 / self.fps,
                duration_s: self.duration_s,
            });
        }
        match &self.backing {
            Backing::Frames(paths) => {
                let img = image::open(&paths[index])
                    .map_err(|e| Error::Decode(format!("{}: {e}", paths[index].display())))?;
                Ok(img.to_rgb8())
            }
            Backing::Container { .. } => extract_frame(&self.uri, index as f64 / self.fps),
        }
    }
}

struct Probe {
    duration_s: f64,
    fps: f64,
    frame_count: usize,
    width: u32,
    height: u32,
}

fn parse_rate(rate: &str) -> Option<f64> {
    match rate.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d != 0.0).then(|| n / d)
        }
        None => rate.parse().ok(),
    }
}

fn probe_container(path: &Path) -> Result<Probe> {
    let output = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=avg_frame_rate,r_frame_rate,nb_frames,width,height:format=duration",
            "-of",
            "json",
        ])
        .arg(path)
        .output()
        .map_err(|e| Error::Decode(format!("cannot run ffprobe on {}: {e}", path.display())))?;
    if !output.status.success() {
        return Err(Error::Decode(format!(
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let json: serde_json::Value = serde_json::from_slice(&output.stdout)
        .map_err(|e| Error::Decode(format!("{}: bad ffprobe output: {e}", path.display())))?;
    let stream = &json["streams"][0];
    let bad = |what: &str| Error::Decode(format!("{}: no {what} in stream info", path.display()));

    let fps = stream["avg_frame_rate"]
        .as_str()
        .and_then(parse_rate)
        .filter(|f| *f > 0.0)
        .or_else(|| stream["r_frame_rate"].as_str().and_then(parse_rate))
        .filter(|f| *f > 0.0)
        .ok_or_else(|| bad("frame rate"))?;
    let duration_s: f64 = json["format"]["duration"]
        .as_str()
        .and_then(|d| d.parse().ok())
        .filter(|d: &f64| *d > 0.0)
        .ok_or_else(|| bad("duration"))?;
    let width = stream["width"].as_u64().ok_or_else(|| bad("width"))? as u32;
    let height = stream["height"].as_u64().ok_or_else(|| bad("height"))? as u32;
    let frame_count = stream["nb_frames"]
        .as_str()
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| (duration_s * fps).round() as usize)
        .max(1);

    Ok(Probe {
        duration_s,
        fps,
        frame_count,
        width,
        height,
    })
}

fn extract_frame(path: &Path, t: f64) -> Result<RgbImage> {
    let output = Command::new("ffmpeg")
        .args(["-v", "error", "-ss", &format!("{t:.6}"), "-i"])
        .arg(path)
        .args(["-frames:v", "1", "-f", "image2pipe", "-vcodec", "png", "-"])
        .output()
        .map_err(|e| Error::Decode(format!("cannot run ffmpeg on {}: {e}", path.display())))?;
    if !output.status.success() || output.stdout.is_empty() {
        return Err(Error::Decode(format!(
            "{} @ {t} s: {}",
            path.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let img = image::load_from_memory_with_format(&output.stdout, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Writes `frames` as a frame directory readable by [`VideoSource::open`].
pub fn write_frame_dir<I>(dir: &Path, fps: f64, frames: I) -> Result<usize>
where
    I: IntoIterator,
    I::Item: Borrow<RgbImage>,
{
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut count = 0;
    for (i, frame) in frames.into_iter().enumerate() {
        frame.borrow().save(dir.join(format!("frame_{i:06}.png")))?;
        count += 1;
    }
    let meta_path = dir.join(FRAME_DIR_META);
    fs::write(&meta_path, serde_json::json!({ "fps": fps }).to_string())
        .map_err(|e| Error::io(&meta_path, e))?;
    Ok(count)
}
