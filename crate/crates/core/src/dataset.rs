//! Directories of paired annotation files and videos.
//!
//! Each `<stem>.json` annotation is paired with `<stem>/` (a frame
//! directory) or `<stem>.<ext>` for a common container extension.

use std::fs;
use std::path::{Path, PathBuf};

use crate::annotation::GroundTruthSegmentation;
use crate::error::{Error, Result};

pub const VIDEO_EXTENSIONS: [&str; 6] = ["mp4", "avi", "mkv", "mov", "webm", "mpg"];

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub truth: GroundTruthSegmentation,
    pub video_path: PathBuf,
}

/// An annotation that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetProblem {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sorted by annotation file name.
    pub items: Vec<DatasetItem>,
    pub problems: Vec<DatasetProblem>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut annotations: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect();
        annotations.sort();

        let mut out = Dataset::default();
        for path in annotations {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let truth = match GroundTruthSegmentation::load(&path) {
                Ok(t) => t,
                Err(e) => {
                    out.problems.push(DatasetProblem { path, message: e.to_string() });
                    continue;
                }
            };
            match find_video(dir, &stem) {
                Some(video_path) => out.items.push(DatasetItem { truth, video_path }),
                None => out.problems.push(DatasetProblem {
                    path,
                    message: format!("no video `{stem}/` or `{stem}.<ext>` next to annotation"),
                }),
            }
        }
        Ok(out)
    }
}

fn find_video(dir: &Path, stem: &str) -> Option<PathBuf> {
    let frames = dir.join(stem);
    if frames.is_dir() {
        return Some(frames);
    }
    VIDEO_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::uniform_truth;

    #[test]
    fn pairs_and_problems() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        uniform_truth("b", 10.0, 1.0, 2).unwrap().save(d.join("b.json")).unwrap();
        fs::create_dir(d.join("b")).unwrap();
        uniform_truth("a", 10.0, 1.0, 2).unwrap().save(d.join("a.json")).unwrap();
        fs::write(d.join("a.mp4"), b"").unwrap();
        uniform_truth("c", 10.0, 1.0, 2).unwrap().save(d.join("c.json")).unwrap();
        fs::write(d.join("broken.json"), "{").unwrap();

        let ds = Dataset::load(d).unwrap();
        let ids: Vec<_> = ds.items.iter().map(|i| i.truth.video_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(ds.items[0].video_path, d.join("a.mp4"));
        assert_eq!(ds.problems.len(), 2);
    }

    #[test]
    fn empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        assert!(ds.items.is_empty() && ds.problems.is_empty());
    }
}
