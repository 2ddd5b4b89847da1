//! Run configuration shared by every command, loadable from TOML.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::annotation::GroundTruthSegmentation;
use crate::error::{Error, Result};
use crate::grid::{GridShape, GridSpec, PromptStyle, DEFAULT_CANVAS_PX};
use crate::prompt::PromptTemplates;
use crate::search::{SearchParams, DEFAULT_ANSWER_RETRIES, DEFAULT_ITERATIONS, DEFAULT_WORKERS, MAX_ITERATIONS};
use crate::vlm::{HttpBackend, HttpConfig, OracleBackend, RecordingBackend, ReplayBackend, VlmBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    Oracle,
    NoisyOracle,
    Replay,
}

impl BackendKind {
    /// Needs ground truth to answer.
    pub fn is_oracle(self) -> bool {
        matches!(self, BackendKind::Oracle | BackendKind::NoisyOracle)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::NoisyOracle => "noisy-oracle",
            BackendKind::Replay => "replay",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "http" => Ok(BackendKind::Http),
            "oracle" => Ok(BackendKind::Oracle),
            "noisy-oracle" => Ok(BackendKind::NoisyOracle),
            "replay" => Ok(BackendKind::Replay),
            other => Err(Error::Config(format!(
                "unknown backend `{other}` (expected http, oracle, noisy-oracle or replay)"
            ))),
        }
    }
}

/// Everything a run needs besides its inputs. Embedded in every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub grid: GridShape,
    pub style: PromptStyle,
    /// Longest side of the composed grid image in pixels.
    pub canvas_px: u32,
    pub iterations: u32,
    pub until_frame_level: bool,
    pub answer_retries: u32,
    pub split_segments: u32,
    pub workers: usize,
    pub seed: u64,
    /// Standard deviation of the noisy oracle's boundary perturbation.
    pub noise_std_s: f64,
    pub replay_store: Option<PathBuf>,
    /// Append every raw reply to this store for later replay.
    pub record_store: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub http: HttpConfig,
    pub prompt: PromptTemplates,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            grid: GridShape::new(5, 5),
            style: PromptStyle::Original,
            canvas_px: DEFAULT_CANVAS_PX,
            iterations: DEFAULT_ITERATIONS,
            until_frame_level: false,
            answer_retries: DEFAULT_ANSWER_RETRIES,
            split_segments: 1,
            workers: DEFAULT_WORKERS,
            seed: 0,
            noise_std_s: 0.0,
            replay_store: None,
            record_store: None,
            output_dir: None,
            http: HttpConfig::default(),
            prompt: PromptTemplates::default(),
        }
    }
}

/// A backend shared by all searches of a run.
pub type SharedBackend = Arc<dyn VlmBackend>;

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.cells() < 4 {
            return Err(Error::Config(format!("grid {} has fewer than 4 cells", self.grid)));
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            return Err(Error::Config(format!(
                "iterations must be in 1..={MAX_ITERATIONS}, got {}",
                self.iterations
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.split_segments == 0 {
            return Err(Error::Config("split_segments must be >= 1".into()));
        }
        if self.canvas_px < self.grid.rows.max(self.grid.cols) {
            return Err(Error::Config(format!("canvas_px {} is too small for grid {}", self.canvas_px, self.grid)));
        }
        if !(self.noise_std_s >= 0.0 && self.noise_std_s.is_finite()) {
            return Err(Error::Config(format!("noise_std_s must be >= 0, got {}", self.noise_std_s)));
        }
        if self.backend == BackendKind::Replay && self.replay_store.is_none() {
            return Err(Error::Config("backend replay needs replay_store".into()));
        }
        self.prompt.validate()
    }

    /// Fails when the HTTP backend is selected but its key variable is unset.
    /// Cheap enough to run before any video is opened.
    pub fn check_credentials(&self) -> Result<()> {
        if self.backend == BackendKind::Http {
            let var = &self.http.api_key_env;
            if std::env::var(var).map_or(true, |k| k.trim().is_empty()) {
                return Err(Error::Config(format!("backend http needs an API key in environment variable {var}")));
            }
        }
        Ok(())
    }

    /// Search parameters for a video with frames of `frame_size`.
    pub fn search_params(&self, frame_size: (u32, u32)) -> Result<SearchParams> {
        let grid = GridSpec::fit(self.grid, self.style, self.canvas_px, frame_size)?;
        let params = SearchParams {
            grid,
            iterations: self.iterations,
            until_frame_level: self.until_frame_level,
            answer_retries: self.answer_retries,
            split_segments: self.split_segments,
            templates: self.prompt.clone(),
            debug_dir: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds a backend that does not need ground truth. Oracle kinds are
    /// rejected here; use [`RunConfig::oracle_backend`] per video instead.
    pub fn shared_backend(&self) -> Result<SharedBackend> {
        self.check_credentials()?;
        let inner: SharedBackend = match self.backend {
            BackendKind::Http => Arc::new(HttpBackend::from_env(self.http.clone())?),
            BackendKind::Replay => {
                let path = self
                    .replay_store
                    .as_ref()
                    .ok_or_else(|| Error::Config("backend replay needs replay_store".into()))?;
                Arc::new(ReplayBackend::open(path)?)
            }
            kind => return Err(Error::Config(format!("backend {kind} needs ground-truth annotations"))),
        };
        self.maybe_record(inner)
    }

    /// Oracle backend answering from `truth`.
    pub fn oracle_backend(&self, truth: &GroundTruthSegmentation) -> Result<SharedBackend> {
        let inner: SharedBackend = match self.backend {
            BackendKind::Oracle => Arc::new(OracleBackend::exact(truth.clone())),
            BackendKind::NoisyOracle => Arc::new(OracleBackend::noisy(truth.clone(), self.noise_std_s, self.seed)?),
            kind => return Err(Error::Config(format!("backend {kind} is not an oracle"))),
        };
        self.maybe_record(inner)
    }

    fn maybe_record(&self, inner: SharedBackend) -> Result<SharedBackend> {
        Ok(match &self.record_store {
            Some(path) => Arc::new(RecordingBackend::new(inner, path)?),
            None => inner,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}
