//! Content-addressed record/replay of raw model replies (JSON lines).

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{VlmBackend, VlmError, VlmQuery};

/// One line of a replay store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub hash: String,
    pub raw: String,
}

fn read_store(path: &Path) -> Result<Vec<ReplayEntry>, VlmError> {
    let file = File::open(path).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ReplayEntry = serde_json::from_str(&line)
            .map_err(|e| VlmError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Serves replies previously captured by [`RecordingBackend`].
#[derive(Debug)]
pub struct ReplayBackend {
    path: PathBuf,
    replies: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref().to_path_buf();
        let mut replies = HashMap::new();
        for entry in read_store(&path)? {
            // First recording of a hash wins, matching what the recorder keeps.
            replies.entry(entry.hash).or_insert(entry.raw);
        }
        Ok(Self { path, replies })
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl VlmBackend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.path.display())
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        let hash = query.request_hash();
        self.replies.get(&hash).cloned().ok_or(VlmError::CacheMiss(hash))
    }
}

struct Store {
    file: File,
    seen: HashSet<String>,
}

/// Wraps a backend and appends every new (request hash, raw reply) pair to a
/// store file. Repeated requests keep only their first reply.
pub struct RecordingBackend<B> {
    inner: B,
    store: Mutex<Store>,
}

impl<B: VlmBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| VlmError::Io(format!("{}: {e}", path.display()));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let seen = if path.exists() {
            read_store(path)?.into_iter().map(|e| e.hash).collect()
        } else {
            HashSet::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            inner,
            store: Mutex::new(Store { file, seen }),
        })
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: VlmBackend> VlmBackend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        let raw = self.inner.query_raw(query)?;
        let hash = query.request_hash();
        let mut store = self.store.lock().unwrap();
        if store.seen.insert(hash.clone()) {
            let line = serde_json::to_string(&ReplayEntry { hash, raw: raw.clone() })
                .map_err(|e| VlmError::Io(e.to_string()))?;
            writeln!(store.file, "{line}")
                .and_then(|_| store.file.flush())
                .map_err(|e| VlmError::Io(e.to_string()))?;
        }
        Ok(raw)
    }
}
