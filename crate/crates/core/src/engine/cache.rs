//! Response cache: an in-memory map per query key, optionally backed by an
//! append-only `log.jsonl` and a derived `index.json` in a directory.
//!
//! The log is authoritative. Every stored outcome is one line; a later line
//! for the same `(key, index)` supersedes earlier ones. `index.json` maps each
//! key to the log line currently holding each generation index and is
//! rewritten on [`ResponseCache::flush`].

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{QueryKey, ResponseRecord};

pub const LOG_FILE: &str = "log.jsonl";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    version: String,
    lines: usize,
    entries: BTreeMap<String, Vec<Option<usize>>>,
}

struct LogStore {
    dir: PathBuf,
    file: File,
    lines: usize,
    positions: HashMap<QueryKey, Vec<Option<usize>>>,
}

type Slots = Vec<Option<ResponseRecord>>;

pub struct ResponseCache {
    entries: RwLock<HashMap<QueryKey, Slots>>,
    store: Option<Mutex<LogStore>>,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache")
            .field("keys", &self.entries.read().len())
            .field("persistent", &self.store.is_some())
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn place(slots: &mut Slots, record: ResponseRecord) {
    let i = record.index as usize;
    if slots.len() <= i {
        slots.resize(i + 1, None);
    }
    slots[i] = Some(record);
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: RwLock::new(HashMap::new()),
            store: None,
        }
    }

    /// Opens (or creates) a cache directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CacheError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log_path = dir.join(LOG_FILE);

        let mut entries: HashMap<QueryKey, Slots> = HashMap::new();
        let mut positions: HashMap<QueryKey, Vec<Option<usize>>> = HashMap::new();
        let mut lines = 0usize;
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(io_err(&log_path))?);
            let raw: Vec<String> = reader
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err(&log_path))?;
            let count = raw.len();
            for (n, line) in raw.into_iter().enumerate() {
                lines = n + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let record: ResponseRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // A torn final line from an interrupted write is dropped.
                    Err(_) if n + 1 == count => {
                        tracing::warn!(path = %log_path.display(), "ignoring truncated final cache line");
                        continue;
                    }
                    Err(e) => {
                        return Err(CacheError::Corrupt {
                            path: log_path,
                            line: n + 1,
                            message: e.to_string(),
                        })
                    }
                };
                let pos = positions.entry(record.key).or_default();
                let i = record.index as usize;
                if pos.len() <= i {
                    pos.resize(i + 1, None);
                }
                pos[i] = Some(n);
                place(entries.entry(record.key).or_default(), record);
            }
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let cache = ResponseCache {
            entries: RwLock::new(entries),
            store: Some(Mutex::new(LogStore {
                dir,
                file,
                lines,
                positions,
            })),
        };
        cache.flush()?;
        Ok(cache)
    }

    pub fn dir(&self) -> Option<PathBuf> {
        self.store.as_ref().map(|s| s.lock().dir.clone())
    }

    /// Stores a record, replacing whatever held its `(key, index)` slot.
    pub fn insert(&self, record: ResponseRecord) -> Result<(), CacheError> {
        let mut record = record;
        record.scores.clear();
        if let Some(store) = &self.store {
            let mut store = store.lock();
            let line = serde_json::to_string(&record).expect("record serializes");
            let path = store.dir.join(LOG_FILE);
            writeln!(store.file, "{line}").map_err(io_err(&path))?;
            let n = store.lines;
            store.lines += 1;
            let pos = store.positions.entry(record.key).or_default();
            let i = record.index as usize;
            if pos.len() <= i {
                pos.resize(i + 1, None);
            }
            pos[i] = Some(n);
        }
        place(self.entries.write().entry(record.key).or_default(), record);
        Ok(())
    }

    /// Adds records from elsewhere (e.g. a shared flow) without overwriting
    /// successful local results.
    pub fn import(&self, records: impl IntoIterator<Item = ResponseRecord>) -> Result<usize, CacheError> {
        let mut added = 0;
        for r in records {
            let keep_existing = self
                .get(&r.key, r.index)
                .is_some_and(|existing| existing.is_success() || !r.is_success());
            if !keep_existing {
                self.insert(r)?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn get(&self, key: &QueryKey, index: u32) -> Option<ResponseRecord> {
        self.entries
            .read()
            .get(key)
            .and_then(|slots| slots.get(index as usize).cloned().flatten())
    }

    /// All stored records for a key, by generation index.
    pub fn records(&self, key: &QueryKey) -> Vec<ResponseRecord> {
        self.entries
            .read()
            .get(key)
            .map(|slots| slots.iter().flatten().cloned().collect())
            .unwrap_or_default()
    }

    /// Generation indices below `n` that lack a successful record.
    pub fn missing_indices(&self, key: &QueryKey, n: u32) -> Vec<u32> {
        let entries = self.entries.read();
        let slots = entries.get(key);
        (0..n)
            .filter(|&i| {
                !slots
                    .and_then(|s| s.get(i as usize))
                    .and_then(Option::as_ref)
                    .is_some_and(ResponseRecord::is_success)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries
            .read()
            .values()
            .map(|s| s.iter().flatten().count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rewrites `index.json` and syncs the log.
    pub fn flush(&self) -> Result<(), CacheError> {
        let Some(store) = &self.store else {
            return Ok(());
        };
        let mut store = store.lock();
        let log_path = store.dir.join(LOG_FILE);
        store.file.flush().map_err(io_err(&log_path))?;
        let index = IndexFile {
            version: "1".into(),
            lines: store.lines,
            entries: store
                .positions
                .iter()
                .map(|(k, v)| (k.to_hex(), v.clone()))
                .collect(),
        };
        let path = store.dir.join(INDEX_FILE);
        let tmp = store.dir.join(format!("{INDEX_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }
}
