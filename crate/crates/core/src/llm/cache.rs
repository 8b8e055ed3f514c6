use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

const FORMAT: &str = "autofeedback-cache-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Always call the inner backend and store the result.
    Record,
    /// Serve only from the cache; a miss is an error.
    Replay,
    /// Serve hits from the cache, record misses.
    ReplayOrRecord,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    format: String,
    digest: String,
    request: ChatRequest,
    response: ChatResponse,
}

/// One JSON file per request digest.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn io_err(path: &Path, e: impl std::fmt::Display) -> LlmError {
        LlmError::CacheIo { path: path.display().to_string(), message: e.to_string() }
    }

    /// The stored response, if the entry exists and holds this exact request.
    pub fn get(&self, req: &ChatRequest) -> Result<Option<ChatResponse>, LlmError> {
        let digest = req.digest();
        let path = self.path(&digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Self::io_err(&path, e)),
        };
        let entry: Entry = serde_json::from_str(&text).map_err(|e| Self::io_err(&path, e))?;
        if entry.format != FORMAT || entry.digest != digest || entry.request != *req {
            return Err(LlmError::Integrity { digest });
        }
        Ok(Some(entry.response))
    }

    pub fn put(&self, req: &ChatRequest, resp: &ChatResponse) -> Result<(), LlmError> {
        let digest = req.digest();
        let path = self.path(&digest);
        if let Some(existing) = self.get(req)? {
            if existing == *resp {
                return Ok(());
            }
        }
        fs::create_dir_all(&self.dir).map_err(|e| Self::io_err(&self.dir, e))?;
        let entry =
            Entry { format: FORMAT.into(), digest: digest.clone(), request: req.clone(), response: resp.clone() };
        let mut json = serde_json::to_string_pretty(&entry).expect("entry serializes");
        json.push('\n');
        static NEXT_TMP: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let n = NEXT_TMP.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{digest}.{}.{n}.tmp", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(json.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| Self::io_err(&path, e))
    }

    /// Number of entries on disk.
    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|d| d.filter_map(Result::ok).filter(|e| e.path().extension().is_some_and(|x| x == "json")).count())
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    recorded: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub recorded: u64,
}

/// Record/replay wrapper around another backend.
pub struct CachedBackend {
    cache: ResponseCache,
    mode: CacheMode,
    inner: Option<Arc<dyn ChatBackend>>,
    counters: Counters,
}

impl CachedBackend {
    /// `inner` may be `None` only in strict replay.
    pub fn new(cache: ResponseCache, mode: CacheMode, inner: Option<Arc<dyn ChatBackend>>) -> Result<Self, LlmError> {
        if mode != CacheMode::Replay && inner.is_none() {
            return Err(LlmError::InvalidRequest(format!("{mode:?} cache mode needs a backend to call")));
        }
        Ok(Self { cache, mode, inner, counters: Counters::default() })
    }

    pub fn replay(cache: ResponseCache) -> Self {
        Self { cache, mode: CacheMode::Replay, inner: None, counters: Counters::default() }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::SeqCst),
            misses: self.counters.misses.load(Ordering::SeqCst),
            recorded: self.counters.recorded.load(Ordering::SeqCst),
        }
    }

    fn call_and_store(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let inner = self.inner.as_ref().expect("checked in constructor");
        let resp = inner.complete(req)?;
        self.cache.put(req, &resp)?;
        self.counters.recorded.fetch_add(1, Ordering::SeqCst);
        Ok(resp)
    }
}

impl ChatBackend for CachedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if self.mode == CacheMode::Record {
            return self.call_and_store(req);
        }
        if let Some(resp) = self.cache.get(req)? {
            self.counters.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(resp);
        }
        self.counters.misses.fetch_add(1, Ordering::SeqCst);
        match self.mode {
            CacheMode::Replay => Err(LlmError::CacheMiss { digest: req.digest() }),
            _ => self.call_and_store(req),
        }
    }

    fn fingerprint(&self) -> String {
        match self.mode {
            CacheMode::Replay => "replay".to_string(),
            _ => self.inner.as_ref().map(|b| b.fingerprint()).unwrap_or_default(),
        }
    }
}
