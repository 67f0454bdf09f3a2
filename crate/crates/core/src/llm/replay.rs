use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, LlmError};

/// Record/replay cache keyed on the request's messages and temperature.
///
/// Hits are served from `<cache_dir>/<hex digest>.json`. Misses go to the
/// inner backend and are recorded; without an inner backend a miss is an
/// error.
pub struct ReplayBackend {
    cache_dir: PathBuf,
    inner: Option<Arc<dyn ChatBackend>>,
    write_lock: Mutex<()>,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    messages: &'a [ChatMessage],
    temperature: f32,
}

impl ReplayBackend {
    pub fn new(cache_dir: impl Into<PathBuf>, inner: Option<Arc<dyn ChatBackend>>) -> Self {
        ReplayBackend {
            cache_dir: cache_dir.into(),
            inner,
            write_lock: Mutex::new(()),
        }
    }

    pub fn digest(request: &ChatRequest) -> String {
        let key = CacheKey {
            messages: &request.messages,
            temperature: request.temperature,
        };
        let bytes = serde_json::to_vec(&key).expect("cache key serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn entry_path(&self, request: &ChatRequest) -> PathBuf {
        self.cache_dir.join(ReplayBackend::digest(request))
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    fn read_entry(path: &Path) -> Result<Option<ChatResponse>, LlmError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| LlmError::Backend(format!("corrupt cache entry {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(LlmError::Backend(format!("{}: {e}", path.display()))),
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let path = self.entry_path(request);
        if let Some(hit) = ReplayBackend::read_entry(&path)? {
            return Ok(hit);
        }
        let inner = self.inner.as_ref().ok_or_else(|| {
            LlmError::Backend(format!("replay cache miss with no live backend: {}", path.display()))
        })?;
        let response = inner.complete(request)?;

        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        // another thread may have recorded the same request meanwhile
        if let Some(hit) = ReplayBackend::read_entry(&path)? {
            return Ok(hit);
        }
        fs::create_dir_all(&self.cache_dir)
            .map_err(|e| LlmError::Backend(format!("{}: {e}", self.cache_dir.display())))?;
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(&response).expect("response serializes");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| LlmError::Backend(format!("{}: {e}", path.display())))?;
        Ok(response)
    }
}
