use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Response cache on disk, one JSON file per request, keyed by
/// `sha256(model name, serialized request)`.
///
/// Any number of readers may look up entries concurrently; writes are
/// serialized and land via rename, so a reader sees either nothing or a
/// complete entry.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

pub fn cache_key(model: &str, request: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(request.as_bytes());
    hex::encode(h.finalize())
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, write_lock: Mutex::new(()), hits: AtomicU64::new(0), misses: AtomicU64::new(0) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, model: &str, request: &str) -> Option<Value> {
        let key = cache_key(model, request);
        let found = fs::read_to_string(self.path(&key))
            .ok()
            .and_then(|text| serde_json::from_str::<Value>(&text).ok())
            .and_then(|entry| entry.get("response").cloned());
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Stores `response` together with the request bytes that produced it.
    pub fn put(&self, model: &str, request: &str, response: &Value) -> std::io::Result<()> {
        let key = cache_key(model, request);
        let path = self.path(&key);
        let entry = json!({ "model": model, "request": request, "response": response });
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        fs::create_dir_all(path.parent().expect("cache entry has a parent"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        fs::rename(&tmp, &path)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats { hits: self.hits.load(Ordering::Relaxed), misses: self.misses.load(Ordering::Relaxed) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("m", "req"), None);
        cache.put("m", "req", &json!({"x": 0.1 + 0.2})).unwrap();
        assert_eq!(cache.get("m", "req"), Some(json!({"x": 0.1 + 0.2})));
        assert_eq!(cache.get("other", "req"), None);
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 2 });
        assert_ne!(cache_key("ab", "c"), cache_key("a", "bc"));
    }
}
