//! Append-only response cache.
//!
//! Every computed response is appended as one JSON line to a log file; the
//! in-memory index is rebuilt from that log on open. Concurrent requests
//! for the same key wait on a shared cell, so each key is computed at most
//! once per process.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub hits: u64,
    pub misses: u64,
    pub bytes: u64,
}

#[derive(Default)]
pub struct ResponseCache {
    cells: Mutex<HashMap<String, Arc<OnceCell<String>>>>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
    entries: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
    bytes: AtomicU64,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    /// Opens (or creates) a persistent cache log. A torn final line left by
    /// a crash is skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CpmError::io(parent, e))?;
        }
        let mut cells = HashMap::new();
        let mut bytes = 0u64;
        if path.exists() {
            let file = File::open(path).map_err(|e| CpmError::io(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| CpmError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        if !cells.contains_key(&entry.key) {
                            bytes += entry.response.len() as u64;
                            cells.insert(entry.key, Arc::new(OnceCell::with_value(entry.response)));
                        }
                    }
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable cache line"),
                }
            }
        }
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CpmError::io(path, e))?;
        let existing = std::fs::read(path).map_err(|e| CpmError::io(path, e))?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            log.write_all(b"\n").map_err(|e| CpmError::io(path, e))?;
        }
        Ok(ResponseCache {
            entries: AtomicU64::new(cells.len() as u64),
            cells: Mutex::new(cells),
            log: Some(Mutex::new(log)),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            bytes: AtomicU64::new(bytes),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.entries.load(Ordering::SeqCst),
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            bytes: self.bytes.load(Ordering::SeqCst),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let cells = self.cells.lock().expect("cache index poisoned");
        cells.get(key).and_then(|c| c.get().cloned())
    }

    /// Returns the cached response for `key`, computing and recording it on
    /// a miss. A failed computation leaves the key absent.
    pub fn get_or_compute<E>(
        &self,
        key: &str,
        compute: impl FnOnce() -> std::result::Result<String, E>,
    ) -> std::result::Result<String, E>
    where
        E: From<CpmError>,
    {
        let cell = {
            let mut cells = self.cells.lock().expect("cache index poisoned");
            cells.entry(key.to_string()).or_default().clone()
        };
        let mut computed = false;
        let value = cell.get_or_try_init(|| {
            computed = true;
            let response = compute()?;
            self.append(key, &response)?;
            Ok::<_, E>(response)
        })?;
        if computed {
            self.misses.fetch_add(1, Ordering::SeqCst);
        } else {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        Ok(value.clone())
    }

    fn append(&self, key: &str, response: &str) -> Result<()> {
        if let Some(log) = &self.log {
            let entry = CacheEntry {
                key: key.to_string(),
                response: response.to_string(),
                created_at: Utc::now(),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut file = log.lock().expect("cache log poisoned");
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes()).map_err(|e| CpmError::io(&path, e))?;
            file.flush().map_err(|e| CpmError::io(&path, e))?;
        }
        self.entries.fetch_add(1, Ordering::SeqCst);
        self.bytes.fetch_add(response.len() as u64, Ordering::SeqCst);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn fresh_cache_is_empty() {
        assert_eq!(ResponseCache::in_memory().stats(), CacheStats::default());
    }

    #[test]
    fn hit_and_miss_counting() {
        let cache = ResponseCache::in_memory();
        let v = cache.get_or_compute::<CpmError>("a", || Ok("yes".into())).unwrap();
        assert_eq!(v, "yes");
        let v = cache
            .get_or_compute::<CpmError>("a", || panic!("must not recompute"))
            .unwrap();
        assert_eq!(v, "yes");
        assert_eq!(
            cache.stats(),
            CacheStats {
                entries: 1,
                hits: 1,
                misses: 1,
                bytes: 3
            }
        );
    }

    #[test]
    fn failures_are_not_cached() {
        let cache = ResponseCache::in_memory();
        let err = cache.get_or_compute("a", || Err(CpmError::Backend("down".into())));
        assert!(err.is_err());
        assert_eq!(cache.get("a"), None);
        assert_eq!(cache.stats().entries, 0);
        cache.get_or_compute::<CpmError>("a", || Ok("no".into())).unwrap();
        assert_eq!(cache.get("a").as_deref(), Some("no"));
    }

    #[test]
    fn persisted_log_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.get_or_compute::<CpmError>("k1", || Ok("one".into())).unwrap();
            cache.get_or_compute::<CpmError>("k2", || Ok("two".into())).unwrap();
        }
        // Simulate a torn write.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\": \"k3\", \"resp").unwrap();
        drop(f);
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.stats().entries, 2);
        assert_eq!(cache.get("k2").as_deref(), Some("two"));
        let v = cache
            .get_or_compute::<CpmError>("k1", || panic!("must be cached"))
            .unwrap();
        assert_eq!(v, "one");
    }

    #[test]
    fn concurrent_requests_compute_once() {
        let cache = ResponseCache::in_memory();
        let calls = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    cache
                        .get_or_compute::<CpmError>("same", || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok("v".into())
                        })
                        .unwrap()
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let stats = cache.stats();
        assert_eq!((stats.misses, stats.hits), (1, 15));
    }
}
