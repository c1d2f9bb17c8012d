use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    d: usize,
    values: Vec<f64>,
}

/// Content-addressed store of pooled feature vectors, optionally backed by
/// an append-only JSONL file.
///
/// Reads go through an in-memory map; each `put` appends one complete line
/// under the writer lock.
pub struct FeatureCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    writer: Mutex<Option<File>>,
}

impl FeatureCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (or creates) a cache file. Records that fail to parse or whose
    /// length disagrees with `d` are skipped with a warning.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) if rec.values.len() == rec.d && rec.values.iter().all(|x| x.is_finite()) => {
                        entries.insert(rec.key, rec.values);
                    }
                    Ok(_) => log::warn!("{}: line {}: record length does not match d, skipping", path.display(), idx + 1),
                    Err(e) => log::warn!("{}: line {}: corrupt cache record ({e}), skipping", path.display(), idx + 1),
                }
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn put(&self, key: &str, values: &[f64]) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_vec(&CacheRecord {
                key: key.to_string(),
                d: values.len(),
                values: values.to_vec(),
            })?;
            line.push(b'\n');
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            file.write_all(&line).map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key.to_string(), values.to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly_through_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.cache");
        let values = vec![0.1 + 0.2, -1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0];
        {
            let cache = FeatureCache::open(&path).unwrap();
            assert!(cache.get("k").is_none());
            cache.put("k", &values).unwrap();
            assert_eq!(cache.get("k").unwrap(), values);
        }
        let reopened = FeatureCache::open(&path).unwrap();
        let got = reopened.get("k").unwrap();
        assert_eq!(
            got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(reopened.get("other").is_none());
    }

    #[test]
    fn corrupt_records_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.cache");
        std::fs::write(
            &path,
            "{\"key\":\"a\",\"d\":2,\"values\":[1.0,2.0]}\n{\"key\":\"b\",\"d\":3,\"values\":[1.0]}\ngarbage{\n",
        )
        .unwrap();
        let cache = FeatureCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("a").unwrap(), vec![1.0, 2.0]);
        assert!(cache.get("b").is_none());
    }
}
