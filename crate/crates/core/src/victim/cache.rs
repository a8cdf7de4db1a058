//! Persistent victim-response cache.
//!
//! An append-only JSONL file of `(victim-id, query-hash, query, probs)`
//! records, mirrored in memory. The RL search revisits the same sequences
//! constantly, so the cache is the dominant query-cost saver, and replaying
//! a run against a warm cache issues zero fresh victim queries.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ClassDistribution;
use crate::error::Result;
use crate::util::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    victim: String,
    query_hash: String,
    query: String,
    probs: Vec<f64>,
}

pub struct QueryCache {
    map: Mutex<HashMap<(String, String), Vec<f64>>>,
    writer: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl QueryCache {
    /// A purely in-memory cache.
    pub fn in_memory() -> Self {
        QueryCache { map: Mutex::new(HashMap::new()), writer: None, path: None }
    }

    /// Opens (or creates) a persistent cache file and loads every record.
    /// A truncated trailing line from an interrupted run is skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        map.insert((rec.victim, rec.query), rec.probs);
                    }
                    Err(_) => continue,
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(QueryCache {
            map: Mutex::new(map),
            writer: Some(Mutex::new(file)),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, victim_id: &str, query: &str) -> Option<ClassDistribution> {
        let map = self.map.lock().unwrap();
        map.get(&(victim_id.to_string(), query.to_string()))
            .map(|probs| ClassDistribution::new(probs.clone()).expect("cached probs valid"))
    }

    /// Inserts a record. Duplicate inserts of the same key are idempotent in
    /// memory; at most the file gains a redundant line.
    pub fn put(&self, victim_id: &str, query: &str, dist: &ClassDistribution) -> Result<()> {
        let key = (victim_id.to_string(), query.to_string());
        {
            let mut map = self.map.lock().unwrap();
            if map.contains_key(&key) {
                return Ok(());
            }
            map.insert(key, dist.probs().to_vec());
        }
        if let Some(writer) = &self.writer {
            let record = CacheRecord {
                victim: victim_id.to_string(),
                query_hash: sha256_hex(query.as_bytes()),
                query: query.to_string(),
                probs: dist.probs().to_vec(),
            };
            let mut file = writer.lock().unwrap();
            writeln!(file, "{}", serde_json::to_string(&record)?)?;
            file.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_memory_round_trip() {
        let cache = QueryCache::in_memory();
        let dist = ClassDistribution::new(vec![0.25, 0.75]).unwrap();
        assert!(cache.get("v", "q").is_none());
        cache.put("v", "q", &dist).unwrap();
        assert_eq!(cache.get("v", "q").unwrap(), dist);
        assert!(cache.get("other", "q").is_none());
    }

    #[test]
    fn persistent_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let dist = ClassDistribution::new(vec![0.1, 0.9]).unwrap();
        {
            let cache = QueryCache::open(&path).unwrap();
            cache.put("v", "some query", &dist).unwrap();
            cache.put("v", "some query", &dist).unwrap(); // idempotent
        }
        let cache = QueryCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("v", "some query").unwrap(), dist);
    }

    #[test]
    fn truncated_trailing_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = QueryCache::open(&path).unwrap();
            cache
                .put("v", "q1", &ClassDistribution::new(vec![0.5, 0.5]).unwrap())
                .unwrap();
        }
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        write!(file, "{{\"victim\":\"v\",\"query_ha").unwrap();
        drop(file);
        let cache = QueryCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn concurrent_inserts_are_consistent() {
        let cache = std::sync::Arc::new(QueryCache::in_memory());
        let dist = ClassDistribution::new(vec![0.5, 0.5]).unwrap();
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let cache = cache.clone();
                let dist = dist.clone();
                scope.spawn(move || {
                    for i in 0..100 {
                        cache.put("v", &format!("q{i}"), &dist).unwrap();
                        assert!(cache.get("v", &format!("q{i}")).is_some());
                    }
                });
            }
        });
        assert_eq!(cache.len(), 100);
    }
}
