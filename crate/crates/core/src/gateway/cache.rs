//! Append-only JSONL completion cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, GatewayError};

/// One cached response, immutable once written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt_id: String,
    pub model_tag: String,
    pub sample_index: u32,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<(String, f64)>>,
}

/// Stable digest of the request fields that determine a response.
pub fn cache_key(req: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        prompt_id: &'a str,
        rendered_prompt: &'a str,
        model_tag: &'a str,
        temperature: f64,
        max_tokens: u32,
        sample_index: u32,
    }
    let fields = KeyFields {
        prompt_id: &req.prompt_id,
        rendered_prompt: &req.rendered_prompt,
        model_tag: &req.model_tag,
        temperature: req.sampling.temperature,
        max_tokens: req.sampling.max_tokens,
        sample_index: req.sample_index,
    };
    let json = serde_json::to_vec(&fields).expect("key fields serialize");
    hex::encode(Sha256::digest(&json))
}

/// Concurrent readers, serialized appends.
#[derive(Debug)]
pub struct Cache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl Cache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads `path` if it exists; appends go to the same file.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let io = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Cache(format!("{}:{}: {e}", path.display(), n + 1)))?;
                entries.entry(e.key.clone()).or_insert(e);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `entry` unless its key is already present (first write wins).
    pub fn insert(&self, entry: CacheEntry) -> Result<(), GatewayError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self.get(&entry.key).is_some() {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let io = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
            if writer.is_none() {
                let f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
                *writer = Some(f);
            }
            let f = writer.as_mut().expect("writer opened above");
            let mut line = serde_json::to_string(&entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io)?;
            f.flush().map_err(io)?;
        }
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(entry.key.clone(), entry);
        Ok(())
    }

    /// Rewrites the backing file sorted by key, so caches recorded by
    /// concurrent workers are byte-stable.
    pub fn rewrite_sorted(&self) -> Result<(), GatewayError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        *writer = None;
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        let mut sorted: Vec<&CacheEntry> = entries.values().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        let mut body = String::new();
        for e in sorted {
            body.push_str(&serde_json::to_string(e).map_err(|e| GatewayError::Cache(e.to_string()))?);
            body.push('\n');
        }
        crate::pipeline::write_atomic(path, body.as_bytes())
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Sampling;

    fn req(prompt: &str, idx: u32) -> CompletionRequest {
        CompletionRequest {
            prompt_id: "rollout.v1".into(),
            rendered_prompt: prompt.into(),
            model_tag: "m".into(),
            sampling: Sampling {
                temperature: 0.6,
                max_tokens: 512,
            },
            want_token_probs: true,
            sample_index: idx,
        }
    }

    #[test]
    fn key_is_stable_and_field_sensitive() {
        let k = cache_key(&req("hello", 0));
        assert_eq!(k, cache_key(&req("hello", 0)));
        assert_eq!(k.len(), 64);
        assert_ne!(k, cache_key(&req("hello", 1)));
        assert_ne!(k, cache_key(&req("hello!", 0)));
        // token-probability preference does not change the response identity
        let mut r = req("hello", 0);
        r.want_token_probs = false;
        assert_eq!(k, cache_key(&r));
    }

    #[test]
    fn persist_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = Cache::open(&path).unwrap();
        let entry = CacheEntry {
            key: "k1".into(),
            prompt_id: "p".into(),
            model_tag: "m".into(),
            sample_index: 0,
            response_text: "first".into(),
            token_probs: Some(vec![("a".into(), 0.5)]),
        };
        cache.insert(entry.clone()).unwrap();
        cache
            .insert(CacheEntry {
                response_text: "second".into(),
                ..entry.clone()
            })
            .unwrap();
        let reloaded = Cache::open(&path).unwrap();
        assert_eq!(reloaded.len(), 1);
        assert_eq!(reloaded.get("k1").unwrap(), entry);
    }
}
