use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatMessage};

fn update_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

/// Content hash over the model name, each message's role and text, and the
/// SHA-256 of every attached image's bytes. Fields are length-prefixed so
/// that no two distinct requests share a preimage.
pub fn cache_key(model_name: &str, messages: &[ChatMessage]) -> Result<String, BackendError> {
    let mut hasher = Sha256::new();
    update_field(&mut hasher, model_name.as_bytes());
    hasher.update((messages.len() as u64).to_le_bytes());
    for m in messages {
        update_field(&mut hasher, m.role.as_str().as_bytes());
        update_field(&mut hasher, m.text.as_bytes());
        hasher.update((m.images.len() as u64).to_le_bytes());
        for image in &m.images {
            let bytes =
                std::fs::read(image).map_err(|_| BackendError::UnreadableImage(image.clone()))?;
            hasher.update(Sha256::digest(&bytes));
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: String,
}

/// Parses the append-only cache log. A malformed final line without a
/// trailing newline is an interrupted write and is dropped.
pub fn parse_cache_log(input: &str) -> Result<HashMap<String, String>, BackendError> {
    let mut map = HashMap::new();
    let terminated = input.ends_with('\n');
    let lines: Vec<&str> = input.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheLine>(line) {
            Ok(entry) => {
                map.insert(entry.key, entry.response);
            }
            Err(_) if i + 1 == lines.len() && !terminated => {
                log::warn!("dropping truncated cache entry on line {}", i + 1);
            }
            Err(e) => return Err(BackendError::Cache(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(map)
}

/// Response cache shared by all concurrent calls of a run.
///
/// Lookups take a read lock; inserts update the map and append one JSON
/// line to `responses.jsonl` under a single writer lock.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join("responses.jsonl");
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => {
                let mut entries = parse_cache_log(&text)?;
                if !text.is_empty() && !text.ends_with('\n') {
                    // Rewrite without the torn tail so appends stay line-aligned.
                    let mut clean = String::new();
                    for line in text.lines().filter(|l| serde_json::from_str::<CacheLine>(l).is_ok()) {
                        clean.push_str(line);
                        clean.push('\n');
                    }
                    std::fs::write(&path, clean).map_err(io)?;
                    entries = parse_cache_log(&std::fs::read_to_string(&path).map_err(io)?)?;
                }
                entries
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(io(e)),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(ResponseCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: &str, response: &str) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&CacheLine { key: key.into(), response: response.into() })
                .expect("cache line serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| BackendError::Cache(e.to_string()))?;
        }
        self.entries.write().expect("cache lock").insert(key.into(), response.into());
        Ok(())
    }
}
