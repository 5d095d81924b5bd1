use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Fingerprint, FinishReason, TransportReply};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedReply {
    pub fp: String,
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Successful replies keyed by request fingerprint, optionally appended to a
/// JSONL file so a resumed run replays earlier answers instead of asking
/// again. Unreadable lines in an existing file are skipped.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<Fingerprint, CachedReply>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                let Ok(entry) = serde_json::from_str::<CachedReply>(&line) else {
                    continue;
                };
                if let Ok(fp) = entry.fp.parse::<Fingerprint>() {
                    entries.insert(fp, entry);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<CachedReply> {
        self.entries.lock().unwrap().get(fp).cloned()
    }

    pub(crate) fn insert(&self, fp: Fingerprint, reply: &TransportReply) {
        let entry = CachedReply {
            fp: fp.to_string(),
            text: reply.text.clone(),
            finish_reason: reply.finish_reason,
        };
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&fp) {
            return;
        }
        if let Some(file) = self.file.lock().unwrap().as_mut() {
            if let Ok(line) = serde_json::to_string(&entry) {
                // A failed append only costs a repeated request on resume.
                let _ = writeln!(file, "{line}");
            }
        }
        entries.insert(fp, entry);
    }
}
