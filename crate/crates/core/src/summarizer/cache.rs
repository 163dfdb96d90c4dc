//! JSON Lines store of per-turn summaries.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corpus::AnnotatedExample;
use crate::error::{Error, Result};

use super::Summary;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryCache {
    entries: BTreeMap<(String, usize), Summary>,
    path: Option<PathBuf>,
}

impl SummaryCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the cache backed by `path`, loading existing entries if the file
    /// exists. A later line for the same key replaces an earlier one.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self {
            entries: BTreeMap::new(),
            path: Some(path.clone()),
        };
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let summary: Summary = serde_json::from_str(&line).map_err(|e| {
                    Error::Parse(format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                cache.insert(summary);
            }
        }
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, conversation_id: &str, turn_index: usize) -> Option<&Summary> {
        self.entries.get(&(conversation_id.to_string(), turn_index))
    }

    pub fn get_example(&self, example: &AnnotatedExample) -> Option<&Summary> {
        self.get(&example.conversation.id, example.turn_index)
    }

    pub fn contains_example(&self, example: &AnnotatedExample) -> bool {
        self.get_example(example).is_some()
    }

    pub fn insert(&mut self, summary: Summary) {
        self.entries.insert(
            (summary.conversation_id.clone(), summary.turn_index),
            summary,
        );
    }

    pub fn iter(&self) -> impl Iterator<Item = &Summary> {
        self.entries.values()
    }

    /// Inserts and appends the entry to the backing file, if any.
    pub(crate) fn insert_persisted(&mut self, summary: Summary) -> Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&summary).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        self.insert(summary);
        Ok(())
    }

    /// Rewrites the backing file with entries in key order.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        self.write_to(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut out = BufWriter::new(file);
            for summary in self.entries.values() {
                let line =
                    serde_json::to_string(summary).map_err(|e| Error::Parse(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| Error::io(&tmp, e))?;
            }
            out.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
