//! Append-only JSONL history, one file per device.
//!
//! Every hardware write becomes one line `{"ts":..,"device":"..","pin":..,
//! "value":".."}` in `<dir>/<device_id>.jsonl`. Files are never rewritten;
//! the latest-value cache is rebuilt from them on startup.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// One archived pin write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub ts: u64,
    pub device: String,
    pub pin: u8,
    pub value: String,
}

/// Device ids double as file names, so keep them to a safe alphabet.
pub fn valid_device_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
        && !id.starts_with('.')
}

#[derive(Debug)]
pub struct HistoryStore {
    dir: PathBuf,
    writers: HashMap<String, File>,
}

impl HistoryStore {
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), writers: HashMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn device_path(&self, device: &str) -> PathBuf {
        self.dir.join(format!("{device}.jsonl"))
    }

    /// Appends one entry to the device's log and flushes it.
    pub fn append(&mut self, entry: &HistoryEntry) -> io::Result<()> {
        if !valid_device_id(&entry.device) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("unsafe device id {:?}", entry.device),
            ));
        }
        let path = self.device_path(&entry.device);
        let file = match self.writers.entry(entry.device.clone()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(OpenOptions::new().create(true).append(true).open(path)?)
            }
        };
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.flush()
    }

    /// Every entry for one device, in arrival (file) order.
    pub fn read_device(&self, device: &str) -> io::Result<Vec<HistoryEntry>> {
        let path = self.device_path(device);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(entries)
    }

    /// One device's entries for `pin` with `from_ms <= ts < to_ms`.
    pub fn query(&self, device: &str, pin: u8, from_ms: u64, to_ms: u64) -> io::Result<Vec<HistoryEntry>> {
        Ok(self
            .read_device(device)?
            .into_iter()
            .filter(|e| e.pin == pin && e.ts >= from_ms && e.ts < to_ms)
            .collect())
    }

    /// Every entry of every device file in the directory, grouped by file
    /// (files visited in name order for determinism).
    pub fn scan_all(&self) -> io::Result<Vec<HistoryEntry>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        files.sort();
        let mut all = Vec::new();
        for path in files {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                all.push(serde_json::from_str(&line)?);
            }
        }
        Ok(all)
    }
}
