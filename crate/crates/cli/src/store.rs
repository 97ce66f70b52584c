//! Battery-passport store: newline-delimited JSON, append-only, one entry per
//! delivered diagnostic packet. Every access takes an advisory lock on the
//! file; appends are synced before the lock is released.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wbms_core::diagnostics::{DiagPacket, PackId, UseCase};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassportEntry {
    pub pack_id: PackId,
    /// Newest report timestamp in the packet.
    pub received_at: u64,
    pub session_id: String,
    pub source: UseCase,
    pub diag: DiagPacket,
}

impl PassportEntry {
    pub fn mentions(&self, pack: &PackId) -> bool {
        self.pack_id == *pack || self.diag.reports.iter().any(|r| r.pack_id == *pack)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("store {path} corrupted at line {line}: {detail}")]
    Corrupted {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

pub struct Store {
    path: PathBuf,
}

/// An exclusively locked store, for read-modify-append sequences.
pub struct LockedStore<'a> {
    store: &'a Store,
    file: File,
}

impl Store {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn lock(&self) -> Result<LockedStore<'_>, StoreError> {
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&self.path)
            .map_err(|e| self.io(e))?;
        file.lock().map_err(|e| self.io(e))?;
        Ok(LockedStore { store: self, file })
    }

    /// Reads every entry under a shared lock. A missing file is an empty store.
    pub fn read_all(&self) -> Result<Vec<PassportEntry>, StoreError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        file.lock_shared().map_err(|e| self.io(e))?;
        parse(self, &file)
    }

    /// Entries mentioning `pack`, oldest first; ties keep append order.
    pub fn history(&self, pack: &PackId) -> Result<Vec<PassportEntry>, StoreError> {
        let mut entries: Vec<PassportEntry> = self
            .read_all()?
            .into_iter()
            .filter(|e| e.mentions(pack))
            .collect();
        entries.sort_by_key(|e| e.received_at);
        Ok(entries)
    }
}

fn parse(store: &Store, mut file: &File) -> Result<Vec<PassportEntry>, StoreError> {
    file.seek(SeekFrom::Start(0)).map_err(|e| store.io(e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::Corrupted {
            path: store.path.clone(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| StoreError::Corrupted {
            path: store.path.clone(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

impl LockedStore<'_> {
    pub fn entries(&self) -> Result<Vec<PassportEntry>, StoreError> {
        parse(self.store, &self.file)
    }

    pub fn append(&mut self, entry: &PassportEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).expect("entries serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| self.store.io(e))?;
        self.file.sync_data().map_err(|e| self.store.io(e))
    }
}
