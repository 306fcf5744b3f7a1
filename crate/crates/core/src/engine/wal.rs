//! Append-only JSON-lines log with a CRC32 per record.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const WAL_FILE: &str = "wal.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    EventIngested,
    Decision,
    Verdict,
    RulesLoaded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub payload: Value,
    pub checksum: u32,
}

#[derive(Debug, Error)]
pub enum WalError {
    #[error("corrupt WAL record {0}")]
    CorruptRecord(u64),
    #[error("WAL gap: expected record {0}")]
    GapDetected(u64),
    #[error("WAL i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Canonical payload bytes: serde_json with sorted object keys.
pub fn payload_bytes(payload: &Value) -> Vec<u8> {
    serde_json::to_vec(payload).expect("json values serialize")
}

pub fn checksum(payload: &Value) -> u32 {
    crc32fast::hash(&payload_bytes(payload))
}

impl WalRecord {
    pub fn new(seq: u64, kind: RecordKind, payload: Value) -> Self {
        let checksum = checksum(&payload);
        Self { seq, kind, payload, checksum }
    }

    pub fn verify(&self) -> bool {
        checksum(&self.payload) == self.checksum
    }
}

/// Checks checksums and dense numbering starting at `first`.
pub fn verify_sequence(records: &[WalRecord], first: u64) -> Result<(), WalError> {
    for (expected, r) in (first..).zip(records) {
        if r.seq != expected {
            return Err(WalError::GapDetected(expected));
        }
        if !r.verify() {
            return Err(WalError::CorruptRecord(r.seq));
        }
    }
    Ok(())
}

/// Reads and verifies a WAL file. A line that does not parse is reported as
/// corrupt under the sequence number it should have carried.
pub fn read_wal(path: &Path) -> Result<Vec<WalRecord>, WalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out: Vec<WalRecord> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let expected = out.last().map_or(1, |r| r.seq + 1);
        let record: WalRecord = serde_json::from_str(&line).map_err(|_| WalError::CorruptRecord(expected))?;
        out.push(record);
    }
    verify_sequence(&out, 1)?;
    Ok(out)
}

#[derive(Debug)]
enum Sink {
    Memory(Vec<WalRecord>),
    File { path: PathBuf, writer: BufWriter<File> },
}

/// The engine's log handle. In-memory logs keep records for inspection;
/// file logs stream JSON lines and keep nothing.
#[derive(Debug)]
pub struct Wal {
    sink: Sink,
    next_seq: u64,
}

impl Wal {
    pub fn in_memory() -> Self {
        Self { sink: Sink::Memory(Vec::new()), next_seq: 1 }
    }

    /// Opens `dir/wal.jsonl` for appending; `next_seq` continues after `last_seq`.
    pub fn open_file(dir: &Path, last_seq: u64) -> Result<Self, WalError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(WAL_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { sink: Sink::File { path, writer: BufWriter::with_capacity(1 << 16, file) }, next_seq: last_seq + 1 })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.sink {
            Sink::File { path, .. } => Some(path),
            Sink::Memory(_) => None,
        }
    }

    pub fn append(&mut self, kind: RecordKind, payload: Value) -> Result<u64, WalError> {
        let record = WalRecord::new(self.next_seq, kind, payload);
        match &mut self.sink {
            Sink::Memory(v) => v.push(record),
            Sink::File { writer, .. } => {
                serde_json::to_writer(&mut *writer, &record).map_err(std::io::Error::from)?;
                writer.write_all(b"\n")?;
            }
        }
        self.next_seq += 1;
        Ok(self.next_seq - 1)
    }

    pub fn flush(&mut self) -> Result<(), WalError> {
        if let Sink::File { writer, .. } = &mut self.sink {
            writer.flush()?;
        }
        Ok(())
    }

    /// Records held by an in-memory log, or the flushed file contents.
    pub fn records(&mut self) -> Result<Vec<WalRecord>, WalError> {
        match &mut self.sink {
            Sink::Memory(v) => Ok(v.clone()),
            Sink::File { path, writer } => {
                writer.flush()?;
                read_wal(path)
            }
        }
    }
}
