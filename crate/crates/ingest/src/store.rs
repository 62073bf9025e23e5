//! Append-only event storage.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use noteflow_core::event::{event_from_value, serialize_event, RawEvent};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Receipt metadata recorded with every stored event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    /// Server receive time, milliseconds since epoch.
    pub received_at: i64,
    /// Hash of the sender's address.
    pub source_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store line at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },
}

/// Export filter; all set fields must match. Time bounds are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub session: Option<String>,
    pub user: Option<String>,
    pub notebook: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
}

impl ExportFilter {
    pub fn matches(&self, e: &RawEvent) -> bool {
        self.session.as_ref().is_none_or(|s| *s == e.session_id)
            && self.user.as_ref().is_none_or(|u| *u == e.user_id)
            && self.notebook.as_ref().is_none_or(|n| *n == e.notebook_name)
            && self.from.is_none_or(|f| e.timestamp >= f)
            && self.to.is_none_or(|t| e.timestamp <= t)
    }
}

pub trait EventStore: Send + Sync {
    /// Append a batch. Events already seen (same session and client
    /// sequence) are acknowledged without being stored again. Returns once
    /// the batch is durable.
    fn append(&self, batch: Vec<(RawEvent, Receipt)>) -> Result<Vec<AcceptOutcome>, StoreError>;

    /// Matching events ordered by (session, client sequence).
    fn export(&self, filter: &ExportFilter) -> Result<Vec<RawEvent>, StoreError>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sort_for_export(events: &mut [RawEvent]) {
    events.sort_by(|a, b| (a.session_id.as_str(), a.seq).cmp(&(b.session_id.as_str(), b.seq)));
}

#[derive(Default)]
struct MemoryInner {
    events: Vec<(RawEvent, Receipt)>,
    seen: HashSet<(String, u64)>,
}

/// Volatile store for tests and ephemeral servers.
#[derive(Default)]
pub struct MemoryStore {
    inner: RwLock<MemoryInner>,
}

impl MemoryStore {
    pub fn new() -> MemoryStore {
        MemoryStore::default()
    }

    pub fn receipts(&self) -> Vec<Receipt> {
        self.inner.read().expect("poisoned").events.iter().map(|(_, r)| r.clone()).collect()
    }
}

impl EventStore for MemoryStore {
    fn append(&self, batch: Vec<(RawEvent, Receipt)>) -> Result<Vec<AcceptOutcome>, StoreError> {
        let mut inner = self.inner.write().expect("poisoned");
        let mut out = Vec::with_capacity(batch.len());
        for (e, r) in batch {
            if inner.seen.insert((e.session_id.clone(), e.seq)) {
                inner.events.push((e, r));
                out.push(AcceptOutcome::Stored);
            } else {
                out.push(AcceptOutcome::Duplicate);
            }
        }
        Ok(out)
    }

    fn export(&self, filter: &ExportFilter) -> Result<Vec<RawEvent>, StoreError> {
        let inner = self.inner.read().expect("poisoned");
        let mut events: Vec<RawEvent> = inner.events.iter().map(|(e, _)| e).filter(|e| filter.matches(e)).cloned().collect();
        sort_for_export(&mut events);
        Ok(events)
    }

    fn len(&self) -> usize {
        self.inner.read().expect("poisoned").events.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    session_id: String,
    seq: u64,
    offset: u64,
    len: u64,
}

struct Writer {
    file: File,
    index_file: File,
    seen: HashSet<(String, u64)>,
}

/// JSONL file store. Each line holds one event with its receipt; an `.idx`
/// sidecar maps sessions to byte ranges and is rebuilt from the log if it
/// is missing or stale.
pub struct FileStore {
    path: PathBuf,
    writer: Mutex<Writer>,
    index: RwLock<BTreeMap<String, Vec<(u64, u64)>>>,
    /// Bytes of the log known to be durable; readers never look past it.
    committed: AtomicU64,
    count: AtomicU64,
}

fn index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    PathBuf::from(p)
}

fn encode_line(e: &RawEvent, r: &Receipt) -> String {
    format!(
        "{{\"received_at\":{},\"source_hash\":{},\"event\":{}}}\n",
        r.received_at,
        Value::String(r.source_hash.clone()),
        serialize_event(e)
    )
}

fn decode_line(line: &str, offset: u64) -> Result<(RawEvent, Receipt), StoreError> {
    let corrupt = |message: String| StoreError::Corrupt { offset, message };
    let mut v: Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
    let obj = v.as_object_mut().ok_or_else(|| corrupt("not an object".into()))?;
    let received_at = obj.get("received_at").and_then(Value::as_i64).ok_or_else(|| corrupt("received_at".into()))?;
    let source_hash = obj.get("source_hash").and_then(Value::as_str).ok_or_else(|| corrupt("source_hash".into()))?.to_string();
    let event = event_from_value(obj.remove("event").ok_or_else(|| corrupt("event".into()))?).map_err(|e| corrupt(e.to_string()))?;
    Ok((event, Receipt { received_at, source_hash }))
}

impl FileStore {
    /// Open or create a store. A torn final line from an interrupted write is cut off.
    pub fn open(path: impl Into<PathBuf>) -> Result<FileStore, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            file.set_len(complete as u64)?;
            file.sync_all()?;
        }

        let entries = match Self::load_index(&index_path(&path), complete as u64) {
            Some(entries) => entries,
            None => {
                let entries = Self::scan(&bytes[..complete])?;
                let mut idx = File::create(index_path(&path))?;
                for e in &entries {
                    writeln!(idx, "{}", serde_json::to_string(e).expect("json"))?;
                }
                idx.sync_all()?;
                entries
            }
        };
        let mut seen = HashSet::new();
        let mut index: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
        for e in &entries {
            seen.insert((e.session_id.clone(), e.seq));
            index.entry(e.session_id.clone()).or_default().push((e.offset, e.len));
        }
        let index_file = OpenOptions::new().create(true).append(true).open(index_path(&path))?;
        Ok(FileStore {
            path,
            count: AtomicU64::new(entries.len() as u64),
            writer: Mutex::new(Writer { file, index_file, seen }),
            index: RwLock::new(index),
            committed: AtomicU64::new(complete as u64),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    // Sidecar entries, if they cover exactly the durable log.
    fn load_index(path: &Path, log_len: u64) -> Option<Vec<IndexEntry>> {
        let file = File::open(path).ok()?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            entries.push(serde_json::from_str::<IndexEntry>(&line.ok()?).ok()?);
        }
        let end = entries.last().map_or(0, |e| e.offset + e.len);
        (end == log_len).then_some(entries)
    }

    fn scan(bytes: &[u8]) -> Result<Vec<IndexEntry>, StoreError> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for raw in bytes.split_inclusive(|b| *b == b'\n') {
            let text = std::str::from_utf8(raw).map_err(|e| StoreError::Corrupt { offset, message: e.to_string() })?;
            let (event, _) = decode_line(text.trim_end(), offset)?;
            entries.push(IndexEntry { session_id: event.session_id, seq: event.seq, offset, len: raw.len() as u64 });
            offset += raw.len() as u64;
        }
        Ok(entries)
    }

    fn read_range(&self, file: &mut File, offset: u64, len: u64) -> Result<(RawEvent, Receipt), StoreError> {
        let mut buf = vec![0u8; len as usize];
        file.seek(SeekFrom::Start(offset))?;
        file.read_exact(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| StoreError::Corrupt { offset, message: e.to_string() })?;
        decode_line(text.trim_end(), offset)
    }

    /// Every stored event with its receipt, in arrival order.
    pub fn entries(&self) -> Result<Vec<(RawEvent, Receipt)>, StoreError> {
        let committed = self.committed.load(Ordering::Acquire);
        let mut file = File::open(&self.path)?;
        let mut bytes = vec![0u8; committed as usize];
        file.read_exact(&mut bytes)?;
        let mut out = Vec::new();
        let mut offset = 0u64;
        for raw in bytes.split_inclusive(|b| *b == b'\n') {
            let text = std::str::from_utf8(raw).map_err(|e| StoreError::Corrupt { offset, message: e.to_string() })?;
            out.push(decode_line(text.trim_end(), offset)?);
            offset += raw.len() as u64;
        }
        Ok(out)
    }
}

impl EventStore for FileStore {
    fn append(&self, batch: Vec<(RawEvent, Receipt)>) -> Result<Vec<AcceptOutcome>, StoreError> {
        let mut w = self.writer.lock().expect("poisoned");
        let mut offset = self.committed.load(Ordering::Acquire);
        let mut data = String::new();
        let mut index_lines = String::new();
        let mut fresh = Vec::new();
        let mut outcomes = Vec::with_capacity(batch.len());
        let mut batch_seen = HashSet::new();
        for (e, r) in &batch {
            let key = (e.session_id.clone(), e.seq);
            if w.seen.contains(&key) || !batch_seen.insert(key.clone()) {
                outcomes.push(AcceptOutcome::Duplicate);
                continue;
            }
            let line = encode_line(e, r);
            let entry = IndexEntry { session_id: e.session_id.clone(), seq: e.seq, offset, len: line.len() as u64 };
            index_lines.push_str(&serde_json::to_string(&entry).expect("json"));
            index_lines.push('\n');
            offset += line.len() as u64;
            data.push_str(&line);
            fresh.push(entry);
            outcomes.push(AcceptOutcome::Stored);
        }
        if fresh.is_empty() {
            return Ok(outcomes);
        }
        w.file.write_all(data.as_bytes())?;
        w.file.sync_data()?;
        w.index_file.write_all(index_lines.as_bytes())?;
        w.index_file.flush()?;
        {
            let mut index = self.index.write().expect("poisoned");
            for e in &fresh {
                index.entry(e.session_id.clone()).or_default().push((e.offset, e.len));
            }
        }
        for e in fresh {
            w.seen.insert((e.session_id, e.seq));
            self.count.fetch_add(1, Ordering::AcqRel);
        }
        self.committed.store(offset, Ordering::Release);
        Ok(outcomes)
    }

    fn export(&self, filter: &ExportFilter) -> Result<Vec<RawEvent>, StoreError> {
        let mut events = match &filter.session {
            // the sidecar lets a session export read only its own lines
            Some(session) => {
                let ranges = self.index.read().expect("poisoned").get(session).cloned().unwrap_or_default();
                let mut file = File::open(&self.path)?;
                let mut out = Vec::with_capacity(ranges.len());
                for (offset, len) in ranges {
                    out.push(self.read_range(&mut file, offset, len)?.0);
                }
                out
            }
            None => self.entries()?.into_iter().map(|(e, _)| e).collect(),
        };
        events.retain(|e| filter.matches(e));
        sort_for_export(&mut events);
        Ok(events)
    }

    fn len(&self) -> usize {
        self.count.load(Ordering::Acquire) as usize
    }
}
