//! Replays the log table into per-action notebook snapshots and steps
//! through them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{CellType, EventKind, NotebookKey, Output};
use crate::normalize::LogRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub cell_id: String,
    pub cell_type: CellType,
    pub source: String,
    pub last_outputs: Vec<Output>,
    pub execution_count: u32,
    /// Present iff `execution_count > 0`.
    pub last_executed_at: Option<i64>,
}

impl CellState {
    pub fn new(cell_id: impl Into<String>, source: impl Into<String>) -> Self {
        CellState {
            cell_id: cell_id.into(),
            cell_type: CellType::Code,
            source: source.into(),
            last_outputs: Vec::new(),
            execution_count: 0,
            last_executed_at: None,
        }
    }
}

/// Ordered cell states immediately after one log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotebookSnapshot {
    pub notebook_name: String,
    /// `None` for the empty snapshot that precedes the first record.
    pub after_seq_no: Option<u64>,
    pub cells: Vec<CellState>,
}

impl NotebookSnapshot {
    pub fn empty(notebook_name: impl Into<String>) -> Self {
        NotebookSnapshot {
            notebook_name: notebook_name.into(),
            after_seq_no: None,
            cells: Vec::new(),
        }
    }

    pub fn cell(&self, cell_id: &str) -> Option<&CellState> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }

    fn position(&self, cell_id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.cell_id == cell_id)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("record {seq_no} references unknown cell `{cell_id}`")]
    UnknownCell { seq_no: u64, cell_id: String },
    #[error("record {seq_no} creates cell `{cell_id}` which already exists")]
    DuplicateCell { seq_no: u64, cell_id: String },
    #[error("record {seq_no} inserts at ordinal {ordinal} but the notebook has {len} cells")]
    OrdinalOutOfRange { seq_no: u64, ordinal: u64, len: usize },
    #[error("record {seq_no} does not follow snapshot at {after:?}")]
    OutOfOrder { seq_no: u64, after: Option<u64> },
    #[error("record {seq_no} ({kind}) is missing field `{field}`")]
    MissingField {
        seq_no: u64,
        kind: EventKind,
        field: &'static str,
    },
}

/// Apply one record to a snapshot.
pub fn apply(s: &NotebookSnapshot, r: &LogRecord) -> Result<NotebookSnapshot, ApplyError> {
    let mut next = s.clone();
    apply_in_place(&mut next, r)?;
    Ok(next)
}

fn apply_in_place(s: &mut NotebookSnapshot, r: &LogRecord) -> Result<(), ApplyError> {
    let seq_no = r.seq_no;
    if s.after_seq_no.is_some_and(|after| seq_no <= after) {
        return Err(ApplyError::OutOfOrder {
            seq_no,
            after: s.after_seq_no,
        });
    }
    let e = &r.event;
    let missing = |field| ApplyError::MissingField {
        seq_no,
        kind: e.kind,
        field,
    };
    s.after_seq_no = Some(seq_no);
    if e.kind.is_notebook_level() {
        return Ok(());
    }
    let cell_id = e.cell_id.as_deref().ok_or_else(|| missing("cell_id"))?;
    let unknown = || ApplyError::UnknownCell {
        seq_no,
        cell_id: cell_id.to_string(),
    };

    if e.kind == EventKind::CreateCell {
        if s.position(cell_id).is_some() {
            return Err(ApplyError::DuplicateCell {
                seq_no,
                cell_id: cell_id.to_string(),
            });
        }
        let ordinal = e.cell_ordinal.ok_or_else(|| missing("cell_ordinal"))?;
        if ordinal > s.cells.len() as u64 {
            return Err(ApplyError::OrdinalOutOfRange {
                seq_no,
                ordinal,
                len: s.cells.len(),
            });
        }
        let source = e.source.clone().ok_or_else(|| missing("source"))?;
        s.cells.insert(ordinal as usize, CellState::new(cell_id, source));
        return Ok(());
    }

    let idx = s.position(cell_id).ok_or_else(unknown)?;
    match e.kind {
        EventKind::DeleteCell => {
            s.cells.remove(idx);
        }
        EventKind::ExecuteCell => {
            let cell = &mut s.cells[idx];
            cell.source = e.source.clone().ok_or_else(|| missing("source"))?;
            cell.execution_count += 1;
            cell.last_executed_at = Some(e.timestamp);
            cell.last_outputs.clear();
        }
        EventKind::FinishExecute | EventKind::ErrorEvent => {
            s.cells[idx].last_outputs = e.outputs.clone().ok_or_else(|| missing("outputs"))?;
        }
        EventKind::RenderMarkdown => {
            let cell = &mut s.cells[idx];
            cell.cell_type = CellType::Markdown;
            cell.source = e.source.clone().ok_or_else(|| missing("source"))?;
            cell.last_outputs.clear();
        }
        EventKind::ChangeCellType => {
            let cell = &mut s.cells[idx];
            cell.cell_type = e.new_cell_type.ok_or_else(|| missing("new_cell_type"))?;
            cell.source = e.source.clone().ok_or_else(|| missing("source"))?;
            cell.last_outputs.clear();
        }
        EventKind::CreateCell
        | EventKind::NotebookLaunch
        | EventKind::NotebookInterrupt
        | EventKind::NotebookRestart => unreachable!(),
    }
    Ok(())
}

/// Records of one notebook together with the snapshot after each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct NotebookHistory {
    pub key: NotebookKey,
    pub records: Vec<LogRecord>,
    /// `snapshots[i]` is the state after `records[i]`.
    pub snapshots: Vec<NotebookSnapshot>,
}

impl NotebookHistory {
    pub fn initial(&self) -> NotebookSnapshot {
        NotebookSnapshot::empty(&self.key.notebook_name)
    }

    /// Snapshot before `records[i]` was applied.
    pub fn before(&self, i: usize) -> NotebookSnapshot {
        if i == 0 {
            self.initial()
        } else {
            self.snapshots[i - 1].clone()
        }
    }
}

/// Fold [`apply`] over the records of one notebook.
pub fn build_snapshots(log: &[LogRecord], key: &NotebookKey) -> Result<Vec<NotebookSnapshot>, ApplyError> {
    let mut state = NotebookSnapshot::empty(&key.notebook_name);
    let mut out = Vec::new();
    for r in log.iter().filter(|r| r.event.user_id == key.user_id && r.event.notebook_name == key.notebook_name) {
        apply_in_place(&mut state, r)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Notebook keys present in a log, in sorted order.
pub fn notebook_keys(log: &[LogRecord]) -> Vec<NotebookKey> {
    let mut keys: Vec<NotebookKey> = log.iter().map(|r| r.event.notebook_key()).collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Split a log by notebook and replay every notebook.
pub fn build_histories(log: &[LogRecord]) -> Result<Vec<NotebookHistory>, ApplyError> {
    notebook_keys(log)
        .into_iter()
        .map(|key| {
            let records: Vec<LogRecord> = log
                .iter()
                .filter(|r| r.event.user_id == key.user_id && r.event.notebook_name == key.notebook_name)
                .cloned()
                .collect();
            let snapshots = build_snapshots(&records, &key)?;
            Ok(NotebookHistory {
                key,
                records,
                snapshots,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepCommand {
    Next,
    Prev,
    Goto(usize),
    Export,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub cursor: usize,
    pub summary: String,
    pub notice: Option<String>,
    /// Set for [`StepCommand::Export`].
    pub notebook: Option<serde_json::Value>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("position {requested} is out of range 0..={len}")]
    OutOfRange { requested: usize, len: usize },
}

/// Navigation over a prebuilt history. Cursor `0` is the empty notebook,
/// cursor `k` is the state after the k-th record.
#[derive(Debug, Clone)]
pub struct Stepper {
    history: NotebookHistory,
    cursor: usize,
}

impl Stepper {
    pub fn new(history: NotebookHistory) -> Self {
        Stepper { history, cursor: 0 }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.history.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.records.is_empty()
    }

    pub fn current(&self) -> NotebookSnapshot {
        if self.cursor == 0 {
            self.history.initial()
        } else {
            self.history.snapshots[self.cursor - 1].clone()
        }
    }

    pub fn step(&mut self, command: StepCommand) -> Result<StepOutcome, StepError> {
        let mut notice = None;
        let mut notebook = None;
        match command {
            StepCommand::Next if self.cursor == self.len() => notice = Some("at end".to_string()),
            StepCommand::Next => self.cursor += 1,
            StepCommand::Prev if self.cursor == 0 => notice = Some("at start".to_string()),
            StepCommand::Prev => self.cursor -= 1,
            StepCommand::Goto(k) if k > self.len() => {
                return Err(StepError::OutOfRange {
                    requested: k,
                    len: self.len(),
                })
            }
            StepCommand::Goto(k) => self.cursor = k,
            StepCommand::Export => notebook = Some(crate::ipynb::export_ipynb(&self.current())),
        }
        Ok(StepOutcome {
            cursor: self.cursor,
            summary: self.summary(),
            notice,
            notebook,
        })
    }

    pub fn summary(&self) -> String {
        let snap = self.current();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} [{}/{}]",
            self.history.key,
            self.cursor,
            self.len()
        );
        match self.cursor.checked_sub(1).map(|i| &self.history.records[i]) {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "last action: #{} {} {} at {}",
                    r.seq_no,
                    r.event.kind,
                    r.event.cell_id.as_deref().unwrap_or("-"),
                    r.event.timestamp
                );
            }
            None => out.push_str("last action: none\n"),
        }
        for (i, c) in snap.cells.iter().enumerate() {
            let _ = writeln!(
                out,
                "  [{i}] {} {} {} chars, {} lines, executed {}x, {} outputs",
                c.cell_id,
                c.cell_type,
                c.source.chars().count(),
                c.source.lines().count(),
                c.execution_count,
                c.last_outputs.len()
            );
        }
        out
    }
}
