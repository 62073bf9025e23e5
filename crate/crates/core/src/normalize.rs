//! Repairs raw-event anomalies and produces the chronological log table.
//!
//! Events are grouped per notebook ([`NotebookKey`]), ordered by
//! `(timestamp, session_id, seq, kind priority)`, and run through the repair
//! rules listed by [`repair_rules`]. Records that cannot be repaired are
//! quarantined as [`Reject`]s, never dropped.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::event::{event_from_value, serialize_event, EventError, EventKind, NotebookKey, RawEvent};

/// A named repair heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepairRule {
    pub name: &'static str,
    pub description: &'static str,
}

pub const DUPLICATE_DROP: &str = "duplicate_drop";
pub const RENDER_BEFORE_CREATE: &str = "render_before_create";
pub const SYNTHESIZE_MISSING_CREATE: &str = "synthesize_missing_create";
pub const CLAMP_CREATE_ORDINAL: &str = "clamp_create_ordinal";
pub const QUARANTINE_ORPHAN: &str = "quarantine_orphan_reference";

const RULES: [RepairRule; 5] = [
    RepairRule {
        name: DUPLICATE_DROP,
        description: "keep one event per (session_id, seq); later copies go to the reject list",
    },
    RepairRule {
        name: RENDER_BEFORE_CREATE,
        description: "a render_markdown seen before its cell's create_cell pulls the create in front of it, \
                      taking the render's timestamp",
    },
    RepairRule {
        name: SYNTHESIZE_MISSING_CREATE,
        description: "insert a create_cell immediately before the first execute/render/change_cell_type of a \
                      cell that is not alive, copying its source, ordinal and timestamp",
    },
    RepairRule {
        name: CLAMP_CREATE_ORDINAL,
        description: "a create_cell ordinal beyond the current cell count is clamped to the end of the notebook",
    },
    RepairRule {
        name: QUARANTINE_ORPHAN,
        description: "delete/finish/error for a cell that is not alive, and create_cell for a cell that \
                      already is, are moved to the reject list",
    },
];

/// The repair rules in application order.
pub fn repair_rules() -> &'static [RepairRule] {
    &RULES
}

/// Extras key used to carry repair tags when a log record is fed back in as a raw event.
pub const REPAIRED_EXTRA: &str = "repaired";

/// One row of the log table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    #[serde(flatten)]
    pub event: RawEvent,
    /// Global 0-based position in the normalized log.
    pub seq_no: u64,
    /// Names of the repair rules that touched this record, in rule order.
    pub repaired: Vec<String>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("LogRecord serialization is infallible")
    }

    pub fn from_line(line: &str) -> Result<LogRecord, EventError> {
        let value: Value = serde_json::from_str(line).map_err(|e| EventError::Syntax {
            offset: e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        Self::from_value(value)
    }

    pub fn from_value(mut value: Value) -> Result<LogRecord, EventError> {
        use crate::event::SchemaError;
        let obj = value.as_object_mut().ok_or(SchemaError::NotAnObject)?;
        let seq_no = obj
            .remove("seq_no")
            .and_then(|v| v.as_u64())
            .ok_or(SchemaError::MissingField {
                field: "seq_no",
                kind: "log record".into(),
            })?;
        let repaired = match obj.remove("repaired") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => serde_json::from_value(v).map_err(|e| SchemaError::InvalidField {
                field: "repaired",
                reason: e.to_string(),
            })?,
        };
        Ok(LogRecord {
            event: event_from_value(value)?,
            seq_no,
            repaired,
        })
    }

    /// The raw event with this record's repair tags stashed in `extras`, so a
    /// second normalization pass reproduces the same table.
    pub fn to_raw_event(&self) -> RawEvent {
        let mut event = self.event.clone();
        if !self.repaired.is_empty() {
            event.extras.insert(
                REPAIRED_EXTRA.to_string(),
                Value::Array(self.repaired.iter().cloned().map(Value::String).collect()),
            );
        }
        event
    }

    pub fn timestamp(&self) -> i64 {
        self.event.timestamp
    }

    pub fn kind(&self) -> EventKind {
        self.event.kind
    }

    pub fn was_synthesized(&self) -> bool {
        self.event.kind == EventKind::CreateCell
            && self.repaired.iter().any(|r| r == SYNTHESIZE_MISSING_CREATE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Duplicate,
    /// References a cell that was never created and carries no source to synthesize from.
    UnknownCell,
    /// References a cell that was deleted earlier in the stream.
    ReferenceAfterDelete,
    /// Creates a cell id that is already alive.
    DuplicateCreate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub reason: RejectReason,
    pub event: RawEvent,
}

impl Reject {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("Reject serialization is infallible")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Normalized {
    pub records: Vec<LogRecord>,
    pub rejects: Vec<Reject>,
    /// Records created by `synthesize_missing_create` during this pass.
    pub synthesized: usize,
}

impl Normalized {
    pub fn duplicates(&self) -> usize {
        self.rejects
            .iter()
            .filter(|r| r.reason == RejectReason::Duplicate)
            .count()
    }

    /// Input events that ended up in the table (synthesized records excluded).
    pub fn kept_inputs(&self) -> usize {
        self.records.len() - self.synthesized
    }
}

/// Tie-break order for events sharing a timestamp and client sequence.
pub fn kind_priority(kind: EventKind) -> u8 {
    match kind {
        EventKind::NotebookLaunch => 0,
        EventKind::CreateCell => 1,
        EventKind::ChangeCellType => 2,
        EventKind::ExecuteCell => 3,
        EventKind::FinishExecute => 4,
        EventKind::ErrorEvent => 5,
        EventKind::RenderMarkdown => 6,
        EventKind::DeleteCell => 7,
        EventKind::NotebookInterrupt => 8,
        EventKind::NotebookRestart => 9,
    }
}

#[derive(Debug, Clone)]
struct Entry {
    event: RawEvent,
    tags: BTreeSet<usize>,
    canonical: String,
}

impl Entry {
    fn new(mut event: RawEvent) -> Entry {
        let mut tags = BTreeSet::new();
        if let Some(Value::Array(prior)) = event.extras.remove(REPAIRED_EXTRA) {
            for tag in prior.iter().filter_map(Value::as_str) {
                if let Some(idx) = RULES.iter().position(|r| r.name == tag) {
                    tags.insert(idx);
                }
            }
        }
        let canonical = serialize_event(&event);
        Entry {
            event,
            tags,
            canonical,
        }
    }

    fn tag(&mut self, rule: &str) {
        let idx = RULES
            .iter()
            .position(|r| r.name == rule)
            .expect("known rule name");
        self.tags.insert(idx);
    }

    fn is_synthesized(&self) -> bool {
        self.event.kind == EventKind::CreateCell
            && self
                .tags
                .contains(&RULES.iter().position(|r| r.name == SYNTHESIZE_MISSING_CREATE).unwrap())
    }

    fn order_key(&self) -> (i64, &str, u64, u8, &str) {
        (
            self.event.timestamp,
            &self.event.session_id,
            self.event.seq,
            kind_priority(self.event.kind),
            &self.canonical,
        )
    }

    fn into_record(self, seq_no: u64) -> LogRecord {
        LogRecord {
            event: self.event,
            seq_no,
            repaired: self.tags.into_iter().map(|i| RULES[i].name.to_string()).collect(),
        }
    }
}

/// Build the log table from events in arbitrary arrival order.
pub fn normalize(events: impl IntoIterator<Item = RawEvent>) -> Normalized {
    let mut entries: Vec<Entry> = events.into_iter().map(Entry::new).collect();
    let mut rejects = Vec::new();

    // duplicate_drop
    entries.sort_by(|a, b| {
        (a.event.dedup_key(), a.is_synthesized(), a.order_key())
            .cmp(&(b.event.dedup_key(), b.is_synthesized(), b.order_key()))
    });
    let mut seen: HashSet<(String, u64, bool)> = HashSet::new();
    let mut streams: BTreeMap<NotebookKey, Vec<Entry>> = BTreeMap::new();
    for entry in entries {
        let key = (entry.event.session_id.clone(), entry.event.seq, entry.is_synthesized());
        if seen.insert(key) {
            streams.entry(entry.event.notebook_key()).or_default().push(entry);
        } else {
            rejects.push(Reject {
                reason: RejectReason::Duplicate,
                event: entry.event,
            });
        }
    }

    let mut synthesized = 0;
    let mut merged: Vec<(i64, NotebookKey, usize, Entry)> = Vec::new();
    for (key, mut stream) in streams {
        stream.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        render_before_create(&mut stream);
        let (kept, stream_rejects, synth) = replay_cells(stream);
        synthesized += synth;
        rejects.extend(stream_rejects);
        merged.extend(
            kept.into_iter()
                .enumerate()
                .map(|(i, e)| (e.event.timestamp, key.clone(), i, e)),
        );
    }
    merged.sort_by(|a, b| (a.0, &a.1, a.2).cmp(&(b.0, &b.1, b.2)));

    let records = merged
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, _, e))| e.into_record(i as u64))
        .collect();
    rejects.sort_by(|a, b| {
        (a.reason, serialize_event(&a.event)).cmp(&(b.reason, serialize_event(&b.event)))
    });
    Normalized {
        records,
        rejects,
        synthesized,
    }
}

fn render_before_create(stream: &mut Vec<Entry>) {
    let mut alive: HashSet<String> = HashSet::new();
    let mut i = 0;
    while i < stream.len() {
        let kind = stream[i].event.kind;
        let cell = stream[i].event.cell_id.clone();
        match (kind, cell) {
            (EventKind::CreateCell, Some(c)) => {
                alive.insert(c);
            }
            (EventKind::DeleteCell, Some(c)) => {
                alive.remove(&c);
            }
            (EventKind::RenderMarkdown, Some(c)) if !alive.contains(&c) => {
                let later_create = stream[i + 1..]
                    .iter()
                    .take_while(|e| {
                        !(e.event.kind == EventKind::DeleteCell && e.event.cell_id() == Some(&c))
                    })
                    .position(|e| {
                        e.event.kind == EventKind::CreateCell && e.event.cell_id() == Some(&c)
                    });
                if let Some(offset) = later_create {
                    let mut create = stream.remove(i + 1 + offset);
                    create.event.timestamp = stream[i].event.timestamp;
                    create.tag(RENDER_BEFORE_CREATE);
                    stream[i].tag(RENDER_BEFORE_CREATE);
                    stream.insert(i, create);
                    alive.insert(c);
                    // skip over the render we just processed
                    i += 1;
                }
            }
            _ => {}
        }
        i += 1;
    }
}

fn replay_cells(stream: Vec<Entry>) -> (Vec<Entry>, Vec<Reject>, usize) {
    let mut order: Vec<String> = Vec::new();
    let mut deleted: HashSet<String> = HashSet::new();
    let mut kept = Vec::with_capacity(stream.len());
    let mut rejects = Vec::new();
    let mut synthesized = 0;

    let missing = |deleted: &HashSet<String>, cell: &str| {
        if deleted.contains(cell) {
            RejectReason::ReferenceAfterDelete
        } else {
            RejectReason::UnknownCell
        }
    };

    for mut entry in stream {
        let Some(cell) = entry.event.cell_id.clone() else {
            kept.push(entry);
            continue;
        };
        let alive = order.contains(&cell);
        match entry.event.kind {
            EventKind::CreateCell => {
                if alive {
                    rejects.push(Reject {
                        reason: RejectReason::DuplicateCreate,
                        event: entry.event,
                    });
                    continue;
                }
                let ordinal = entry.event.cell_ordinal.unwrap_or(order.len() as u64);
                if ordinal > order.len() as u64 {
                    entry.event.cell_ordinal = Some(order.len() as u64);
                    entry.tag(CLAMP_CREATE_ORDINAL);
                }
                order.insert(entry.event.cell_ordinal.unwrap() as usize, cell.clone());
                deleted.remove(&cell);
                kept.push(entry);
            }
            EventKind::DeleteCell | EventKind::FinishExecute | EventKind::ErrorEvent if !alive => {
                rejects.push(Reject {
                    reason: missing(&deleted, &cell),
                    event: entry.event,
                });
            }
            EventKind::DeleteCell => {
                order.retain(|c| *c != cell);
                deleted.insert(cell);
                kept.push(entry);
            }
            EventKind::ExecuteCell | EventKind::RenderMarkdown | EventKind::ChangeCellType
                if !alive =>
            {
                let ordinal = entry.event.cell_ordinal.unwrap_or(0).min(order.len() as u64);
                let mut create = Entry::new(RawEvent {
                    kind: EventKind::CreateCell,
                    cell_ordinal: Some(ordinal),
                    outputs: None,
                    new_cell_type: None,
                    extras: BTreeMap::new(),
                    ..entry.event.clone()
                });
                create.tag(SYNTHESIZE_MISSING_CREATE);
                order.insert(ordinal as usize, cell.clone());
                deleted.remove(&cell);
                synthesized += 1;
                kept.push(create);
                kept.push(entry);
            }
            _ => kept.push(entry),
        }
    }
    (kept, rejects, synthesized)
}
