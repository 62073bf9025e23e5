//! Captured notebook events and their canonical JSONL encoding.
//!
//! One [`RawEvent`] is one user or kernel action. On the wire every event is
//! a single JSON object on its own line with these keys, in this order:
//!
//! ```text
//! kind, session_id, kernel_id, notebook_name, timestamp, seq, user_id,
//! cell_id, cell_ordinal, source, outputs, new_cell_type, extras
//! ```
//!
//! Which of the cell-level keys may appear is fixed by the event kind (see
//! [`EventKind::fields`]). Unknown top-level keys are not rejected; they are
//! folded into `extras` so nothing observed in a real dump gets dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// The ten captured action kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    NotebookLaunch,
    NotebookInterrupt,
    NotebookRestart,
    CreateCell,
    DeleteCell,
    ExecuteCell,
    RenderMarkdown,
    FinishExecute,
    ChangeCellType,
    ErrorEvent,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::NotebookLaunch,
        EventKind::NotebookInterrupt,
        EventKind::NotebookRestart,
        EventKind::CreateCell,
        EventKind::DeleteCell,
        EventKind::ExecuteCell,
        EventKind::RenderMarkdown,
        EventKind::FinishExecute,
        EventKind::ChangeCellType,
        EventKind::ErrorEvent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::NotebookLaunch => "notebook_launch",
            EventKind::NotebookInterrupt => "notebook_interrupt",
            EventKind::NotebookRestart => "notebook_restart",
            EventKind::CreateCell => "create_cell",
            EventKind::DeleteCell => "delete_cell",
            EventKind::ExecuteCell => "execute_cell",
            EventKind::RenderMarkdown => "render_markdown",
            EventKind::FinishExecute => "finish_execute",
            EventKind::ChangeCellType => "change_cell_type",
            EventKind::ErrorEvent => "error_event",
        }
    }

    /// Notebook-level kinds carry no cell reference at all.
    pub fn is_notebook_level(self) -> bool {
        matches!(
            self,
            EventKind::NotebookLaunch | EventKind::NotebookInterrupt | EventKind::NotebookRestart
        )
    }

    /// Kind-mandated optional fields. Every field listed here must be present,
    /// every field not listed must be absent.
    pub fn fields(self) -> FieldRule {
        let cell = !self.is_notebook_level();
        FieldRule {
            cell,
            source: matches!(
                self,
                EventKind::ExecuteCell
                    | EventKind::CreateCell
                    | EventKind::RenderMarkdown
                    | EventKind::ChangeCellType
            ),
            outputs: matches!(self, EventKind::FinishExecute | EventKind::ErrorEvent),
            new_cell_type: self == EventKind::ChangeCellType,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownKind(s.to_string()))
    }
}

/// Field-presence row of the kind/field matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldRule {
    /// `cell_id` and `cell_ordinal`
    pub cell: bool,
    pub source: bool,
    pub outputs: bool,
    pub new_cell_type: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Code,
    Markdown,
}

impl CellType {
    pub fn as_str(self) -> &'static str {
        match self {
            CellType::Code => "code",
            CellType::Markdown => "markdown",
        }
    }
}

impl fmt::Display for CellType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four concrete notebook output kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    ExecuteResult,
    Stream,
    Error,
    DisplayData,
}

impl OutputType {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputType::ExecuteResult => "execute_result",
            OutputType::Stream => "stream",
            OutputType::Error => "error",
            OutputType::DisplayData => "display_data",
        }
    }
}

/// One recorded cell output. The payload is kept as an opaque JSON value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub output_type: OutputType,
    #[serde(default)]
    pub payload: Value,
}

impl Output {
    pub fn text(output_type: OutputType, text: impl Into<String>) -> Self {
        Output {
            output_type,
            payload: Value::String(text.into()),
        }
    }
}

/// One captured action with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub kind: EventKind,
    pub session_id: String,
    pub kernel_id: String,
    pub notebook_name: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    /// Client-assigned, monotonically increasing within a session.
    pub seq: u64,
    pub user_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cell_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cell_ordinal: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outputs: Option<Vec<Output>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub new_cell_type: Option<CellType>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub extras: BTreeMap<String, Value>,
}

/// Failure to turn a line into a [`RawEvent`].
#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("malformed record at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("record is not a JSON object")]
    NotAnObject,
    #[error("unknown event kind `{0}`")]
    UnknownKind(String),
    #[error("missing field `{field}` required for {kind}")]
    MissingField { field: &'static str, kind: String },
    #[error("field `{field}` is not allowed for {kind}")]
    UnexpectedField { field: &'static str, kind: String },
    #[error("field `{field}` is invalid: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

impl SchemaError {
    /// Name of the offending field, if the error concerns one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            SchemaError::MissingField { field, .. }
            | SchemaError::UnexpectedField { field, .. }
            | SchemaError::InvalidField { field, .. } => Some(field),
            SchemaError::UnknownKind(_) => Some("kind"),
            SchemaError::NotAnObject => None,
        }
    }
}

const KNOWN_FIELDS: [&str; 13] = [
    "kind",
    "session_id",
    "kernel_id",
    "notebook_name",
    "timestamp",
    "seq",
    "user_id",
    "cell_id",
    "cell_ordinal",
    "source",
    "outputs",
    "new_cell_type",
    "extras",
];

/// Parse one serialized record.
pub fn parse_event(line: &str) -> Result<RawEvent, EventError> {
    let value: Value = serde_json::from_str(line).map_err(|e| EventError::Syntax {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    Ok(event_from_value(value)?)
}

/// Validate and convert an already-decoded JSON value.
pub fn event_from_value(value: Value) -> Result<RawEvent, SchemaError> {
    let Value::Object(mut map) = value else {
        return Err(SchemaError::NotAnObject);
    };

    let kind_str = take_string(&mut map, "kind")?.ok_or(SchemaError::MissingField {
        field: "kind",
        kind: "any event".into(),
    })?;
    let kind: EventKind = kind_str.parse()?;
    let kind_name = kind.as_str();
    let required = |field: &'static str| SchemaError::MissingField {
        field,
        kind: kind_name.to_string(),
    };

    let session_id = take_string(&mut map, "session_id")?.ok_or_else(|| required("session_id"))?;
    let kernel_id = take_string(&mut map, "kernel_id")?.ok_or_else(|| required("kernel_id"))?;
    let notebook_name =
        take_string(&mut map, "notebook_name")?.ok_or_else(|| required("notebook_name"))?;
    let user_id = take_string(&mut map, "user_id")?.ok_or_else(|| required("user_id"))?;
    let timestamp = match map.remove("timestamp") {
        None | Some(Value::Null) => return Err(required("timestamp")),
        Some(v) => v.as_i64().ok_or_else(|| SchemaError::InvalidField {
            field: "timestamp",
            reason: format!("expected integer milliseconds, got {v}"),
        })?,
    };
    if timestamp < 0 {
        return Err(SchemaError::InvalidField {
            field: "timestamp",
            reason: format!("must be non-negative, got {timestamp}"),
        });
    }
    let seq = take_u64(&mut map, "seq")?.ok_or_else(|| required("seq"))?;

    let cell_id = take_string(&mut map, "cell_id")?;
    let cell_ordinal = take_u64(&mut map, "cell_ordinal")?;
    let source = take_string(&mut map, "source")?;
    let outputs = match map.remove("outputs") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<Vec<Output>>(v).map_err(|e| SchemaError::InvalidField {
                field: "outputs",
                reason: e.to_string(),
            })?,
        ),
    };
    let new_cell_type = match map.remove("new_cell_type") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value::<CellType>(v).map_err(|e| {
            SchemaError::InvalidField {
                field: "new_cell_type",
                reason: e.to_string(),
            }
        })?),
    };
    let mut extras = match map.remove("extras") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m.into_iter().collect(),
        Some(other) => {
            return Err(SchemaError::InvalidField {
                field: "extras",
                reason: format!("expected an object, got {other}"),
            })
        }
    };
    // Anything left over is an unrecognised top-level key.
    for (k, v) in map {
        debug_assert!(!KNOWN_FIELDS.contains(&k.as_str()));
        extras.entry(k).or_insert(v);
    }

    let event = RawEvent {
        kind,
        session_id,
        kernel_id,
        notebook_name,
        timestamp,
        seq,
        user_id,
        cell_id,
        cell_ordinal,
        source,
        outputs,
        new_cell_type,
        extras,
    };
    event.validate()?;
    Ok(event)
}

/// Canonical single-line form, without a trailing newline.
pub fn serialize_event(e: &RawEvent) -> String {
    serde_json::to_string(e).expect("RawEvent serialization is infallible")
}

impl RawEvent {
    /// Check the timestamp bound and the kind/field presence matrix.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.timestamp < 0 {
            return Err(SchemaError::InvalidField {
                field: "timestamp",
                reason: format!("must be non-negative, got {}", self.timestamp),
            });
        }
        let rule = self.kind.fields();
        let kind = self.kind.as_str();
        let check = |field: &'static str, wanted: bool, present: bool| match (wanted, present) {
            (true, false) => Err(SchemaError::MissingField {
                field,
                kind: kind.to_string(),
            }),
            (false, true) => Err(SchemaError::UnexpectedField {
                field,
                kind: kind.to_string(),
            }),
            _ => Ok(()),
        };
        check("cell_id", rule.cell, self.cell_id.is_some())?;
        check("cell_ordinal", rule.cell, self.cell_ordinal.is_some())?;
        check("source", rule.source, self.source.is_some())?;
        check("outputs", rule.outputs, self.outputs.is_some())?;
        check("new_cell_type", rule.new_cell_type, self.new_cell_type.is_some())?;
        Ok(())
    }

    /// Deduplication key.
    pub fn dedup_key(&self) -> (&str, u64) {
        (&self.session_id, self.seq)
    }

    pub fn notebook_key(&self) -> NotebookKey {
        NotebookKey {
            user_id: self.user_id.clone(),
            notebook_name: self.notebook_name.clone(),
        }
    }

    pub fn cell_id(&self) -> Option<&str> {
        self.cell_id.as_deref()
    }
}

/// A notebook is identified by its owner and its name; names alone collide
/// across participants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NotebookKey {
    pub user_id: String,
    pub notebook_name: String,
}

impl NotebookKey {
    pub fn new(user_id: impl Into<String>, notebook_name: impl Into<String>) -> Self {
        NotebookKey {
            user_id: user_id.into(),
            notebook_name: notebook_name.into(),
        }
    }
}

impl fmt::Display for NotebookKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.user_id, self.notebook_name)
    }
}

fn take_string(map: &mut Map<String, Value>, field: &'static str) -> Result<Option<String>, SchemaError> {
    match map.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(SchemaError::InvalidField {
            field,
            reason: format!("expected a string, got {other}"),
        }),
    }
}

fn take_u64(map: &mut Map<String, Value>, field: &'static str) -> Result<Option<u64>, SchemaError> {
    match map.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| SchemaError::InvalidField {
            field,
            reason: format!("expected a non-negative integer, got {v}"),
        }),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based lines and columns; column 0 means "before the first byte".
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)).min(text.len())
}
