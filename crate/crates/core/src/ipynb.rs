//! Snapshot ⇄ notebook file (nbformat 4.5) conversion.
//!
//! Snapshot-only fields (stable cell id, execution count, last execution
//! time, position in the log) ride along in `metadata.noteflow` so a file
//! exported here re-imports to an equal snapshot.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::event::{CellType, Output, OutputType};
use crate::snapshot::{CellState, NotebookSnapshot};

pub const NBFORMAT: u64 = 4;
pub const NBFORMAT_MINOR: u64 = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IpynbError {
    #[error("not a notebook: {0}")]
    Structure(String),
    #[error("unsupported nbformat {0}")]
    Version(u64),
}

/// Render a snapshot as a notebook document.
pub fn export_ipynb(s: &NotebookSnapshot) -> Value {
    let cells: Vec<Value> = s.cells.iter().enumerate().map(|(i, c)| export_cell(i, c)).collect();
    json!({
        "cells": cells,
        "metadata": {
            "kernelspec": {"display_name": "Python 3", "language": "python", "name": "python3"},
            "language_info": {"name": "python"},
            "noteflow": {"notebook_name": s.notebook_name, "after_seq_no": s.after_seq_no},
        },
        "nbformat": NBFORMAT,
        "nbformat_minor": NBFORMAT_MINOR,
    })
}

/// Serialized notebook text (one-space indent, trailing newline, like Jupyter).
pub fn to_string(s: &NotebookSnapshot) -> String {
    let value = export_ipynb(s);
    let mut buf = Vec::new();
    let fmt = serde_json::ser::PrettyFormatter::with_indent(b" ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    serde::Serialize::serialize(&value, &mut ser).expect("notebook serialization is infallible");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn export_cell(index: usize, c: &CellState) -> Value {
    let meta = json!({
        "noteflow": {
            "cell_id": c.cell_id,
            "execution_count": c.execution_count,
            "last_executed_at": c.last_executed_at,
        }
    });
    let id = nb_cell_id(index, &c.cell_id);
    match c.cell_type {
        CellType::Markdown => json!({
            "cell_type": "markdown",
            "id": id,
            "metadata": meta,
            "source": source_lines(&c.source),
        }),
        CellType::Code => {
            let count = (c.execution_count > 0).then_some(c.execution_count);
            json!({
                "cell_type": "code",
                "execution_count": count,
                "id": id,
                "metadata": meta,
                "outputs": c.last_outputs.iter().map(|o| export_output(o, count)).collect::<Vec<_>>(),
                "source": source_lines(&c.source),
            })
        }
    }
}

/// nbformat cell ids must match `^[a-zA-Z0-9-_]+$` and be at most 64 chars.
fn nb_cell_id(index: usize, raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '-' })
        .take(56)
        .collect();
    if cleaned.is_empty() {
        format!("cell-{index}")
    } else {
        // prefix with the position so sanitized ids stay unique
        format!("{index}-{cleaned}")
    }
}

fn source_lines(source: &str) -> Value {
    Value::Array(source.split_inclusive('\n').map(|l| Value::String(l.to_string())).collect())
}

fn payload_text(payload: &Value) -> String {
    match payload {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn export_output(o: &Output, count: Option<u32>) -> Value {
    match o.output_type {
        OutputType::Stream => match &o.payload {
            Value::Object(m) if m.get("text").is_some() => json!({
                "output_type": "stream",
                "name": m.get("name").and_then(Value::as_str).unwrap_or("stdout"),
                "text": joined_text(m.get("text").unwrap()),
            }),
            p => json!({"output_type": "stream", "name": "stdout", "text": payload_text(p)}),
        },
        OutputType::ExecuteResult => json!({
            "output_type": "execute_result",
            "execution_count": count,
            "data": mime_bundle(&o.payload),
            "metadata": {},
        }),
        OutputType::DisplayData => json!({
            "output_type": "display_data",
            "data": mime_bundle(&o.payload),
            "metadata": {},
        }),
        OutputType::Error => match &o.payload {
            Value::Object(m) if m.contains_key("ename") => json!({
                "output_type": "error",
                "ename": m.get("ename").map(payload_text).unwrap_or_default(),
                "evalue": m.get("evalue").map(payload_text).unwrap_or_default(),
                "traceback": m.get("traceback").cloned().filter(Value::is_array).unwrap_or_else(|| json!([])),
            }),
            p => {
                let text = payload_text(p);
                json!({"output_type": "error", "ename": "Error", "evalue": text, "traceback": [text]})
            }
        },
    }
}

fn mime_bundle(payload: &Value) -> Value {
    match payload {
        Value::Object(m) if !m.is_empty() && m.keys().all(|k| k.contains('/')) => payload.clone(),
        p => json!({"text/plain": payload_text(p)}),
    }
}

fn joined_text(v: &Value) -> String {
    match v {
        Value::Array(parts) => parts.iter().map(payload_text).collect(),
        other => payload_text(other),
    }
}

fn structure(msg: impl Into<String>) -> IpynbError {
    IpynbError::Structure(msg.into())
}

/// Read a notebook document back into a snapshot.
pub fn import_ipynb(doc: &Value) -> Result<NotebookSnapshot, IpynbError> {
    let major = doc
        .get("nbformat")
        .and_then(Value::as_u64)
        .ok_or_else(|| structure("missing nbformat"))?;
    if major != NBFORMAT {
        return Err(IpynbError::Version(major));
    }
    let meta = doc.get("metadata").and_then(|m| m.get("noteflow"));
    let notebook_name = meta
        .and_then(|m| m.get("notebook_name"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let after_seq_no = meta.and_then(|m| m.get("after_seq_no")).and_then(Value::as_u64);
    let cells = doc
        .get("cells")
        .and_then(Value::as_array)
        .ok_or_else(|| structure("missing cells"))?
        .iter()
        .enumerate()
        .map(|(i, c)| import_cell(i, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NotebookSnapshot {
        notebook_name,
        after_seq_no,
        cells,
    })
}

fn import_cell(index: usize, c: &Value) -> Result<CellState, IpynbError> {
    let cell_type = match c.get("cell_type").and_then(Value::as_str) {
        Some("code") => CellType::Code,
        Some("markdown") | Some("raw") => CellType::Markdown,
        other => return Err(structure(format!("cell {index}: bad cell_type {other:?}"))),
    };
    let source = c.get("source").map(joined_text).unwrap_or_default();
    let meta = c.get("metadata").and_then(|m| m.get("noteflow"));
    let cell_id = meta
        .and_then(|m| m.get("cell_id"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| c.get("id").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| format!("cell-{index}"));
    let execution_count = meta
        .and_then(|m| m.get("execution_count"))
        .and_then(Value::as_u64)
        .or_else(|| c.get("execution_count").and_then(Value::as_u64))
        .unwrap_or(0) as u32;
    let last_executed_at = meta.and_then(|m| m.get("last_executed_at")).and_then(Value::as_i64);
    let last_outputs = match c.get("outputs").and_then(Value::as_array) {
        Some(outs) => outs.iter().map(import_output).collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    Ok(CellState {
        cell_id,
        cell_type,
        source,
        last_outputs,
        execution_count,
        last_executed_at: if execution_count > 0 { last_executed_at } else { None },
    })
}

fn import_output(o: &Value) -> Result<Output, IpynbError> {
    let kind = o.get("output_type").and_then(Value::as_str).unwrap_or_default();
    let output = match kind {
        "stream" => {
            let name = o.get("name").and_then(Value::as_str).unwrap_or("stdout");
            let text = o.get("text").map(joined_text).unwrap_or_default();
            let payload = if name == "stdout" {
                Value::String(text)
            } else {
                let mut m = Map::new();
                m.insert("name".into(), Value::String(name.into()));
                m.insert("text".into(), Value::String(text));
                Value::Object(m)
            };
            Output {
                output_type: OutputType::Stream,
                payload,
            }
        }
        "execute_result" | "display_data" => {
            let data = o.get("data").cloned().unwrap_or_else(|| json!({}));
            let payload = match data.as_object() {
                Some(m) if m.len() == 1 && m.contains_key("text/plain") => {
                    Value::String(joined_text(&m["text/plain"]))
                }
                _ => data,
            };
            Output {
                output_type: if kind == "execute_result" {
                    OutputType::ExecuteResult
                } else {
                    OutputType::DisplayData
                },
                payload,
            }
        }
        "error" => {
            let ename = o.get("ename").map(payload_text).unwrap_or_default();
            let evalue = o.get("evalue").map(payload_text).unwrap_or_default();
            let traceback = o.get("traceback").cloned().unwrap_or_else(|| json!([]));
            let payload = if ename == "Error" && traceback == json!([evalue.clone()]) {
                Value::String(evalue)
            } else {
                json!({"ename": ename, "evalue": evalue, "traceback": traceback})
            };
            Output {
                output_type: OutputType::Error,
                payload,
            }
        }
        other => return Err(structure(format!("unknown output_type {other:?}"))),
    };
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(cells: Vec<CellState>) -> NotebookSnapshot {
        NotebookSnapshot {
            notebook_name: "nb.ipynb".into(),
            after_seq_no: Some(4),
            cells,
        }
    }

    #[test]
    fn empty_snapshot_exports_zero_cells() {
        let doc = export_ipynb(&snap(vec![]));
        assert_eq!(doc["nbformat"], 4);
        assert_eq!(doc["cells"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn markdown_cell_has_no_outputs() {
        let mut c = CellState::new("m1", "# Title\ntext");
        c.cell_type = CellType::Markdown;
        let doc = export_ipynb(&snap(vec![c]));
        let cell = &doc["cells"][0];
        assert_eq!(cell["cell_type"], "markdown");
        assert!(cell.get("outputs").is_none());
        assert!(cell.get("execution_count").is_none());
        assert_eq!(cell["source"], json!(["# Title\n", "text"]));
    }

    #[test]
    fn stream_output_exported() {
        let mut c = CellState::new("c1", "print(1)");
        c.execution_count = 1;
        c.last_executed_at = Some(10);
        c.last_outputs = vec![Output::text(OutputType::Stream, "1\n")];
        let doc = export_ipynb(&snap(vec![c.clone()]));
        let outs = doc["cells"][0]["outputs"].as_array().unwrap();
        assert_eq!(outs.len(), 1);
        assert_eq!(outs[0], json!({"output_type": "stream", "name": "stdout", "text": "1\n"}));
        assert_eq!(import_ipynb(&doc).unwrap(), snap(vec![c]));
    }

    #[test]
    fn rich_outputs_round_trip() {
        let mut c = CellState::new("weird id/with:chars", "df");
        c.execution_count = 3;
        c.last_executed_at = Some(99);
        c.last_outputs = vec![
            Output {
                output_type: OutputType::ExecuteResult,
                payload: json!({"text/html": "<table/>", "text/plain": "df"}),
            },
            Output::text(OutputType::DisplayData, "<Figure>"),
            Output {
                output_type: OutputType::Error,
                payload: json!({"ename": "KeyError", "evalue": "'a'", "traceback": ["t1", "t2"]}),
            },
            Output::text(OutputType::Error, "boom"),
        ];
        let s = snap(vec![c]);
        let doc = export_ipynb(&s);
        assert_eq!(doc["cells"][0]["id"], "0-weird-id-with-chars");
        assert_eq!(import_ipynb(&doc).unwrap(), s);
        let text = to_string(&s);
        let reparsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(reparsed, doc);
    }

    #[test]
    fn rejects_other_major_versions() {
        assert_eq!(import_ipynb(&json!({"nbformat": 3, "cells": []})), Err(IpynbError::Version(3)));
    }
}
