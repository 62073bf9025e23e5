mod common;

use std::collections::{BTreeMap, HashSet};

use noteflow_core::analytics::{time_stats, Group, Groups, ALL_GROUP};
use noteflow_core::annotate::{annotate_rules, PurposeLabel};
use noteflow_core::distance::normalized_edit_distance;
use noteflow_core::event::{parse_event, serialize_event, CellType, EventKind, RawEvent};
use noteflow_core::ipynb::{export_ipynb, import_ipynb, NBFORMAT};
use noteflow_core::normalize::normalize;
use noteflow_core::snapshot::build_histories;
use noteflow_core::transition::{extract_all, kind_split};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

fn study(seed: u64, notebooks: usize, max_events: usize) -> Vec<RawEvent> {
    common::valid_study(&mut ChaCha8Rng::seed_from_u64(seed), notebooks, max_events)
}

// Structural check against the nbformat 4.5 schema: required and allowed
// keys per cell and output type, id format and uniqueness, multiline strings.
fn validate_notebook(doc: &Value) -> Result<(), String> {
    let obj = doc.as_object().ok_or("notebook is not an object")?;
    only_keys(obj, &["cells", "metadata", "nbformat", "nbformat_minor"], &["cells", "metadata", "nbformat", "nbformat_minor"])?;
    if obj["nbformat"].as_u64() != Some(NBFORMAT) {
        return Err("nbformat must be 4".into());
    }
    let minor = obj["nbformat_minor"].as_u64().ok_or("nbformat_minor must be a non-negative integer")?;
    obj["metadata"].as_object().ok_or("metadata must be an object")?;
    let mut ids = HashSet::new();
    for (i, cell) in obj["cells"].as_array().ok_or("cells must be an array")?.iter().enumerate() {
        let c = cell.as_object().ok_or(format!("cell {i} is not an object"))?;
        if minor >= 5 {
            let id = c.get("id").and_then(Value::as_str).ok_or(format!("cell {i}: missing id"))?;
            if id.is_empty() || id.len() > 64 || !id.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return Err(format!("cell {i}: bad id {id:?}"));
            }
            if !ids.insert(id.to_string()) {
                return Err(format!("cell {i}: duplicate id {id:?}"));
            }
        }
        c.get("metadata").and_then(Value::as_object).ok_or(format!("cell {i}: metadata"))?;
        multiline(c.get("source").ok_or(format!("cell {i}: source"))?).map_err(|e| format!("cell {i}: source {e}"))?;
        match c.get("cell_type").and_then(Value::as_str) {
            Some("markdown") | Some("raw") => {
                only_keys(c, &["cell_type", "id", "metadata", "source"], &["cell_type", "metadata", "source", "attachments", "id"])?
            }
            Some("code") => {
                only_keys(c, &["cell_type", "id", "metadata", "source", "outputs", "execution_count"], &[
                    "cell_type",
                    "id",
                    "metadata",
                    "source",
                    "outputs",
                    "execution_count",
                ])?;
                execution_count(&c["execution_count"])?;
                for o in c["outputs"].as_array().ok_or(format!("cell {i}: outputs"))? {
                    validate_output(o).map_err(|e| format!("cell {i}: {e}"))?;
                }
            }
            other => return Err(format!("cell {i}: cell_type {other:?}")),
        }
    }
    Ok(())
}

fn only_keys(obj: &Map<String, Value>, required: &[&str], allowed: &[&str]) -> Result<(), String> {
    for k in required {
        if !obj.contains_key(*k) {
            return Err(format!("missing `{k}`"));
        }
    }
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unexpected `{k}`")),
        None => Ok(()),
    }
}

fn multiline(v: &Value) -> Result<(), String> {
    match v {
        Value::String(_) => Ok(()),
        Value::Array(items) if items.iter().all(Value::is_string) => Ok(()),
        _ => Err("must be a string or list of strings".into()),
    }
}

fn execution_count(v: &Value) -> Result<(), String> {
    if v.is_null() || v.as_u64().is_some() { Ok(()) } else { Err(format!("execution_count {v}")) }
}

fn mime_bundle(v: &Value) -> Result<(), String> {
    let m = v.as_object().ok_or("data must be an object")?;
    for (k, val) in m {
        if !k.contains('/') {
            return Err(format!("mimetype {k:?}"));
        }
        if !k.ends_with("json") {
            multiline(val)?;
        }
    }
    Ok(())
}

fn validate_output(o: &Value) -> Result<(), String> {
    let m = o.as_object().ok_or("output is not an object")?;
    match m.get("output_type").and_then(Value::as_str) {
        Some("stream") => {
            only_keys(m, &["output_type", "name", "text"], &["output_type", "name", "text"])?;
            m["name"].as_str().ok_or("stream name")?;
            multiline(&m["text"])
        }
        Some("execute_result") => {
            only_keys(m, &["output_type", "execution_count", "data", "metadata"], &["output_type", "execution_count", "data", "metadata"])?;
            execution_count(&m["execution_count"])?;
            m["metadata"].as_object().ok_or("metadata")?;
            mime_bundle(&m["data"])
        }
        Some("display_data") => {
            only_keys(m, &["output_type", "data", "metadata"], &["output_type", "data", "metadata", "transient"])?;
            m["metadata"].as_object().ok_or("metadata")?;
            mime_bundle(&m["data"])
        }
        Some("error") => {
            only_keys(m, &["output_type", "ename", "evalue", "traceback"], &["output_type", "ename", "evalue", "traceback"])?;
            m["ename"].as_str().ok_or("ename")?;
            m["evalue"].as_str().ok_or("evalue")?;
            match m["traceback"].as_array() {
                Some(t) if t.iter().all(Value::is_string) => Ok(()),
                _ => Err("traceback must be a list of strings".into()),
            }
        }
        other => Err(format!("output_type {other:?}")),
    }
}

#[test]
fn validator_rejects_broken_notebooks() {
    let ok = serde_json::json!({"cells": [], "metadata": {}, "nbformat": 4, "nbformat_minor": 5});
    assert!(validate_notebook(&ok).is_ok());
    let mut bad = ok.clone();
    bad["nbformat"] = 3.into();
    assert!(validate_notebook(&bad).is_err());
    let mut bad = ok.clone();
    bad["cells"] = serde_json::json!([{"cell_type": "markdown", "id": "a b", "metadata": {}, "source": ""}]);
    assert!(validate_notebook(&bad).is_err());
    bad["cells"] = serde_json::json!([{"cell_type": "markdown", "id": "a", "metadata": {}, "source": "", "outputs": []}]);
    assert!(validate_notebook(&bad).is_err());
    bad["cells"] = serde_json::json!([{"cell_type": "code", "id": "a", "metadata": {}, "source": "", "outputs": [{"output_type": "stream", "text": "x"}], "execution_count": null}]);
    assert!(validate_notebook(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_lines_round_trip(seed in any::<u64>()) {
        for e in study(seed, 3, 30) {
            let line = serialize_event(&e);
            let back = parse_event(&line).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(serialize_event(&back), line);
        }
    }

    #[test]
    fn every_exported_snapshot_is_a_valid_notebook(seed in any::<u64>()) {
        let log = normalize(study(seed, 2, 40)).records;
        for h in build_histories(&log).unwrap() {
            for s in &h.snapshots {
                let doc = export_ipynb(s);
                prop_assert!(validate_notebook(&doc).is_ok(), "{:?}", validate_notebook(&doc));
                // markdown cells have no outputs in the file format
                let mut storable = s.clone();
                for c in storable.cells.iter_mut().filter(|c| c.cell_type == CellType::Markdown) {
                    c.last_outputs.clear();
                }
                prop_assert_eq!(import_ipynb(&doc).unwrap(), storable);
            }
        }
    }

    #[test]
    fn normalize_is_arrival_independent_and_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = study(seed, 4, 30);
        let first = normalize(raw.clone());
        raw.shuffle(&mut rng);
        let dupes: Vec<RawEvent> = raw.iter().filter(|_| rng.gen_bool(0.2)).cloned().collect();
        raw.extend(dupes);
        let shuffled = normalize(raw);
        prop_assert_eq!(&shuffled.records, &first.records);
        let again = normalize(first.records.iter().map(|r| r.to_raw_event()));
        prop_assert_eq!(&again.records, &first.records);
    }

    #[test]
    fn transitions_pair_consecutive_executions(seed in any::<u64>()) {
        let log = normalize(study(seed, 3, 50)).records;
        let histories = build_histories(&log).unwrap();
        let transitions = extract_all(&histories);
        let expected: usize = histories
            .iter()
            .map(|h| h.records.iter().filter(|r| r.kind() == EventKind::ExecuteCell).count().saturating_sub(1))
            .sum();
        prop_assert_eq!(transitions.len(), expected);
        if let Some((s, i)) = kind_split(&transitions) {
            prop_assert!((s + i - 1.0).abs() < 1e-12);
        }
        for a in annotate_rules(&transitions) {
            let t = &a.transition;
            let d = t.edit_distance();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!(t.gap >= 0.0);
            if t.is_self() {
                let unchanged = t.from_cell.source == t.to_cell.source;
                prop_assert_eq!(a.purposes.contains(&PurposeLabel::NoChange), unchanged);
                prop_assert_eq!(d == 0.0, unchanged);
            } else {
                prop_assert!(a.purposes.is_empty());
            }
        }
    }

    #[test]
    fn edit_distance_is_symmetric_and_bounded(a in "\\PC{0,20}", b in "\\PC{0,20}") {
        let d = normalized_edit_distance(&a, &b);
        prop_assert_eq!(d, normalized_edit_distance(&b, &a));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d == 0.0, a == b);
    }

    #[test]
    fn time_groups_recompose(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = normalize(study(seed, 6, 60)).records;
        let mut map = BTreeMap::new();
        for r in &log {
            let task = ["DA", "ML"][rng.gen_range(0..2)];
            let level = ["Student", "Professional"][rng.gen_range(0..2)];
            map.entry(r.event.notebook_key()).or_insert(Group { task: task.into(), expertise: level.into() });
        }
        let groups = Groups(map);
        let stats = time_stats(&log, &groups);
        for n in &stats.notebooks {
            prop_assert!(n.total_seconds >= 0.0 && n.busy_seconds >= 0.0);
            prop_assert!((0.0..=100.0).contains(&n.percent));
        }
        let Some(all) = stats.row(ALL_GROUP, ALL_GROUP) else { return Ok(()) };
        for (task_axis, rows) in [(true, &stats.rows), (false, &stats.rows)] {
            let parts: Vec<_> = rows
                .iter()
                .filter(|r| if task_axis { r.task != ALL_GROUP && r.expertise == ALL_GROUP } else { r.task == ALL_GROUP && r.expertise != ALL_GROUP })
                .collect();
            let executions: usize = parts.iter().map(|r| r.executions).sum();
            prop_assert_eq!(executions, all.executions);
            if let Some(global) = all.execution_mean {
                let weighted: f64 = parts.iter().filter_map(|r| r.execution_mean.map(|m| m * r.executions as f64)).sum::<f64>() / executions as f64;
                prop_assert!((weighted - global).abs() < 1e-9, "{} vs {}", weighted, global);
            }
            let notebooks: usize = parts.iter().map(|r| r.notebooks).sum();
            let weighted: f64 = parts.iter().filter_map(|r| r.percent_mean.map(|m| m * r.notebooks as f64)).sum::<f64>() / notebooks as f64;
            prop_assert!((weighted - all.percent_mean.unwrap()).abs() < 1e-9);
        }
        // processing order of notebooks does not matter
        let mut reversed = log.clone();
        reversed.reverse();
        reversed.sort_by_key(|r| r.seq_no);
        prop_assert_eq!(time_stats(&reversed, &groups), stats);
    }
}
