//! Change-purpose and data-science-step labels for transitions.

pub mod backend;
pub mod features;
pub mod purpose;
pub mod steps;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use backend::{backend_purposes, AnnotationClient, ArchivedResponse, BackendConfig, BackendError, HttpClient};
pub use features::{extract_features, CellFeatures};
pub use purpose::{rule_purposes, rule_purposes_with_context, PurposeLabel};
pub use steps::{ds_step, DsStep};

use crate::event::CellType;
use crate::snapshot::CellState;
use crate::transition::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeSource {
    Rule,
    Backend,
    Reconciled,
}

/// A transition with its labels. Only self-transitions carry purposes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTransition {
    #[serde(flatten)]
    pub transition: Transition,
    pub purposes: Vec<PurposeLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub purpose_source: Option<PurposeSource>,
    pub from_step: DsStep,
    pub to_step: DsStep,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mechanical_agreement: Option<bool>,
}

/// Step label of a cell state; markdown cells hold only prose.
pub fn cell_step(cell: &CellState) -> DsStep {
    match cell.cell_type {
        CellType::Markdown => DsStep::CommentOnly,
        CellType::Code => ds_step(&cell.source, &extract_features(&cell.source)),
    }
}

fn unlabeled(t: &Transition) -> AnnotatedTransition {
    AnnotatedTransition {
        transition: t.clone(),
        purposes: Vec::new(),
        purpose_source: None,
        from_step: cell_step(&t.from_cell),
        to_step: cell_step(&t.to_cell),
        flags: Vec::new(),
        prompt_hash: None,
        mechanical_agreement: None,
    }
}

fn rule_annotation(t: &Transition) -> AnnotatedTransition {
    let mut a = unlabeled(t);
    if t.is_self() {
        let outcome = rule_purposes_with_context(&t.from_cell.source, &t.to_cell.source, Some(t.from_output_kind));
        a.purposes = outcome.labels.into_iter().collect();
        a.purpose_source = Some(PurposeSource::Rule);
        a.flags = outcome.flags;
    }
    a
}

/// Rule-only annotation of every transition.
pub fn annotate_rules(transitions: &[Transition]) -> Vec<AnnotatedTransition> {
    transitions.iter().map(rule_annotation).collect()
}

/// Backend annotation of self-transitions with at most `max_in_flight`
/// concurrent requests. Output order follows the input; the second value is
/// the archive of raw responses.
pub fn annotate_with_backend(
    transitions: &[Transition],
    client: &dyn AnnotationClient,
    max_in_flight: usize,
) -> (Vec<AnnotatedTransition>, Vec<ArchivedResponse>) {
    let hash = backend::prompt_hash();
    let workers = max_in_flight.max(1);
    let mut slots: Vec<Option<(AnnotatedTransition, Vec<ArchivedResponse>)>> = vec![None; transitions.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(t) = transitions.get(i) else { break };
                let done = if t.is_self() {
                    let out = backend_purposes(&t.from_cell.source, &t.to_cell.source, t.from_output_kind, client);
                    let user = backend::render_user_prompt(&t.from_cell.source, &t.to_cell.source, t.from_output_kind);
                    let key = backend::request_key(backend::SYSTEM_PROMPT, &user);
                    let archive = out
                        .raw_responses
                        .iter()
                        .map(|r| ArchivedResponse {
                            key: key.clone(),
                            transition_id: t.id.clone(),
                            prompt_hash: hash.clone(),
                            response: r.clone(),
                        })
                        .collect();
                    let mut a = unlabeled(t);
                    a.purposes = out.labels.into_iter().collect();
                    a.purpose_source = Some(out.source);
                    a.flags = out.flags;
                    a.mechanical_agreement = out.mechanical_agreement;
                    if out.source != PurposeSource::Rule {
                        a.prompt_hash = Some(hash.clone());
                    }
                    (a, archive)
                } else {
                    (unlabeled(t), Vec::new())
                };
                results.lock().expect("poisoned").push((i, done));
            });
        }
    });
    for (i, done) in results.into_inner().expect("poisoned") {
        slots[i] = Some(done);
    }
    let mut annotated = Vec::with_capacity(transitions.len());
    let mut archive = Vec::new();
    for slot in slots {
        let (a, mut r) = slot.expect("every index processed");
        annotated.push(a);
        archive.append(&mut r);
    }
    (annotated, archive)
}

/// Share of backend-labeled transitions whose mechanical labels agree with
/// the rules, with the number compared.
pub fn mechanical_agreement(annotated: &[AnnotatedTransition]) -> Option<(f64, usize)> {
    let compared: Vec<bool> = annotated.iter().filter_map(|a| a.mechanical_agreement).collect();
    if compared.is_empty() {
        return None;
    }
    let agreed = compared.iter().filter(|x| **x).count();
    Some((agreed as f64 / compared.len() as f64, compared.len()))
}

pub fn write_annotations(path: &Path, annotated: &[AnnotatedTransition]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for a in annotated {
        writeln!(out, "{}", serde_json::to_string(a).expect("serializable"))?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedTransition>, AnnotationReadError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| AnnotationReadError::Parse { line: n + 1, source })?);
    }
    Ok(out)
}

/// Purpose labels used at least once.
pub fn labels_in_use(annotated: &[AnnotatedTransition]) -> BTreeSet<PurposeLabel> {
    annotated.iter().flat_map(|a| a.purposes.iter().cloned()).collect()
}
