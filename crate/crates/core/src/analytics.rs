//! Aggregates over annotated transitions and the log table: step transition
//! matrices, time-binned step profiles, execution-time statistics and
//! binding-count series.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{cell_step, AnnotatedTransition, DsStep, PurposeLabel};
use crate::event::{CellType, EventKind, NotebookKey};
use crate::normalize::LogRecord;
use crate::pylex::count_bindings;
use crate::snapshot::NotebookHistory;
use crate::transition::TransitionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each occupied row sums to 1.
    Row,
    /// All entries together sum to 1.
    GrandTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub labels: Vec<DsStep>,
    pub counts: Vec<Vec<u64>>,
    pub values: Vec<Vec<f64>>,
    pub normalization: Normalization,
}

impl TransitionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (DsStep, DsStep)>, normalization: Normalization) -> Self {
        let n = DsStep::ALL.len();
        let mut counts = vec![vec![0u64; n]; n];
        let mut any = false;
        for (from, to) in pairs {
            counts[from.index()][to.index()] += 1;
            any = true;
        }
        if !any {
            return TransitionMatrix { labels: Vec::new(), counts: Vec::new(), values: Vec::new(), normalization };
        }
        let total: u64 = counts.iter().flatten().sum();
        let values = counts
            .iter()
            .map(|row| {
                let denom = match normalization {
                    Normalization::Row => row.iter().sum::<u64>(),
                    Normalization::GrandTotal => total,
                };
                row.iter().map(|&c| if denom == 0 { 0.0 } else { c as f64 / denom as f64 }).collect()
            })
            .collect();
        TransitionMatrix { labels: DsStep::ALL.to_vec(), counts, values, normalization }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, from: DsStep, to: DsStep) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.values[from.index()][to.index()]
    }

    /// Diagonal count over total count.
    pub fn diagonal_dominance(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.labels.len()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64)
    }

    /// Whether the diagonal entry is strictly the largest in every occupied row.
    pub fn diagonal_strictly_greatest(&self) -> bool {
        self.counts.iter().enumerate().all(|(i, row)| {
            row.iter().sum::<u64>() == 0 || row.iter().enumerate().all(|(j, &c)| j == i || c < row[i])
        })
    }

    /// Share of the total count with both ends in `steps`.
    pub fn mass_on(&self, steps: &[DsStep]) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let inside: u64 = steps.iter().flat_map(|a| steps.iter().map(|b| self.counts[a.index()][b.index()])).sum();
        Some(inside as f64 / total as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("from");
        for l in &self.labels {
            write!(out, ",{l}").expect("string write");
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l.as_str());
            for v in &self.values[i] {
                write!(out, ",{}", fmt_f64(*v)).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// Fixed-precision formatting so artifacts are stable across platforms.
pub fn fmt_f64(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

pub fn self_matrix(annotated: &[AnnotatedTransition]) -> TransitionMatrix {
    TransitionMatrix::from_pairs(
        annotated
            .iter()
            .filter(|a| a.transition.kind == TransitionKind::SelfLoop)
            .map(|a| (a.from_step, a.to_step)),
        Normalization::Row,
    )
}

pub fn inter_matrix(annotated: &[AnnotatedTransition]) -> TransitionMatrix {
    TransitionMatrix::from_pairs(
        annotated
            .iter()
            .filter(|a| a.transition.kind == TransitionKind::Inter)
            .map(|a| (a.from_step, a.to_step)),
        Normalization::GrandTotal,
    )
}

/// Study group of a notebook.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub task: String,
    pub expertise: String,
}

pub const UNKNOWN_GROUP: &str = "unknown";
pub const ALL_GROUP: &str = "All";

/// Notebook to group assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups(pub BTreeMap<NotebookKey, Group>);

#[derive(Debug, thiserror::Error)]
pub enum GroupsError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("groups file needs columns user_id, notebook_name, task, expertise")]
    Columns,
}

impl Groups {
    /// `task` and `expertise` extras on the first record of each notebook that carries them.
    pub fn from_log(log: &[LogRecord]) -> Groups {
        let mut map = BTreeMap::new();
        for r in log {
            let key = r.event.notebook_key();
            if map.contains_key(&key) {
                continue;
            }
            let task = r.event.extras.get("task").and_then(|v| v.as_str());
            let expertise = r.event.extras.get("expertise").and_then(|v| v.as_str());
            if task.is_some() || expertise.is_some() {
                map.insert(
                    key,
                    Group {
                        task: task.unwrap_or(UNKNOWN_GROUP).to_string(),
                        expertise: expertise.unwrap_or(UNKNOWN_GROUP).to_string(),
                    },
                );
            }
        }
        Groups(map)
    }

    /// CSV with header `user_id,notebook_name,task,expertise`.
    pub fn from_csv(path: &Path) -> Result<Groups, GroupsError> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name).ok_or(GroupsError::Columns);
        let (u, n, t, e) = (col("user_id")?, col("notebook_name")?, col("task")?, col("expertise")?);
        let mut map = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
            map.insert(NotebookKey::new(get(u), get(n)), Group { task: get(t), expertise: get(e) });
        }
        Ok(Groups(map))
    }

    /// Entries of `other` win.
    pub fn merged(mut self, other: Groups) -> Groups {
        self.0.extend(other.0);
        self
    }

    pub fn of(&self, key: &NotebookKey) -> Group {
        self.0.get(key).cloned().unwrap_or_else(|| Group {
            task: UNKNOWN_GROUP.to_string(),
            expertise: UNKNOWN_GROUP.to_string(),
        })
    }
}

/// Inter-transition matrices per task and per expertise level.
pub fn inter_matrix_splits(
    annotated: &[AnnotatedTransition],
    groups: &Groups,
) -> (BTreeMap<String, TransitionMatrix>, BTreeMap<String, TransitionMatrix>) {
    let mut by_task: BTreeMap<String, Vec<AnnotatedTransition>> = BTreeMap::new();
    let mut by_expertise: BTreeMap<String, Vec<AnnotatedTransition>> = BTreeMap::new();
    for a in annotated.iter().filter(|a| a.transition.kind == TransitionKind::Inter) {
        let g = groups.of(&a.transition.notebook);
        by_task.entry(g.task).or_default().push(a.clone());
        by_expertise.entry(g.expertise).or_default().push(a.clone());
    }
    let build = |m: BTreeMap<String, Vec<AnnotatedTransition>>| {
        m.into_iter().map(|(k, v)| (k, inter_matrix(&v))).collect()
    };
    (build(by_task), build(by_expertise))
}

/// One step-labeled event of the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub notebook: NotebookKey,
    pub seq_no: u64,
    pub timestamp: i64,
    pub cell_id: String,
    pub step: DsStep,
}

/// Every execution labeled with the step of the executed cell.
pub fn label_executions(histories: &[NotebookHistory]) -> Vec<LabeledEvent> {
    let mut cache: HashMap<(CellType, &str), DsStep> = HashMap::new();
    let mut out = Vec::new();
    for h in histories {
        for (i, r) in h.records.iter().enumerate() {
            if r.kind() != EventKind::ExecuteCell {
                continue;
            }
            let Some(cell) = r.event.cell_id.as_deref().and_then(|id| h.snapshots[i].cell(id)) else { continue };
            let step = *cache.entry((cell.cell_type, cell.source.as_str())).or_insert_with(|| cell_step(cell));
            out.push(LabeledEvent {
                notebook: h.key.clone(),
                seq_no: r.seq_no,
                timestamp: r.timestamp(),
                cell_id: cell.cell_id.clone(),
                step,
            });
        }
    }
    out
}

pub const QUANTILES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileProfile {
    /// Per notebook: bin -> step -> count.
    pub per_notebook: BTreeMap<NotebookKey, Vec<BTreeMap<DsStep, u64>>>,
    /// Summed over notebooks.
    pub counts: Vec<BTreeMap<DsStep, u64>>,
}

/// Bin index of the `i`-th of `n` time-ordered events.
pub fn quantile_bin(i: usize, n: usize) -> usize {
    i * QUANTILES / n
}

/// Equal-count time bins per notebook; ties in time go by `seq_no`.
pub fn quantile_profile(events: &[LabeledEvent]) -> QuantileProfile {
    let mut by_notebook: BTreeMap<&NotebookKey, Vec<&LabeledEvent>> = BTreeMap::new();
    for e in events {
        by_notebook.entry(&e.notebook).or_default().push(e);
    }
    let mut per_notebook = BTreeMap::new();
    let mut counts = vec![BTreeMap::new(); QUANTILES];
    for (key, mut evs) in by_notebook {
        evs.sort_by_key(|e| (e.timestamp, e.seq_no));
        let n = evs.len();
        let mut bins = vec![BTreeMap::new(); QUANTILES];
        for (i, e) in evs.iter().enumerate() {
            let b = quantile_bin(i, n);
            *bins[b].entry(e.step).or_insert(0) += 1;
            *counts[b].entry(e.step).or_insert(0) += 1;
        }
        per_notebook.insert(key.clone(), bins);
    }
    QuantileProfile { per_notebook, counts }
}

impl QuantileProfile {
    pub fn total(&self) -> u64 {
        self.counts.iter().flat_map(|b| b.values()).sum()
    }

    pub fn step_count(&self, bin: usize, step: DsStep) -> u64 {
        self.counts[bin].get(&step).copied().unwrap_or(0)
    }

    /// Share of `step` among the events of `bin`.
    pub fn bin_share(&self, bin: usize, step: DsStep) -> f64 {
        let total: u64 = self.counts[bin].values().sum();
        if total == 0 { 0.0 } else { self.step_count(bin, step) as f64 / total as f64 }
    }

    /// Share of the events of `step` that fall in `bin`.
    pub fn step_share(&self, bin: usize, step: DsStep) -> f64 {
        let total: u64 = (0..QUANTILES).map(|b| self.step_count(b, step)).sum();
        if total == 0 { 0.0 } else { self.step_count(bin, step) as f64 / total as f64 }
    }

    /// Largest over smallest bin count of `step`, over bins holding it, and
    /// the number of such bins.
    pub fn evenness(&self, step: DsStep) -> Option<(f64, usize)> {
        let counts: Vec<u64> = (0..QUANTILES).map(|b| self.step_count(b, step)).filter(|c| *c > 0).collect();
        let max = *counts.iter().max()?;
        let min = *counts.iter().min()?;
        Some((max as f64 / min as f64, counts.len()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,step,count,bin_share,step_share\n");
        for bin in 0..QUANTILES {
            for step in DsStep::ALL {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    bin + 1,
                    step,
                    self.step_count(bin, step),
                    fmt_f64(self.bin_share(bin, step)),
                    fmt_f64(self.step_share(bin, step))
                )
                .expect("string write");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub notebook: NotebookKey,
    pub cell_id: String,
    pub started_at: i64,
    pub ended_at: i64,
}

impl Execution {
    pub fn seconds(&self) -> f64 {
        (self.ended_at - self.started_at) as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    /// Executions that never finished.
    pub unmatched_executions: usize,
    /// Finish or error events with no pending execution of their cell.
    pub unmatched_completions: usize,
}

/// Pair each execution with the next finish or error of the same cell, first in first out.
pub fn match_executions(log: &[LogRecord]) -> (Vec<Execution>, MatchDiagnostics) {
    let mut pending: HashMap<(NotebookKey, String), std::collections::VecDeque<i64>> = HashMap::new();
    let mut done = Vec::new();
    let mut diag = MatchDiagnostics::default();
    for r in log {
        let Some(cell) = r.event.cell_id.clone() else { continue };
        let key = (r.event.notebook_key(), cell);
        match r.kind() {
            EventKind::ExecuteCell => pending.entry(key).or_default().push_back(r.timestamp()),
            EventKind::FinishExecute | EventKind::ErrorEvent => {
                match pending.get_mut(&key).and_then(|q| q.pop_front()) {
                    Some(start) => done.push(Execution {
                        notebook: key.0,
                        cell_id: key.1,
                        started_at: start,
                        ended_at: r.timestamp().max(start),
                    }),
                    None => diag.unmatched_completions += 1,
                }
            }
            _ => {}
        }
    }
    diag.unmatched_executions = pending.values().map(|q| q.len()).sum();
    (done, diag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotebookTime {
    pub notebook: NotebookKey,
    pub group: Group,
    /// Last event minus first event, seconds.
    pub total_seconds: f64,
    /// Union of execution intervals, seconds.
    pub busy_seconds: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub task: String,
    pub expertise: String,
    pub executions: usize,
    pub notebooks: usize,
    pub execution_mean: Option<f64>,
    pub execution_std: Option<f64>,
    pub percent_mean: Option<f64>,
    pub percent_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub rows: Vec<TimeRow>,
    pub notebooks: Vec<NotebookTime>,
    pub diagnostics: MatchDiagnostics,
}

impl TimeStats {
    pub fn row(&self, task: &str, expertise: &str) -> Option<&TimeRow> {
        self.rows.iter().find(|r| r.task == task && r.expertise == expertise)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,expertise,executions,notebooks,execution_mean_s,execution_std_s,percent_mean,percent_std\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.task,
                r.expertise,
                r.executions,
                r.notebooks,
                opt(r.execution_mean),
                opt(r.execution_std),
                opt(r.percent_mean),
                opt(r.percent_std)
            )
            .expect("string write");
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (Some(mean), std)
}

fn union_length(mut intervals: Vec<(i64, i64)>) -> i64 {
    intervals.sort_unstable();
    let mut total = 0;
    let mut current: Option<(i64, i64)> = None;
    for (s, e) in intervals {
        match current {
            Some((cs, ce)) if s <= ce => current = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                current = Some((s, e));
            }
            None => current = Some((s, e)),
        }
    }
    total + current.map_or(0, |(s, e)| e - s)
}

/// Execution-time statistics per (task, expertise), with `All` rows for
/// each task, each expertise level and overall.
pub fn time_stats(log: &[LogRecord], groups: &Groups) -> TimeStats {
    let (executions, diagnostics) = match_executions(log);
    let mut span: BTreeMap<NotebookKey, (i64, i64)> = BTreeMap::new();
    for r in log {
        let e = span.entry(r.event.notebook_key()).or_insert((r.timestamp(), r.timestamp()));
        e.0 = e.0.min(r.timestamp());
        e.1 = e.1.max(r.timestamp());
    }
    let mut per_notebook: BTreeMap<NotebookKey, Vec<&Execution>> = BTreeMap::new();
    for e in &executions {
        per_notebook.entry(e.notebook.clone()).or_default().push(e);
    }
    let notebooks: Vec<NotebookTime> = span
        .iter()
        .map(|(key, (first, last))| {
            let busy = union_length(
                per_notebook.get(key).map_or_else(Vec::new, |v| v.iter().map(|e| (e.started_at, e.ended_at)).collect()),
            );
            let total = last - first;
            NotebookTime {
                notebook: key.clone(),
                group: groups.of(key),
                total_seconds: total as f64 / 1000.0,
                busy_seconds: busy as f64 / 1000.0,
                percent: if total > 0 { (busy as f64 / total as f64 * 100.0).clamp(0.0, 100.0) } else { 0.0 },
            }
        })
        .collect();

    let tasks: BTreeSet<String> = notebooks.iter().map(|n| n.group.task.clone()).collect();
    let levels: BTreeSet<String> = notebooks.iter().map(|n| n.group.expertise.clone()).collect();
    let mut rows = Vec::new();
    let task_options: Vec<Option<&String>> = tasks.iter().map(Some).chain([None]).collect();
    let level_options: Vec<Option<&String>> = levels.iter().map(Some).chain([None]).collect();
    for task in &task_options {
        for level in &level_options {
            let selected = |g: &Group| task.is_none_or(|t| *t == g.task) && level.is_none_or(|l| *l == g.expertise);
            let durations: Vec<f64> = executions.iter().filter(|e| selected(&groups.of(&e.notebook))).map(Execution::seconds).collect();
            let percents: Vec<f64> = notebooks.iter().filter(|n| selected(&n.group)).map(|n| n.percent).collect();
            if percents.is_empty() {
                continue;
            }
            let (execution_mean, execution_std) = mean_std(&durations);
            let (percent_mean, percent_std) = mean_std(&percents);
            rows.push(TimeRow {
                task: task.cloned().unwrap_or_else(|| ALL_GROUP.to_string()),
                expertise: level.cloned().unwrap_or_else(|| ALL_GROUP.to_string()),
                executions: durations.len(),
                notebooks: percents.len(),
                execution_mean,
                execution_std,
                percent_mean,
                percent_std,
            });
        }
    }
    TimeStats { rows, notebooks, diagnostics }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPoint {
    /// Position in the notebook's time span, 0 to 1.
    pub time: f64,
    pub seq_no: u64,
    pub mean_bindings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSeries {
    pub per_notebook: BTreeMap<NotebookKey, Vec<ObjectPoint>>,
    /// Average over notebooks at 101 evenly spaced times.
    pub average: Vec<(f64, f64)>,
}

pub const CURVE_POINTS: usize = 101;

/// Mean binding count per code cell after every log record.
pub fn object_series(histories: &[NotebookHistory]) -> ObjectSeries {
    let mut cache: HashMap<String, usize> = HashMap::new();
    let mut per_notebook = BTreeMap::new();
    for h in histories {
        let (Some(first), Some(last)) = (h.records.first(), h.records.last()) else { continue };
        let (t0, t1) = (first.timestamp(), last.timestamp());
        let points = h
            .records
            .iter()
            .zip(&h.snapshots)
            .map(|(r, snap)| {
                let code: Vec<usize> = snap
                    .cells
                    .iter()
                    .filter(|c| c.cell_type == CellType::Code)
                    .map(|c| *cache.entry(c.source.clone()).or_insert_with(|| count_bindings(&c.source)))
                    .collect();
                let mean = if code.is_empty() { 0.0 } else { code.iter().sum::<usize>() as f64 / code.len() as f64 };
                let time = if t1 > t0 { (r.timestamp() - t0) as f64 / (t1 - t0) as f64 } else { 0.0 };
                ObjectPoint { time, seq_no: r.seq_no, mean_bindings: mean }
            })
            .collect();
        per_notebook.insert(h.key.clone(), points);
    }
    let average = (0..CURVE_POINTS)
        .map(|k| {
            let t = k as f64 / (CURVE_POINTS - 1) as f64;
            let values: Vec<f64> = per_notebook
                .values()
                .map(|pts: &Vec<ObjectPoint>| pts.iter().take_while(|p| p.time <= t).last().map_or(0.0, |p| p.mean_bindings))
                .collect();
            let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
            (t, mean)
        })
        .collect();
    ObjectSeries { per_notebook, average }
}

impl ObjectSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,notebook,seq_no,time,mean_bindings\n");
        for (key, points) in &self.per_notebook {
            for p in points {
                writeln!(out, "notebook,{},{},{},{}", csv_field(&key.to_string()), p.seq_no, fmt_f64(p.time), fmt_f64(p.mean_bindings))
                    .expect("string write");
            }
        }
        for (t, v) in &self.average {
            writeln!(out, "average,,,{},{}", fmt_f64(*t), fmt_f64(*v)).expect("string write");
        }
        out
    }
}

/// Quote a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Share of each purpose label among all labels given to self-transitions.
pub fn purpose_proportions(annotated: &[AnnotatedTransition]) -> BTreeMap<PurposeLabel, f64> {
    let mut counts: BTreeMap<PurposeLabel, usize> = BTreeMap::new();
    for a in annotated.iter().filter(|a| a.transition.is_self()) {
        for p in &a.purposes {
            *counts.entry(p.clone()).or_insert(0) += 1;
        }
    }
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_matrices() {
        let m = TransitionMatrix::from_pairs([(DsStep::DataExploration, DsStep::DataExploration)], Normalization::Row);
        assert_eq!(m.get(DsStep::DataExploration, DsStep::DataExploration), 1.0);
        assert_eq!(m.diagonal_dominance(), Some(1.0));
        assert!(m.diagonal_strictly_greatest());
        let g = TransitionMatrix::from_pairs([(DsStep::LoadData, DsStep::Modelling)], Normalization::GrandTotal);
        assert_eq!(g.get(DsStep::LoadData, DsStep::Modelling), 1.0);
        assert_eq!(g.mass_on(&[DsStep::LoadData]), Some(0.0));
        assert!(TransitionMatrix::from_pairs([], Normalization::Row).is_empty());
    }

    #[test]
    fn quantile_bins() {
        assert_eq!((0..20).map(|i| quantile_bin(i, 20)).filter(|b| *b == 0).count(), 2);
        assert_eq!((0..3).map(|i| quantile_bin(i, 3)).collect::<Vec<_>>(), vec![0, 3, 6]);
    }

    #[test]
    fn union_of_intervals() {
        assert_eq!(union_length(vec![(0, 10), (5, 15), (20, 25)]), 20);
        assert_eq!(union_length(vec![]), 0);
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]), (Some(5.0), None));
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_f64(-0.0), "0");
    }
}
