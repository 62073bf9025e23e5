//! Execution-to-execution transitions and re-execution statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distance::normalized_edit_distance;
use crate::event::{EventKind, NotebookKey, Output, OutputType};
use crate::snapshot::{CellState, NotebookHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// The same cell executed twice in a row.
    #[serde(rename = "self")]
    SelfLoop,
    Inter,
}

impl TransitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::SelfLoop => "self",
            TransitionKind::Inter => "inter",
        }
    }
}

/// Output category of a cell, with `Empty` for cells without outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    ExecuteResult,
    Stream,
    Error,
    Empty,
    DisplayData,
}

impl OutputKind {
    pub const ALL: [OutputKind; 5] = [
        OutputKind::ExecuteResult,
        OutputKind::Stream,
        OutputKind::Error,
        OutputKind::Empty,
        OutputKind::DisplayData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::ExecuteResult => "execute_result",
            OutputKind::Stream => "stream",
            OutputKind::Error => "error",
            OutputKind::Empty => "empty",
            OutputKind::DisplayData => "display_data",
        }
    }

    /// Collapse an output list to one category. Precedence when several
    /// kinds are present: error, execute_result, display_data, stream.
    pub fn of(outputs: &[Output]) -> OutputKind {
        let has = |t: OutputType| outputs.iter().any(|o| o.output_type == t);
        if outputs.is_empty() {
            OutputKind::Empty
        } else if has(OutputType::Error) {
            OutputKind::Error
        } else if has(OutputType::ExecuteResult) {
            OutputKind::ExecuteResult
        } else if has(OutputType::DisplayData) {
            OutputKind::DisplayData
        } else {
            OutputKind::Stream
        }
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub id: String,
    pub notebook: NotebookKey,
    pub from_seq_no: u64,
    pub to_seq_no: u64,
    /// State of the from-cell right before the to-execution: source as last
    /// executed, plus the outputs that execution left behind.
    pub from_cell: CellState,
    /// State of the to-cell right after its execution.
    pub to_cell: CellState,
    pub kind: TransitionKind,
    pub from_output_kind: OutputKind,
    /// Seconds between the two executions.
    pub gap: f64,
}

impl Transition {
    pub fn is_self(&self) -> bool {
        self.kind == TransitionKind::SelfLoop
    }

    pub fn edit_distance(&self) -> f64 {
        normalized_edit_distance(&self.from_cell.source, &self.to_cell.source)
    }
}

/// One transition per consecutive pair of executions within a notebook.
pub fn extract_transitions(history: &NotebookHistory) -> Vec<Transition> {
    let mut latest: HashMap<&str, &CellState> = HashMap::new();
    let mut previous: Option<(usize, String)> = None;
    let mut out = Vec::new();

    for (i, record) in history.records.iter().enumerate() {
        let snapshot = &history.snapshots[i];
        if record.event.kind == EventKind::ExecuteCell {
            let cell_id = record.event.cell_id.as_deref().expect("execute carries cell_id");
            let to_cell = snapshot.cell(cell_id).expect("executed cell is in its snapshot");
            if let Some((from_idx, from_id)) = &previous {
                let from_record = &history.records[*from_idx];
                let from_cell = latest
                    .get(from_id.as_str())
                    .copied()
                    .expect("from-cell was seen when it executed");
                out.push(Transition {
                    id: format!("t{}", record.seq_no),
                    notebook: history.key.clone(),
                    from_seq_no: from_record.seq_no,
                    to_seq_no: record.seq_no,
                    from_cell: from_cell.clone(),
                    to_cell: to_cell.clone(),
                    kind: if *from_id == cell_id {
                        TransitionKind::SelfLoop
                    } else {
                        TransitionKind::Inter
                    },
                    from_output_kind: OutputKind::of(&from_cell.last_outputs),
                    gap: (record.event.timestamp - from_record.event.timestamp) as f64 / 1000.0,
                });
            }
            previous = Some((i, cell_id.to_string()));
        }
        if let Some(cell_id) = record.event.cell_id.as_deref() {
            if let Some(state) = snapshot.cell(cell_id) {
                latest.insert(cell_id, state);
            }
        }
    }
    out
}

pub fn extract_all(histories: &[NotebookHistory]) -> Vec<Transition> {
    histories.iter().flat_map(extract_transitions).collect()
}

/// Fractions of self and inter transitions; `None` for no transitions.
pub fn kind_split(transitions: &[Transition]) -> Option<(f64, f64)> {
    if transitions.is_empty() {
        return None;
    }
    let selfs = transitions.iter().filter(|t| t.is_self()).count();
    let self_fraction = selfs as f64 / transitions.len() as f64;
    Some((self_fraction, 1.0 - self_fraction))
}

/// Maximal run of consecutive executions of one cell (at least two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub notebook: NotebookKey,
    pub cell_id: String,
    pub start_seq_no: u64,
    pub executions: usize,
}

impl Chain {
    pub fn self_transitions(&self) -> usize {
        self.executions - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPoint {
    /// 1 for the first re-execution in a chain, 2 for the second, ...
    pub position: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionMean {
    pub position: u32,
    pub mean_distance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of the t-test on `r`.
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chains: Vec<Chain>,
    /// Executions not followed or preceded by an execution of the same cell.
    pub singleton_executions: usize,
    pub total_executions: usize,
    pub points: Vec<PositionPoint>,
    pub position_means: Vec<PositionMean>,
    pub correlation: Option<Correlation>,
}

impl ChainStats {
    pub fn executions_in_chains(&self) -> usize {
        self.chains.iter().map(|c| c.executions).sum()
    }

    /// Total self-transitions per cell, for cells re-executed at least once.
    pub fn reexecutions_per_cell(&self) -> BTreeMap<(NotebookKey, String), usize> {
        let mut per_cell = BTreeMap::new();
        for c in &self.chains {
            *per_cell.entry((c.notebook.clone(), c.cell_id.clone())).or_insert(0) += c.self_transitions();
        }
        per_cell
    }

    /// Mean re-executions over cells re-executed at least once.
    pub fn mean_reexecutions_per_cell(&self) -> Option<f64> {
        mean_usize(self.reexecutions_per_cell().values().copied())
    }

    /// Mean re-executions per chain.
    pub fn mean_reexecutions_per_chain(&self) -> Option<f64> {
        mean_usize(self.chains.iter().map(Chain::self_transitions))
    }

    /// Share of all re-executions owned by the top `fraction` of re-executed
    /// cells (at least one cell).
    pub fn top_cell_share(&self, fraction: f64) -> Option<f64> {
        let mut counts: Vec<usize> = self.reexecutions_per_cell().into_values().collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return None;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let k = ((counts.len() as f64 * fraction).ceil() as usize).clamp(1, counts.len());
        Some(counts[..k].iter().sum::<usize>() as f64 / total as f64)
    }

    /// Account for executions that have no transition at all (notebooks
    /// executed exactly once).
    pub fn with_isolated_executions(mut self, count: usize) -> ChainStats {
        self.singleton_executions += count;
        self.total_executions += count;
        self
    }

    /// Histogram of chain lengths counted in re-executions.
    pub fn length_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for c in &self.chains {
            *h.entry(c.self_transitions()).or_insert(0) += 1;
        }
        h
    }
}

fn mean_usize(values: impl Iterator<Item = usize>) -> Option<f64> {
    let (sum, n) = values.fold((0usize, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Run-length encode consecutive executions per notebook stream.
pub fn chain_stats(transitions: &[Transition]) -> ChainStats {
    let mut chains = Vec::new();
    let mut singletons = 0;
    let mut total = 0;
    let mut points = Vec::new();

    let mut i = 0;
    while i < transitions.len() {
        // one notebook stream: a maximal slice of transitions linked end to start
        let mut j = i + 1;
        while j < transitions.len()
            && transitions[j].notebook == transitions[i].notebook
            && transitions[j].from_seq_no == transitions[j - 1].to_seq_no
        {
            j += 1;
        }
        let stream = &transitions[i..j];
        total += stream.len() + 1;

        let mut run_start = 0usize;
        let mut run_start_seq = stream[0].from_seq_no;
        let mut position = 0u32;
        for (k, t) in stream.iter().enumerate() {
            if t.is_self() {
                position += 1;
                points.push(PositionPoint {
                    position,
                    distance: t.edit_distance(),
                });
            } else {
                close_run(&mut chains, &mut singletons, stream, run_start, k, run_start_seq);
                run_start = k + 1;
                run_start_seq = t.to_seq_no;
                position = 0;
            }
        }
        close_run(&mut chains, &mut singletons, stream, run_start, stream.len(), run_start_seq);
        i = j;
    }

    ChainStats {
        correlation: pearson(
            &points.iter().map(|p| p.position as f64).collect::<Vec<_>>(),
            &points.iter().map(|p| p.distance).collect::<Vec<_>>(),
        ),
        position_means: position_means(&points),
        chains,
        singleton_executions: singletons,
        total_executions: total,
        points,
    }
}

// Executions run_start..=end (indices into the execution sequence of the stream).
fn close_run(
    chains: &mut Vec<Chain>,
    singletons: &mut usize,
    stream: &[Transition],
    run_start: usize,
    end: usize,
    start_seq_no: u64,
) {
    let executions = end - run_start + 1;
    if executions == 1 {
        *singletons += 1;
        return;
    }
    let first = &stream[run_start];
    chains.push(Chain {
        notebook: first.notebook.clone(),
        cell_id: first.from_cell.cell_id.clone(),
        start_seq_no,
        executions,
    });
}

fn position_means(points: &[PositionPoint]) -> Vec<PositionMean> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.position).or_insert((0.0, 0));
        e.0 += p.distance;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(position, (sum, count))| PositionMean {
            position,
            mean_distance: sum / count as f64,
            count,
        })
        .collect()
}

/// Pearson correlation with a two-sided t-test p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<Correlation> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Some(Correlation { r, p, n })
}

/// Mean normalized edit distance over self-transitions.
pub fn mean_change_size(transitions: &[Transition], include_zero: bool) -> Option<f64> {
    let distances: Vec<f64> = transitions
        .iter()
        .filter(|t| t.is_self())
        .map(Transition::edit_distance)
        .filter(|d| include_zero || *d > 0.0)
        .collect();
    (!distances.is_empty()).then(|| distances.iter().sum::<f64>() / distances.len() as f64)
}

/// Share of each output kind among the from-cells of transitions of `kind`.
pub fn output_kind_distribution(transitions: &[Transition], kind: TransitionKind) -> BTreeMap<OutputKind, f64> {
    let mut counts: BTreeMap<OutputKind, usize> = BTreeMap::new();
    for t in transitions.iter().filter(|t| t.kind == kind) {
        *counts.entry(t.from_output_kind).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{CellType, RawEvent};
    use crate::normalize::LogRecord;
    use crate::snapshot::build_histories;

    struct Log(Vec<LogRecord>);

    impl Log {
        fn push(&mut self, kind: EventKind, cell: &str, source: &str, outputs: Vec<Output>) {
            let seq_no = self.0.len() as u64;
            let rule = kind.fields();
            self.0.push(LogRecord {
                event: RawEvent {
                    kind,
                    session_id: "s".into(),
                    kernel_id: "k".into(),
                    notebook_name: "nb".into(),
                    timestamp: seq_no as i64 * 1000,
                    seq: seq_no,
                    user_id: "u".into(),
                    cell_id: Some(cell.into()),
                    cell_ordinal: Some(0),
                    source: rule.source.then(|| source.into()),
                    outputs: rule.outputs.then_some(outputs),
                    new_cell_type: rule.new_cell_type.then_some(CellType::Code),
                    extras: Default::default(),
                },
                seq_no,
                repaired: vec![],
            });
        }

        fn run(&mut self, cell: &str, source: &str, outputs: Vec<Output>) {
            self.push(EventKind::ExecuteCell, cell, source, vec![]);
            self.push(EventKind::FinishExecute, cell, "", outputs);
        }

        fn transitions(&self) -> Vec<Transition> {
            extract_all(&build_histories(&self.0).unwrap())
        }
    }

    fn log_with(cells: &[&str]) -> Log {
        let mut log = Log(vec![]);
        for c in cells {
            log.push(EventKind::CreateCell, c, "", vec![]);
        }
        log
    }

    #[test]
    fn self_then_inter() {
        let mut log = log_with(&["c1", "c2"]);
        log.run("c1", "a", vec![]);
        log.run("c1", "ab", vec![]);
        log.run("c2", "z", vec![]);
        let ts = log.transitions();
        let kinds: Vec<_> = ts.iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![TransitionKind::SelfLoop, TransitionKind::Inter]);
        assert_eq!(ts[0].from_cell.source, "a");
        assert_eq!(ts[0].to_cell.source, "ab");
        assert_eq!(ts[0].gap, 2.0);
        assert_eq!(kind_split(&ts), Some((0.5, 0.5)));
    }

    #[test]
    fn single_execution_has_no_transitions() {
        let mut log = log_with(&["c1"]);
        log.run("c1", "a", vec![]);
        assert!(log.transitions().is_empty());
    }

    #[test]
    fn chain_of_three() {
        let mut log = log_with(&["c1", "c2"]);
        for s in ["a", "ab", "abc"] {
            log.run("c1", s, vec![]);
        }
        log.run("c2", "x", vec![]);
        let stats = chain_stats(&log.transitions());
        assert_eq!(stats.chains.len(), 1);
        assert_eq!(stats.chains[0].executions, 3);
        assert_eq!(stats.chains[0].self_transitions(), 2);
        assert_eq!(stats.singleton_executions, 1);
        assert_eq!(stats.total_executions, 4);
        assert_eq!(stats.executions_in_chains() + stats.singleton_executions, 4);
        assert_eq!(stats.points.iter().map(|p| p.position).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(stats.mean_reexecutions_per_cell(), Some(2.0));
        assert_eq!(stats.top_cell_share(0.05), Some(1.0));
    }

    #[test]
    fn no_self_transitions_means_no_correlation() {
        let mut log = log_with(&["c1", "c2"]);
        log.run("c1", "a", vec![]);
        log.run("c2", "b", vec![]);
        let stats = chain_stats(&log.transitions());
        assert!(stats.chains.is_empty());
        assert!(stats.correlation.is_none());
        assert_eq!(stats.mean_reexecutions_per_cell(), None);
    }

    #[test]
    fn output_kind_before_reexecution() {
        let mut log = log_with(&["c1"]);
        log.run("c1", "1/0", vec![Output::text(OutputType::Error, "ZeroDivisionError")]);
        log.run("c1", "1/1", vec![]);
        log.run("c1", "1/2", vec![]);
        let ts = log.transitions();
        assert_eq!(ts[0].from_output_kind, OutputKind::Error);
        assert_eq!(ts[1].from_output_kind, OutputKind::Empty);
        let dist = output_kind_distribution(&ts, TransitionKind::SelfLoop);
        assert_eq!(dist.get(&OutputKind::Error), Some(&0.5));
        assert_eq!(dist.get(&OutputKind::Empty), Some(&0.5));
        assert!(output_kind_distribution(&[], TransitionKind::SelfLoop).is_empty());
    }

    #[test]
    fn output_kind_precedence() {
        use OutputType::*;
        let o = |t| Output::text(t, "");
        assert_eq!(OutputKind::of(&[]), OutputKind::Empty);
        assert_eq!(OutputKind::of(&[o(Stream), o(Error)]), OutputKind::Error);
        assert_eq!(OutputKind::of(&[o(Stream), o(ExecuteResult)]), OutputKind::ExecuteResult);
        assert_eq!(OutputKind::of(&[o(Stream), o(DisplayData)]), OutputKind::DisplayData);
        assert_eq!(OutputKind::of(&[o(Stream)]), OutputKind::Stream);
    }

    #[test]
    fn pearson_known_values() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        assert!(c.p < 1e-9);
        // r = -0.8 with n = 5: t = -0.8*sqrt(3/0.36) = -2.3094, two-sided p = 0.10408
        let c = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 3.0, 4.0, 1.0, 2.0]).unwrap();
        assert!((c.r + 0.8).abs() < 1e-12);
        assert!((c.p - 0.10408).abs() < 1e-4, "{}", c.p);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn mean_change_size_toggle() {
        let mut log = log_with(&["c1"]);
        log.run("c1", "abcd", vec![]);
        log.run("c1", "abcd", vec![]);
        log.run("c1", "abce", vec![]);
        let ts = log.transitions();
        assert_eq!(mean_change_size(&ts, true), Some(0.125));
        assert_eq!(mean_change_size(&ts, false), Some(0.25));
    }
}
