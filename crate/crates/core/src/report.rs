//! Machine-readable summary of one analysis run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytics::{
    inter_matrix, inter_matrix_splits, label_executions, purpose_proportions, quantile_profile, self_matrix,
    time_stats, Groups, MatchDiagnostics, QuantileProfile, TimeRow, TimeStats,
};
use crate::annotate::{mechanical_agreement, AnnotatedTransition, DsStep, PurposeSource};
use crate::event::EventKind;
use crate::normalize::LogRecord;
use crate::snapshot::NotebookHistory;
use crate::transition::{
    chain_stats, kind_split, mean_change_size, output_kind_distribution, ChainStats, Correlation, PositionMean,
    Transition, TransitionKind,
};

/// Steps whose mutual transitions make up the exploration/preprocessing core.
pub const CORE_STEPS: [DsStep; 2] = [DsStep::DataExploration, DsStep::DataPreprocessing];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub events: usize,
    pub executions: usize,
    pub creations: usize,
    pub synthesized_creations: usize,
    pub deletions: usize,
    pub notebooks: usize,
}

impl EventCounts {
    pub fn of(log: &[LogRecord]) -> EventCounts {
        let count = |k: EventKind| log.iter().filter(|r| r.kind() == k).count();
        let synthesized = log.iter().filter(|r| r.was_synthesized()).count();
        let notebooks = log.iter().map(|r| r.event.notebook_key()).collect::<std::collections::BTreeSet<_>>().len();
        EventCounts {
            events: log.len() - synthesized,
            executions: count(EventKind::ExecuteCell),
            creations: count(EventKind::CreateCell) - synthesized,
            synthesized_creations: synthesized,
            deletions: count(EventKind::DeleteCell),
            notebooks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub total: usize,
    pub self_transitions: usize,
    pub inter_transitions: usize,
    pub self_share: Option<f64>,
    pub inter_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chains: usize,
    pub executions_in_chains: usize,
    pub singleton_executions: usize,
    pub total_executions: usize,
    pub reexecuted_cells: usize,
    pub mean_reexecutions_per_cell: Option<f64>,
    pub mean_reexecutions_per_chain: Option<f64>,
    pub top_5_percent_cell_share: Option<f64>,
    pub length_histogram: BTreeMap<usize, usize>,
    pub position_means: Vec<PositionMean>,
    pub correlation: Option<Correlation>,
}

impl ChainSummary {
    pub fn of(stats: &ChainStats) -> ChainSummary {
        ChainSummary {
            chains: stats.chains.len(),
            executions_in_chains: stats.executions_in_chains(),
            singleton_executions: stats.singleton_executions,
            total_executions: stats.total_executions,
            reexecuted_cells: stats.reexecutions_per_cell().len(),
            mean_reexecutions_per_cell: stats.mean_reexecutions_per_cell(),
            mean_reexecutions_per_chain: stats.mean_reexecutions_per_chain(),
            top_5_percent_cell_share: stats.top_cell_share(0.05),
            length_histogram: stats.length_histogram(),
            position_means: stats.position_means.clone(),
            correlation: stats.correlation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSize {
    pub mean_including_zero: Option<f64>,
    pub mean_excluding_zero: Option<f64>,
    pub include_zero: bool,
    /// The mean selected by `include_zero`.
    pub reported: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurposeSummary {
    pub proportions: BTreeMap<String, f64>,
    pub sources: BTreeMap<String, usize>,
    pub mechanical_agreement: Option<f64>,
    pub mechanical_compared: usize,
    pub flagged: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub self_diagonal_dominance: Option<f64>,
    pub self_diagonal_strictly_greatest: bool,
    pub inter_core_mass: Option<f64>,
    pub inter_core_mass_by_task: BTreeMap<String, Option<f64>>,
    pub inter_core_mass_by_expertise: BTreeMap<String, Option<f64>>,
    pub helper_functions_bin_ratio: Option<f64>,
    pub helper_functions_bins: usize,
    pub labeled_executions: u64,
    pub step_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub rows: Vec<TimeRow>,
    pub diagnostics: MatchDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub counts: EventCounts,
    pub transitions: TransitionSummary,
    pub chains: ChainSummary,
    pub change_size: ChangeSize,
    pub output_kinds_self: BTreeMap<String, f64>,
    pub output_kinds_inter: BTreeMap<String, f64>,
    pub purposes: PurposeSummary,
    pub steps: StepSummary,
    pub time: TimeSummary,
}

/// Everything the report stage computes, kept together for the CSV writers.
pub struct Analysis {
    pub report: Report,
    pub self_matrix: crate::analytics::TransitionMatrix,
    pub inter_matrix: crate::analytics::TransitionMatrix,
    pub quantiles: QuantileProfile,
    pub time: TimeStats,
    pub objects: crate::analytics::ObjectSeries,
}

/// Executions in notebooks that were executed exactly once; they appear in no transition.
pub fn isolated_executions(log: &[LogRecord]) -> usize {
    let mut per_notebook: BTreeMap<_, usize> = BTreeMap::new();
    for r in log.iter().filter(|r| r.kind() == EventKind::ExecuteCell) {
        *per_notebook.entry(r.event.notebook_key()).or_insert(0) += 1;
    }
    per_notebook.values().filter(|c| **c == 1).count()
}

pub fn analyze(
    annotated: &[AnnotatedTransition],
    log: &[LogRecord],
    histories: &[NotebookHistory],
    groups: &Groups,
    include_zero: bool,
    config_hash: &str,
) -> Analysis {
    let transitions: Vec<Transition> = annotated.iter().map(|a| a.transition.clone()).collect();
    let stats = chain_stats(&transitions).with_isolated_executions(isolated_executions(log));
    let split = kind_split(&transitions);
    let self_count = transitions.iter().filter(|t| t.is_self()).count();

    let share_map = |kind| {
        output_kind_distribution(&transitions, kind)
            .into_iter()
            .map(|(k, v)| (k.as_str().to_string(), v))
            .collect::<BTreeMap<_, _>>()
    };

    let mut sources: BTreeMap<String, usize> = BTreeMap::new();
    let mut flagged: BTreeMap<String, usize> = BTreeMap::new();
    for a in annotated {
        if let Some(s) = a.purpose_source {
            let name = match s {
                PurposeSource::Rule => "rule",
                PurposeSource::Backend => "backend",
                PurposeSource::Reconciled => "reconciled",
            };
            *sources.entry(name.to_string()).or_insert(0) += 1;
        }
        for f in &a.flags {
            *flagged.entry(f.clone()).or_insert(0) += 1;
        }
    }
    let agreement = mechanical_agreement(annotated);

    let self_m = self_matrix(annotated);
    let inter_m = inter_matrix(annotated);
    let (by_task, by_expertise) = inter_matrix_splits(annotated, groups);
    let labeled = label_executions(histories);
    let quantiles = quantile_profile(&labeled);
    let evenness = quantiles.evenness(DsStep::HelperFunctions);
    let mut step_counts = BTreeMap::new();
    for e in &labeled {
        *step_counts.entry(e.step.as_str().to_string()).or_insert(0u64) += 1;
    }
    let time = time_stats(log, groups);
    let objects = crate::analytics::object_series(histories);

    let with_zero = mean_change_size(&transitions, true);
    let without_zero = mean_change_size(&transitions, false);
    let report = Report {
        config_hash: config_hash.to_string(),
        counts: EventCounts::of(log),
        transitions: TransitionSummary {
            total: transitions.len(),
            self_transitions: self_count,
            inter_transitions: transitions.len() - self_count,
            self_share: split.map(|s| s.0),
            inter_share: split.map(|s| s.1),
        },
        chains: ChainSummary::of(&stats),
        change_size: ChangeSize {
            mean_including_zero: with_zero,
            mean_excluding_zero: without_zero,
            include_zero,
            reported: if include_zero { with_zero } else { without_zero },
        },
        output_kinds_self: share_map(TransitionKind::SelfLoop),
        output_kinds_inter: share_map(TransitionKind::Inter),
        purposes: PurposeSummary {
            proportions: purpose_proportions(annotated).into_iter().map(|(k, v)| (k.as_str().to_string(), v)).collect(),
            sources,
            mechanical_agreement: agreement.map(|a| a.0),
            mechanical_compared: agreement.map_or(0, |a| a.1),
            flagged,
        },
        steps: StepSummary {
            self_diagonal_dominance: self_m.diagonal_dominance(),
            self_diagonal_strictly_greatest: self_m.diagonal_strictly_greatest(),
            inter_core_mass: inter_m.mass_on(&CORE_STEPS),
            inter_core_mass_by_task: by_task.iter().map(|(k, m)| (k.clone(), m.mass_on(&CORE_STEPS))).collect(),
            inter_core_mass_by_expertise: by_expertise.iter().map(|(k, m)| (k.clone(), m.mass_on(&CORE_STEPS))).collect(),
            helper_functions_bin_ratio: evenness.map(|e| e.0),
            helper_functions_bins: evenness.map_or(0, |e| e.1),
            labeled_executions: quantiles.total(),
            step_counts,
        },
        time: TimeSummary { rows: time.rows.clone(), diagnostics: time.diagnostics.clone() },
    };
    Analysis { report, self_matrix: self_m, inter_matrix: inter_m, quantiles, time, objects }
}
