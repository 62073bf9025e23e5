//! Data-science step labels for cells.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::CellFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsStep {
    DataPreprocessing,
    DataExploration,
    CommentOnly,
    Modelling,
    HelperFunctions,
    LoadData,
    Evaluation,
    Prediction,
    ResultVisualization,
    SaveResults,
}

impl DsStep {
    pub const ALL: [DsStep; 10] = [
        DsStep::DataPreprocessing,
        DsStep::DataExploration,
        DsStep::CommentOnly,
        DsStep::Modelling,
        DsStep::HelperFunctions,
        DsStep::LoadData,
        DsStep::Evaluation,
        DsStep::Prediction,
        DsStep::ResultVisualization,
        DsStep::SaveResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DsStep::DataPreprocessing => "data_preprocessing",
            DsStep::DataExploration => "data_exploration",
            DsStep::CommentOnly => "comment_only",
            DsStep::Modelling => "modelling",
            DsStep::HelperFunctions => "helper_functions",
            DsStep::LoadData => "load_data",
            DsStep::Evaluation => "evaluation",
            DsStep::Prediction => "prediction",
            DsStep::ResultVisualization => "result_visualization",
            DsStep::SaveResults => "save_results",
        }
    }

    pub fn index(self) -> usize {
        DsStep::ALL.iter().position(|s| *s == self).expect("listed")
    }
}

impl fmt::Display for DsStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown data science step {0:?}")]
pub struct UnknownStep(pub String);

impl FromStr for DsStep {
    type Err = UnknownStep;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DsStep::ALL
            .into_iter()
            .find(|step| step.as_str() == s)
            .ok_or_else(|| UnknownStep(s.to_string()))
    }
}

/// Single step label by ordered scoring; the first matching rule wins.
pub fn ds_step(_source: &str, f: &CellFeatures) -> DsStep {
    if f.is_comment_only() {
        return DsStep::CommentOnly;
    }
    if f.has_read_call && !f.has_write_call {
        return DsStep::LoadData;
    }
    if f.has_write_call {
        return DsStep::SaveResults;
    }
    let model_evidence = f.has_fit_call || f.has_model_constructor || f.has_predict_call || f.has_metric_call;
    if f.has_plot_call && (model_evidence || f.mentions_results) {
        return DsStep::ResultVisualization;
    }
    if f.helper_lines * 2 >= f.lines_of_code {
        return DsStep::HelperFunctions;
    }
    if f.has_fit_call || f.has_model_constructor && !f.has_metric_call && !f.has_predict_call {
        return DsStep::Modelling;
    }
    if f.has_metric_call {
        return DsStep::Evaluation;
    }
    if f.has_predict_call {
        return DsStep::Prediction;
    }
    if f.has_plot_call || f.display_statements * 2 > f.statement_count {
        return DsStep::DataExploration;
    }
    DsStep::DataPreprocessing
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::features::extract_features;

    fn step(src: &str) -> DsStep {
        ds_step(src, &extract_features(src))
    }

    #[test]
    fn basic_labels() {
        assert_eq!(step("import pandas as pd"), DsStep::HelperFunctions);
        assert_eq!(step(""), DsStep::CommentOnly);
        assert_eq!(step("# TODO"), DsStep::CommentOnly);
        assert_eq!(step("df = read_csv('a.csv')"), DsStep::LoadData);
        assert_eq!(step("model.fit(X, y)"), DsStep::Modelling);
        assert_eq!(step("df.head()"), DsStep::DataExploration);
        assert_eq!(step("df = df.dropna()"), DsStep::DataPreprocessing);
        assert_eq!(step("print(accuracy_score(y_test, y_pred))"), DsStep::Evaluation);
        assert_eq!(step("y_pred = model.predict(X_test)"), DsStep::Prediction);
        assert_eq!(step("df.to_csv('out.csv')"), DsStep::SaveResults);
    }

    #[test]
    fn names_round_trip() {
        for s in DsStep::ALL {
            assert_eq!(s.as_str().parse::<DsStep>().unwrap(), s);
        }
        assert!("modeling".parse::<DsStep>().is_err());
    }
}
