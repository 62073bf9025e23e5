//! Lexical cell features.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::pylex::{self, Token, TokenKind, AUGMENTED_ASSIGN};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFeatures {
    /// Physical lines covered by at least one non-comment token.
    pub lines_of_code: usize,
    /// Distinct identifiers bound or referenced, excluding keywords,
    /// attribute names and keyword-argument names.
    pub unique_variables: usize,
    /// Lines holding only a comment.
    pub comment_line_count: usize,
    pub statement_count: usize,
    /// Statements that neither assign nor start with a keyword; their value is displayed.
    pub display_statements: usize,
    pub assignment_statements: usize,
    pub import_statements: usize,
    /// Lines that belong to import statements, def/class blocks, configuration calls or magics.
    pub helper_lines: usize,
    pub has_import: bool,
    pub has_def: bool,
    pub has_plot_call: bool,
    pub has_fit_call: bool,
    pub has_model_constructor: bool,
    pub has_transformer_fit: bool,
    pub has_read_call: bool,
    pub has_write_call: bool,
    pub has_metric_call: bool,
    pub has_predict_call: bool,
    pub has_config_call: bool,
    pub has_string_literal: bool,
    pub has_url_literal: bool,
    /// A string literal naming a data file (`.csv`, `.pkl`, ...).
    pub has_data_path_literal: bool,
    /// Names suggesting model results (`scores`, `history`, `importances`, ...).
    pub mentions_results: bool,
}

impl CellFeatures {
    pub fn is_comment_only(&self) -> bool {
        self.lines_of_code == 0
    }
}

const PLOT_ROOTS: [&str; 7] = ["plt", "sns", "px", "go", "alt", "matplotlib", "plotly"];
const PLOT_CALLS: [&str; 26] = [
    "plot", "scatter", "hist", "bar", "barh", "boxplot", "heatmap", "pairplot", "countplot", "barplot",
    "lineplot", "scatterplot", "histplot", "displot", "distplot", "violinplot", "kdeplot", "imshow",
    "catplot", "boxenplot", "jointplot", "regplot", "lmplot", "pie", "plot_tree", "plot_importance",
];
const READ_CALLS: [&str; 16] = [
    "loadtxt", "genfromtxt", "load_dataset", "load_data", "load_iris", "load_wine", "load_digits",
    "load_boston", "load_diabetes", "load_breast_cancer", "fetch_openml", "fetch_california_housing",
    "imread", "load_workbook", "read", "from_csv",
];
const WRITE_CALLS: [&str; 16] = [
    "to_csv", "to_excel", "to_json", "to_parquet", "to_pickle", "to_sql", "to_feather", "to_hdf",
    "savefig", "savetxt", "save", "save_model", "imwrite", "dump", "write", "to_file",
];
const FIT_CALLS: [&str; 5] = ["fit", "train", "fit_generator", "partial_fit", "compile"];
const MODEL_SUFFIXES: [&str; 8] = [
    "Classifier", "Regressor", "Regression", "Clustering", "NB", "SearchCV", "Booster", "Forest",
];
const MODEL_NAMES: [&str; 17] = [
    "SVC", "SVR", "LinearSVC", "KMeans", "DBSCAN", "Ridge", "Lasso", "ElasticNet", "Sequential",
    "XGBClassifier", "XGBRegressor", "LGBMClassifier", "LGBMRegressor", "ARIMA", "SARIMAX", "OLS", "Prophet",
];
const TRANSFORMER_HINTS: [&str; 8] = ["scaler", "encoder", "imputer", "vectorizer", "transformer", "pca", "normalizer", "tokenizer"];
const METRIC_CALLS: [&str; 22] = [
    "accuracy_score", "f1_score", "precision_score", "recall_score", "roc_auc_score", "mean_squared_error",
    "mean_absolute_error", "r2_score", "classification_report", "confusion_matrix", "log_loss", "score",
    "evaluate", "cross_val_score", "cross_validate", "roc_curve", "precision_recall_curve",
    "balanced_accuracy_score", "mean_absolute_percentage_error", "root_mean_squared_error",
    "matthews_corrcoef", "auc",
];
const PREDICT_CALLS: [&str; 5] = ["predict", "predict_proba", "predict_log_proba", "forecast", "decision_function"];
const CONFIG_CALLS: [&str; 8] = ["set_option", "filterwarnings", "set_theme", "set_style", "use", "seed", "set_context", "simplefilter"];
const RESULT_HINTS: [&str; 11] = [
    "score", "scores", "history", "importance", "importances", "feature_importances_", "results",
    "cm", "conf_matrix", "y_pred", "predictions",
];
const MUTATING_METHODS: [&str; 12] = [
    "append", "extend", "insert", "remove", "pop", "update", "clear", "sort", "add", "discard", "setdefault", "reverse",
];
const DATA_EXTENSIONS: [&str; 12] = [
    ".csv", ".tsv", ".xlsx", ".xls", ".json", ".pkl", ".pickle", ".parquet", ".feather", ".h5", ".txt", ".zip",
];

/// A call site: dotted chain of the callee, e.g. `["pd", "read_csv"]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Call {
    pub chain: Vec<String>,
}

impl Call {
    pub fn last(&self) -> &str {
        self.chain.last().map_or("", String::as_str)
    }

    pub fn root(&self) -> &str {
        self.chain.first().map_or("", String::as_str)
    }
}

pub(crate) fn calls(tokens: &[&Token]) -> Vec<Call> {
    let mut out = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if !t.is_name() || !tokens.get(i + 1).is_some_and(|n| n.is_op("(")) {
            continue;
        }
        let mut chain = vec![t.text.clone()];
        let mut j = i;
        while j >= 2 && tokens[j - 1].is_op(".") && tokens[j - 2].is_name() {
            chain.insert(0, tokens[j - 2].text.clone());
            j -= 2;
        }
        out.push(Call { chain });
    }
    out
}

fn is_plot_call(c: &Call) -> bool {
    PLOT_ROOTS.contains(&c.root()) || PLOT_CALLS.contains(&c.last()) || c.chain.iter().any(|p| p == "plot")
}

fn is_read_call(c: &Call) -> bool {
    c.last().starts_with("read_") || READ_CALLS.contains(&c.last()) || (c.root() == "pickle" || c.root() == "joblib") && c.last() == "load"
}

fn is_model_constructor(c: &Call) -> bool {
    let name = c.last();
    name.starts_with(char::is_uppercase)
        && (MODEL_NAMES.contains(&name) || MODEL_SUFFIXES.iter().any(|s| name.ends_with(s)))
}

fn open_mode(stmt: &[&Token], open_at: usize) -> Option<String> {
    // second positional or mode= argument of open(...)
    let depth = stmt[open_at + 1].depth;
    let mut arg = 0;
    for (k, t) in stmt[open_at + 2..].iter().enumerate() {
        if t.depth == depth && t.is_op(")") {
            break;
        }
        if t.depth == depth + 1 && t.is_op(",") {
            arg += 1;
        }
        if t.kind == TokenKind::Str && t.depth == depth + 1 {
            let prev_is_mode = k > 0 && stmt[open_at + 2 + k - 1].is_op("=") && k > 1 && stmt[open_at + 2 + k - 2].text == "mode";
            if arg == 1 || prev_is_mode {
                return Some(t.text.trim_matches(|ch| ch == '\'' || ch == '"').to_string());
            }
        }
    }
    None
}

pub(crate) fn is_assignment(stmt: &[&Token]) -> bool {
    stmt.iter().any(|t| {
        t.depth == 0 && t.kind == TokenKind::Op && (t.text == "=" || t.text == ":=" || AUGMENTED_ASSIGN.contains(&t.text.as_str()))
    })
}

/// A statement whose value would be displayed: a bare expression that does
/// not mutate state through a known in-place method or `inplace=True`.
pub(crate) fn is_display_statement(stmt: &[&Token]) -> bool {
    let Some(first) = stmt.first() else { return false };
    if first.kind == TokenKind::Keyword && !matches!(first.text.as_str(), "not" | "None" | "True" | "False" | "lambda" | "await") {
        return false;
    }
    if is_assignment(stmt) {
        return false;
    }
    let inplace = stmt.windows(3).any(|w| w[0].text == "inplace" && w[1].is_op("=") && w[2].text == "True");
    if inplace {
        return false;
    }
    let top_calls = calls(stmt);
    if let Some(outer) = top_calls.first() {
        if MUTATING_METHODS.contains(&outer.last()) && outer.chain.len() > 1 {
            return false;
        }
    }
    true
}

pub fn extract_features(source: &str) -> CellFeatures {
    let tokens = pylex::tokenize(source);
    let mut f = CellFeatures::default();

    let mut code_lines = BTreeSet::new();
    let mut comment_lines = BTreeSet::new();
    let mut helper_lines = BTreeSet::new();
    for t in &tokens {
        match t.kind {
            TokenKind::Comment => {
                comment_lines.insert(t.line);
            }
            TokenKind::Magic => {
                code_lines.insert(t.line);
                helper_lines.insert(t.line);
                f.has_config_call = true;
            }
            _ => code_lines.extend(t.line..=t.end_line),
        }
        if t.kind == TokenKind::Str {
            f.has_string_literal = true;
            let body = t.text.to_ascii_lowercase();
            if body.contains("http://") || body.contains("https://") || body.contains("ftp://") {
                f.has_url_literal = true;
            }
            let inner = body.trim_end_matches(['\'', '"']);
            if DATA_EXTENSIONS.iter().any(|ext| inner.ends_with(ext)) {
                f.has_data_path_literal = true;
            }
        }
    }
    f.lines_of_code = code_lines.len();
    f.comment_line_count = comment_lines.difference(&code_lines).count();

    let mut variables = BTreeSet::new();
    let code_tokens: Vec<&Token> = tokens.iter().filter(|t| !matches!(t.kind, TokenKind::Comment | TokenKind::Magic)).collect();
    for (i, t) in code_tokens.iter().enumerate() {
        if !t.is_name() {
            continue;
        }
        let attribute = i > 0 && code_tokens[i - 1].is_op(".");
        let keyword_arg = t.depth > 0
            && code_tokens.get(i + 1).is_some_and(|n| n.is_op("="))
            && i > 0
            && (code_tokens[i - 1].is_op("(") || code_tokens[i - 1].is_op(","));
        if !attribute && !keyword_arg {
            variables.insert(t.text.as_str());
        }
        if RESULT_HINTS.contains(&t.text.as_str()) {
            f.mentions_results = true;
        }
    }
    f.unique_variables = variables.len();

    // track indented blocks under def/class headers as helper lines
    let mut block_indent: Option<usize> = None;
    let lines: Vec<&str> = source.lines().collect();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        if let Some(base) = block_indent {
            if indent > base {
                helper_lines.insert(n);
                continue;
            }
            block_indent = None;
        }
        let trimmed = line.trim_start();
        if trimmed.starts_with("def ") || trimmed.starts_with("class ") || trimmed.starts_with("async def ") || trimmed.starts_with('@') {
            helper_lines.insert(n);
            if !trimmed.starts_with('@') {
                block_indent = Some(indent);
            }
        }
    }

    for stmt in pylex::statements(&tokens) {
        f.statement_count += 1;
        let first = stmt[0];
        let span = stmt[0].line..=stmt.last().map_or(stmt[0].line, |t| t.end_line);
        if first.is_keyword("import") || first.is_keyword("from") && stmt.iter().any(|t| t.is_keyword("import")) {
            f.has_import = true;
            f.import_statements += 1;
            helper_lines.extend(span.clone());
        }
        if first.is_keyword("def") || first.is_keyword("class") || first.is_keyword("async") && stmt.get(1).is_some_and(|t| t.is_keyword("def")) {
            f.has_def = true;
        }
        if is_assignment(&stmt) {
            f.assignment_statements += 1;
        } else if is_display_statement(&stmt) {
            f.display_statements += 1;
        }
        let stmt_calls = calls(&stmt);
        let mut config = false;
        for c in &stmt_calls {
            let last = c.last();
            f.has_plot_call |= is_plot_call(c);
            f.has_read_call |= is_read_call(c);
            f.has_write_call |= WRITE_CALLS.contains(&last) && c.chain.len() > 1 || last == "savefig";
            f.has_metric_call |= METRIC_CALLS.contains(&last);
            f.has_predict_call |= PREDICT_CALLS.contains(&last);
            f.has_model_constructor |= is_model_constructor(c);
            if FIT_CALLS.contains(&last) && c.chain.len() > 1 {
                let receiver = c.chain[c.chain.len() - 2].to_ascii_lowercase();
                if TRANSFORMER_HINTS.iter().any(|h| receiver.contains(h)) {
                    f.has_transformer_fit = true;
                } else {
                    f.has_fit_call = true;
                }
            }
            let plot_style = (c.root() == "sns" && last == "set") || (c.chain.iter().any(|p| p == "style") && last == "use");
            if CONFIG_CALLS.contains(&last) && c.chain.len() > 1 && last != "use" || plot_style {
                config = true;
            }
        }
        if stmt.iter().any(|t| t.text == "rcParams") {
            config = true;
        }
        if config && stmt_calls.iter().all(|c| !is_read_call(c)) {
            f.has_config_call = true;
            helper_lines.extend(span.clone());
        }
        // open(path) reads, open(path, 'w') writes
        for (k, t) in stmt.iter().enumerate() {
            if t.text == "open" && t.is_name() && stmt.get(k + 1).is_some_and(|n| n.is_op("(")) {
                match open_mode(&stmt, k) {
                    Some(mode) if mode.contains(['w', 'a', 'x']) => f.has_write_call = true,
                    _ => f.has_read_call = true,
                }
            }
        }
    }
    f.helper_lines = helper_lines.intersection(&code_lines).count();
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_and_variable_counts() {
        let f = extract_features("x = 1\ny = x");
        assert_eq!(f.lines_of_code, 2);
        assert_eq!(f.unique_variables, 2);
        assert_eq!(f.assignment_statements, 2);

        let f = extract_features("# only a comment");
        assert_eq!(f.comment_line_count, 1);
        assert_eq!(f.lines_of_code, 0);
        assert!(f.is_comment_only());

        let f = extract_features("df.groupby('a').agg(total=('b', 'sum'))  # per a");
        assert_eq!(f.unique_variables, 1);
        assert_eq!(f.comment_line_count, 0);
        assert_eq!(f.display_statements, 1);
    }

    #[test]
    fn call_flags() {
        assert!(extract_features("import os").has_import);
        assert!(extract_features("df = pd.read_csv('a.csv')").has_read_call);
        assert!(extract_features("df.to_csv('out.csv', index=False)").has_write_call);
        assert!(extract_features("with open('o.txt', 'w') as fh:\n    fh.write(s)").has_write_call);
        assert!(extract_features("with open('o.txt') as fh:\n    s = fh.read()").has_read_call);
        assert!(extract_features("model.fit(X, y)").has_fit_call);
        let scaler = extract_features("scaler.fit(X)");
        assert!(scaler.has_transformer_fit && !scaler.has_fit_call);
        assert!(extract_features("plt.plot(x)").has_plot_call);
        assert!(extract_features("df['a'].plot.hist()").has_plot_call);
        assert!(extract_features("acc = accuracy_score(y, p)").has_metric_call);
        assert!(extract_features("p = model.predict(X)").has_predict_call);
        assert!(extract_features("clf = RandomForestClassifier()").has_model_constructor);
        assert!(extract_features("url = 'https://x.org/d.csv'").has_url_literal);
        assert!(extract_features("%matplotlib inline").has_config_call);
    }

    #[test]
    fn display_statements() {
        let f = extract_features("df.head()\ndf.shape\nprint(x)\nlst.append(1)\ndf.drop('a', axis=1, inplace=True)");
        assert_eq!(f.display_statements, 3);
    }

    #[test]
    fn helper_lines_cover_def_blocks() {
        let f = extract_features("import numpy as np\n\ndef f(x):\n    y = x + 1\n    return y\n\nz = f(2)");
        assert_eq!(f.lines_of_code, 5);
        assert_eq!(f.helper_lines, 4);
    }
}
