//! Change-purpose labels and the rule-based labeler.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use similar::{capture_diff_slices, Algorithm, DiffOp};

use super::features::{calls, is_assignment, is_display_statement};
use crate::distance::normalized_edit_distance;
use crate::pylex;
use crate::transition::OutputKind;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PurposeLabel {
    NoChange,
    ExploreVariable,
    Fix,
    Debug,
    EditCode,
    CleanCode,
    VisualizeData,
    ExtendCode,
    ImproveReadability,
    Comment,
    Uncomment,
    /// Label produced by an external backend outside the core scheme.
    Other(String),
}

impl PurposeLabel {
    pub const CORE: [PurposeLabel; 11] = [
        PurposeLabel::NoChange,
        PurposeLabel::ExploreVariable,
        PurposeLabel::Fix,
        PurposeLabel::Debug,
        PurposeLabel::EditCode,
        PurposeLabel::CleanCode,
        PurposeLabel::VisualizeData,
        PurposeLabel::ExtendCode,
        PurposeLabel::ImproveReadability,
        PurposeLabel::Comment,
        PurposeLabel::Uncomment,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            PurposeLabel::NoChange => "no_change",
            PurposeLabel::ExploreVariable => "explore_variable",
            PurposeLabel::Fix => "fix",
            PurposeLabel::Debug => "debug",
            PurposeLabel::EditCode => "edit_code",
            PurposeLabel::CleanCode => "clean_code",
            PurposeLabel::VisualizeData => "visualize_data",
            PurposeLabel::ExtendCode => "extend_code",
            PurposeLabel::ImproveReadability => "improve_readability",
            PurposeLabel::Comment => "comment",
            PurposeLabel::Uncomment => "uncomment",
            PurposeLabel::Other(s) => s,
        }
    }

    /// Human-readable name, e.g. "explore variable".
    pub fn display_name(&self) -> String {
        self.as_str().replace('_', " ")
    }

    pub fn is_core(&self) -> bool {
        !matches!(self, PurposeLabel::Other(_))
    }

    /// Labels decided mechanically from the text alone.
    pub fn is_mechanical(&self) -> bool {
        matches!(
            self,
            PurposeLabel::NoChange | PurposeLabel::Comment | PurposeLabel::Uncomment | PurposeLabel::CleanCode
        )
    }

    /// Lenient parse: accepts spaces, hyphens and case variants. Anything not
    /// in the core scheme lands in `Other` in snake_case.
    pub fn parse_lenient(raw: &str) -> Option<PurposeLabel> {
        let cleaned: String = raw
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*' || c == '-' || c == '.')
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        if cleaned.is_empty() || !cleaned.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return None;
        }
        Some(cleaned.parse().expect("infallible"))
    }
}

impl FromStr for PurposeLabel {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(PurposeLabel::CORE
            .iter()
            .find(|l| l.as_str() == s)
            .cloned()
            .unwrap_or_else(|| PurposeLabel::Other(s.to_string())))
    }
}

impl fmt::Display for PurposeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PurposeLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PurposeLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

/// Normalized distance below which an edit after an error counts as a fix.
pub const FIX_DISTANCE: f64 = 0.15;

/// Labels plus notes on cases the rules could not separate.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleOutcome {
    pub labels: BTreeSet<PurposeLabel>,
    pub flags: Vec<String>,
}

pub const FLAG_DEBUG_OR_EDIT: &str = "ambiguous_debug_or_edit";

pub fn rule_purposes(before: &str, after: &str) -> BTreeSet<PurposeLabel> {
    rule_purposes_with_context(before, after, None).labels
}

/// Rule labeler. `previous_output` is the output kind of the before-state;
/// fix and debug are only considered when it is an error.
pub fn rule_purposes_with_context(before: &str, after: &str, previous_output: Option<OutputKind>) -> RuleOutcome {
    let single = |label| RuleOutcome { labels: BTreeSet::from([label]), flags: Vec::new() };
    if before == after {
        return single(PurposeLabel::NoChange);
    }
    let diff = LineDiff::new(before, after);
    if diff.is_comment() {
        return single(PurposeLabel::Comment);
    }
    if diff.is_uncomment() {
        return single(PurposeLabel::Uncomment);
    }
    if diff.added.is_empty() && !diff.removed.is_empty() {
        return single(PurposeLabel::CleanCode);
    }
    if strip_whitespace(before) == strip_whitespace(after) || diff.only_comments_added_or_reworded() {
        return single(PurposeLabel::ImproveReadability);
    }

    let added_code: Vec<&str> = diff.added.iter().copied().filter(|l| !is_comment_line(l)).collect();
    let removed_code: Vec<&str> = diff.removed.iter().copied().filter(|l| !is_comment_line(l)).collect();

    let mut out = RuleOutcome::default();
    if previous_output == Some(OutputKind::Error) {
        if normalized_edit_distance(before, after) < FIX_DISTANCE {
            return single(PurposeLabel::Fix);
        }
        let new_inspection = added_code.iter().any(|l| is_inspection_line(l));
        if new_inspection {
            return single(PurposeLabel::Debug);
        }
        out.flags.push(FLAG_DEBUG_OR_EDIT.to_string());
    }

    let is_plot = |l: &&str| line_calls(l).iter().any(|c| is_plot_chain(c));
    let plot_touched = added_code.iter().chain(&removed_code).any(is_plot);
    let other_added: Vec<&str> = added_code.iter().copied().filter(|l| !is_plot(l)).collect();
    let other_removed: Vec<&str> = removed_code.iter().copied().filter(|l| !is_plot(l)).collect();
    if plot_touched {
        out.labels.insert(PurposeLabel::VisualizeData);
    }
    if !other_added.is_empty() || !other_removed.is_empty() {
        let display_only = other_added.iter().chain(&other_removed).all(|l| is_display_line(l));
        if display_only && !other_added.is_empty() {
            out.labels.insert(PurposeLabel::ExploreVariable);
        } else if other_removed.is_empty() {
            out.labels.insert(PurposeLabel::ExtendCode);
        } else {
            out.labels.insert(PurposeLabel::EditCode);
        }
    }
    if out.labels.is_empty() {
        // only plot-free removals of display lines mixed with comment edits
        out.labels.insert(PurposeLabel::EditCode);
    }
    out
}

fn strip_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn is_comment_line(line: &str) -> bool {
    line.trim_start().starts_with('#')
}

fn uncommented(line: &str) -> &str {
    line.trim_start().trim_start_matches('#').trim()
}

fn line_calls(line: &str) -> Vec<Vec<String>> {
    let tokens = pylex::tokenize(line);
    let refs: Vec<&pylex::Token> = tokens.iter().collect();
    calls(&refs).into_iter().map(|c| c.chain).collect()
}

fn is_plot_chain(chain: &[String]) -> bool {
    const ROOTS: [&str; 5] = ["plt", "sns", "px", "go", "alt"];
    const NAMES: [&str; 12] = [
        "plot", "scatter", "hist", "bar", "boxplot", "heatmap", "pairplot", "countplot", "lineplot",
        "histplot", "imshow", "barplot",
    ];
    chain.first().is_some_and(|r| ROOTS.contains(&r.as_str())) || chain.iter().any(|p| NAMES.contains(&p.as_str()))
}

fn is_display_line(line: &str) -> bool {
    let tokens = pylex::tokenize(line);
    let stmts = pylex::statements(&tokens);
    !stmts.is_empty() && stmts.iter().all(|s| is_display_statement(s))
}

fn is_inspection_line(line: &str) -> bool {
    let tokens = pylex::tokenize(line);
    let stmts = pylex::statements(&tokens);
    !stmts.is_empty()
        && stmts.iter().all(|s| {
            !is_assignment(s)
                && (is_display_statement(s)
                    || s.first().is_some_and(|t| t.is_keyword("assert")))
        })
}

struct LineDiff<'a> {
    removed: Vec<&'a str>,
    added: Vec<&'a str>,
}

impl<'a> LineDiff<'a> {
    // Changed lines, ignoring blank ones.
    fn new(before: &'a str, after: &'a str) -> LineDiff<'a> {
        let old: Vec<&str> = before.lines().collect();
        let new: Vec<&str> = after.lines().collect();
        let mut removed: Vec<&str> = Vec::new();
        let mut added: Vec<&str> = Vec::new();
        for op in capture_diff_slices(Algorithm::Myers, &old, &new) {
            match op {
                DiffOp::Equal { .. } => {}
                DiffOp::Delete { old_index, old_len, .. } => removed.extend_from_slice(&old[old_index..old_index + old_len]),
                DiffOp::Insert { new_index, new_len, .. } => added.extend_from_slice(&new[new_index..new_index + new_len]),
                DiffOp::Replace { old_index, old_len, new_index, new_len } => {
                    removed.extend_from_slice(&old[old_index..old_index + old_len]);
                    added.extend_from_slice(&new[new_index..new_index + new_len]);
                }
            }
        }
        removed.retain(|l| !l.trim().is_empty());
        added.retain(|l| !l.trim().is_empty());
        // a line that only moved or changed indentation is not a content change
        let mut k = 0;
        while k < removed.len() {
            if let Some(p) = added.iter().position(|a| a.trim() == removed[k].trim()) {
                added.remove(p);
                removed.remove(k);
            } else {
                k += 1;
            }
        }
        LineDiff { removed, added }
    }

    /// Every removed code line reappears commented out; anything else added is a comment.
    fn is_comment(&self) -> bool {
        if self.removed.is_empty() || self.added.is_empty() || !self.added.iter().all(|l| is_comment_line(l)) {
            return false;
        }
        if self.removed.iter().any(|l| is_comment_line(l)) {
            return false;
        }
        let mut pool: Vec<&str> = self.added.iter().map(|l| uncommented(l)).collect();
        self.removed.iter().all(|r| match pool.iter().position(|a| *a == r.trim()) {
            Some(p) => {
                pool.remove(p);
                true
            }
            None => false,
        })
    }

    /// Every added code line was there before as a comment.
    fn is_uncomment(&self) -> bool {
        if self.added.is_empty() || self.added.iter().any(|l| is_comment_line(l)) {
            return false;
        }
        let mut pool: Vec<&str> = self.removed.iter().filter(|l| is_comment_line(l)).map(|l| uncommented(l)).collect();
        if pool.len() != self.removed.len() {
            return false;
        }
        self.added.iter().all(|a| match pool.iter().position(|r| *r == a.trim()) {
            Some(p) => {
                pool.remove(p);
                true
            }
            None => false,
        })
    }

    /// Comment lines were added or reworded but no code changed.
    fn only_comments_added_or_reworded(&self) -> bool {
        !self.added.is_empty() && self.added.iter().chain(&self.removed).all(|l| is_comment_line(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PurposeLabel::*;

    fn labels(b: &str, a: &str) -> Vec<PurposeLabel> {
        rule_purposes(b, a).into_iter().collect()
    }

    #[test]
    fn table_examples() {
        assert_eq!(labels("x=1", "x=1"), vec![NoChange]);
        assert_eq!(labels("x=1", "# x=1"), vec![Comment]);
        assert_eq!(labels("# x=1", "x=1"), vec![Uncomment]);
        assert_eq!(labels("df.head()", "df.describe()"), vec![ExploreVariable]);
        assert_eq!(labels("x=1\ny=2", "x=1"), vec![CleanCode]);
        assert_eq!(labels("x=1", "x = 1"), vec![ImproveReadability]);
        assert_eq!(labels("x=1", "x=1\n"), vec![ImproveReadability]);
        assert_eq!(labels("x=1", "x=1\ny=x*2"), vec![ExtendCode]);
        assert_eq!(labels("x=1", "x=2"), vec![EditCode]);
        assert_eq!(labels("x=1", "x=1\nplt.plot(x)"), vec![VisualizeData]);
        assert_eq!(labels("x=1", "x=1\nprint(x)"), vec![ExploreVariable]);
    }

    #[test]
    fn error_context() {
        let o = rule_purposes_with_context("prnt(x)\ny = 2", "print(x)\ny = 2", Some(OutputKind::Error));
        assert_eq!(o.labels, BTreeSet::from([Fix]));
        let o = rule_purposes_with_context(
            "df = load()\nres = compute(df)",
            "df = load()\nprint(df.dtypes)\nres = compute(df)",
            Some(OutputKind::Error),
        );
        assert_eq!(o.labels, BTreeSet::from([Debug]));
        let o = rule_purposes_with_context("a = 1", "b = compute_things(a, 2, 3)", Some(OutputKind::Error));
        assert_eq!(o.flags, vec![FLAG_DEBUG_OR_EDIT.to_string()]);
        assert!(!o.labels.is_empty());
    }

    #[test]
    fn label_parsing() {
        assert_eq!(PurposeLabel::parse_lenient("Explore Variable"), Some(ExploreVariable));
        assert_eq!(PurposeLabel::parse_lenient("remove debugging code"), Some(Other("remove_debugging_code".into())));
        assert_eq!(PurposeLabel::parse_lenient("  "), None);
        let json = serde_json::to_string(&vec![Fix, Other("unknown".into())]).unwrap();
        assert_eq!(json, r#"["fix","unknown"]"#);
        let back: Vec<PurposeLabel> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Fix, Other("unknown".into())]);
    }
}
