//! Lexical tokenizer for Python cell sources.
//!
//! No grammar: the lexer only separates names, keywords, literals, comments
//! and operators, and groups tokens into logical statements. Anything it does
//! not understand becomes an `Op` token, so arbitrary text always tokenizes.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Name,
    Keyword,
    Number,
    /// String literal; `text` holds the full literal including quotes and prefix.
    Str,
    Comment,
    Op,
    /// IPython line magic or shell escape (`%matplotlib inline`, `!pip install x`).
    Magic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 0-based physical line where the token starts.
    pub line: usize,
    /// 0-based physical line where the token ends (differs for multi-line strings).
    pub end_line: usize,
    /// Bracket nesting depth at the token.
    pub depth: u32,
}

impl Token {
    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Op && self.text == op
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == kw
    }

    pub fn is_name(&self) -> bool {
        self.kind == TokenKind::Name
    }
}

pub const KEYWORDS: [&str; 35] = [
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in",
    "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with",
    "yield",
];

const THREE_CHAR_OPS: [&str; 6] = ["**=", "//=", ">>=", "<<=", "...", "!=="];
const TWO_CHAR_OPS: [&str; 20] = [
    "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "**", "//", "->",
    ":=", "<<", ">>", "<>",
];

pub const AUGMENTED_ASSIGN: [&str; 13] = [
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "**=", "//=", ">>=", "<<=",
];

/// Tokenize a cell source.
pub fn tokenize(source: &str) -> Vec<Token> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 0usize;
    let mut depth = 0u32;
    let mut at_line_start = true;

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            at_line_start = true;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start_line = line;
        if at_line_start && depth == 0 && (c == '%' || c == '!') {
            let end = chars[i..].iter().position(|&ch| ch == '\n').map_or(chars.len(), |p| i + p);
            tokens.push(Token {
                kind: TokenKind::Magic,
                text: chars[i..end].iter().collect(),
                line,
                end_line: line,
                depth,
            });
            i = end;
            continue;
        }
        at_line_start = false;

        if c == '#' {
            let end = chars[i..].iter().position(|&ch| ch == '\n').map_or(chars.len(), |p| i + p);
            tokens.push(Token {
                kind: TokenKind::Comment,
                text: chars[i..end].iter().collect(),
                line,
                end_line: line,
                depth,
            });
            i = end;
            continue;
        }
        if c == '\\' && chars.get(i + 1) == Some(&'\n') {
            // explicit line continuation
            i += 2;
            line += 1;
            continue;
        }

        // string literal, possibly prefixed
        let prefix_len = string_prefix_len(&chars[i..]);
        if let Some(&q) = chars.get(i + prefix_len) {
            if (q == '"' || q == '\'') && (prefix_len > 0 || c == q) {
                let (end, newlines) = scan_string(&chars, i + prefix_len);
                tokens.push(Token {
                    kind: TokenKind::Str,
                    text: chars[i..end].iter().collect(),
                    line: start_line,
                    end_line: start_line + newlines,
                    depth,
                });
                line += newlines;
                i = end;
                continue;
            }
        }

        if c.is_alphabetic() || c == '_' {
            let end = chars[i..]
                .iter()
                .position(|&ch| !(ch.is_alphanumeric() || ch == '_'))
                .map_or(chars.len(), |p| i + p);
            let text: String = chars[i..end].iter().collect();
            let kind = if KEYWORDS.contains(&text.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Name
            };
            tokens.push(Token { kind, text, line, end_line: line, depth });
            i = end;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut end = i + 1;
            while end < chars.len() {
                let ch = chars[end];
                let exponent_sign = (ch == '+' || ch == '-') && matches!(chars[end - 1], 'e' | 'E');
                if ch.is_alphanumeric() || ch == '.' || ch == '_' || exponent_sign {
                    end += 1;
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                text: chars[i..end].iter().collect(),
                line,
                end_line: line,
                depth,
            });
            i = end;
            continue;
        }

        let rest: String = chars[i..(i + 3).min(chars.len())].iter().collect();
        let op_len = if THREE_CHAR_OPS.iter().any(|op| rest.starts_with(op)) {
            3
        } else if TWO_CHAR_OPS.iter().any(|op| rest.starts_with(op)) {
            2
        } else {
            1
        };
        let text: String = chars[i..i + op_len].iter().collect();
        let token_depth = match text.as_str() {
            "(" | "[" | "{" => {
                depth += 1;
                depth - 1
            }
            ")" | "]" | "}" => {
                depth = depth.saturating_sub(1);
                depth
            }
            _ => depth,
        };
        tokens.push(Token {
            kind: TokenKind::Op,
            text,
            line,
            end_line: line,
            depth: token_depth,
        });
        i += op_len;
    }
    tokens
}

fn string_prefix_len(chars: &[char]) -> usize {
    let mut n = 0;
    while n < 2 && n < chars.len() && matches!(chars[n].to_ascii_lowercase(), 'r' | 'b' | 'f' | 'u') {
        n += 1;
    }
    n
}

// Returns (index past the literal, newlines inside it). Unterminated
// single-quoted strings end at the line break.
fn scan_string(chars: &[char], open: usize) -> (usize, usize) {
    let q = chars[open];
    let triple = chars.get(open + 1) == Some(&q) && chars.get(open + 2) == Some(&q);
    let mut i = if triple { open + 3 } else { open + 1 };
    let mut newlines = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            if chars.get(i + 1) == Some(&'\n') {
                newlines += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                return (i, newlines);
            }
            newlines += 1;
        }
        if c == q {
            if !triple {
                return (i + 1, newlines);
            }
            if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return (i + 3, newlines);
            }
        }
        i += 1;
    }
    (chars.len().min(i), newlines)
}

/// Group tokens into logical statements. Comments and magics are dropped;
/// `;` at depth 0 and line breaks outside brackets end a statement.
pub fn statements(tokens: &[Token]) -> Vec<Vec<&Token>> {
    let mut out: Vec<Vec<&Token>> = Vec::new();
    let mut current: Vec<&Token> = Vec::new();
    let mut last_line: Option<usize> = None;
    for t in tokens {
        if matches!(t.kind, TokenKind::Comment | TokenKind::Magic) {
            continue;
        }
        let new_line = last_line.is_some_and(|l| t.line > l) && t.depth == 0 && !current.last().is_some_and(|p| p.depth > 0 || p.is_op("(") || p.is_op("[") || p.is_op("{"));
        if new_line && !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        if t.is_op(";") && t.depth == 0 {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push(t);
        }
        last_line = Some(t.end_line);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

const COMPOUND_HEADERS: [&str; 10] = ["if", "elif", "else", "while", "for", "with", "try", "except", "finally", "def"];

/// Split `if x: y = 1` style one-liners into header and body; the body
/// (if any) is returned as its own statement.
pub fn split_compound<'a>(stmt: &[&'a Token]) -> (Vec<&'a Token>, Option<Vec<&'a Token>>) {
    let starts_compound = stmt.iter().find(|t| !t.is_keyword("async")).is_some_and(|t| {
        t.kind == TokenKind::Keyword && (COMPOUND_HEADERS.contains(&t.text.as_str()) || t.text == "class")
    });
    if !starts_compound {
        return (stmt.to_vec(), None);
    }
    let mut lambda_open = 0;
    for (i, t) in stmt.iter().enumerate() {
        if t.is_keyword("lambda") && t.depth == 0 {
            lambda_open += 1;
        }
        if t.is_op(":") && t.depth == 0 {
            if lambda_open > 0 {
                lambda_open -= 1;
                continue;
            }
            let body: Vec<&Token> = stmt[i + 1..].to_vec();
            return (stmt[..i].to_vec(), (!body.is_empty()).then_some(body));
        }
    }
    (stmt.to_vec(), None)
}

/// Number of name bindings in a source: assignment targets, def/class names,
/// import bindings and loop targets.
pub fn count_bindings(source: &str) -> usize {
    let tokens = tokenize(source);
    let mut total = 0;
    for stmt in statements(&tokens) {
        let mut pending = Some(stmt);
        while let Some(s) = pending.take() {
            let (head, body) = split_compound(&s);
            total += bindings_in_statement(&head);
            pending = body;
        }
    }
    total
}

fn bindings_in_statement(stmt: &[&Token]) -> usize {
    let stmt: Vec<&Token> = stmt.iter().copied().skip_while(|t| t.is_keyword("async")).collect();
    let Some(first) = stmt.first() else { return 0 };
    if first.kind == TokenKind::Keyword {
        return match first.text.as_str() {
            "def" | "class" => usize::from(stmt.get(1).is_some_and(|t| t.is_name())),
            "import" => import_bindings(&stmt[1..]),
            "from" => stmt
                .iter()
                .position(|t| t.is_keyword("import"))
                .map_or(0, |p| import_bindings(&stmt[p + 1..])),
            "for" => {
                let end = stmt.iter().position(|t| t.is_keyword("in") && t.depth == 0).unwrap_or(stmt.len());
                target_names(&stmt[1..end])
            }
            _ => 0,
        };
    }
    // assignment: every segment before the last top-level `=` is a target
    let eq_positions: Vec<usize> = stmt
        .iter()
        .enumerate()
        .filter(|(_, t)| t.depth == 0 && (t.is_op("=") || AUGMENTED_ASSIGN.contains(&t.text.as_str()) && t.kind == TokenKind::Op))
        .map(|(i, _)| i)
        .collect();
    let mut count = 0;
    let mut start = 0;
    for &eq in &eq_positions {
        let mut target = &stmt[start..eq];
        // annotated assignment `x: int = 1`
        if let Some(colon) = target.iter().position(|t| t.is_op(":") && t.depth == 0) {
            target = &target[..colon];
        }
        count += target_names(target);
        start = eq + 1;
    }
    if eq_positions.is_empty() {
        // bare annotation `x: int`
        if stmt.len() >= 3 && stmt[0].is_name() && stmt[1].is_op(":") {
            return 1;
        }
    }
    count
}

// Simple names bound by a target list: skips attribute and subscript targets.
fn target_names(target: &[&Token]) -> usize {
    let mut count = 0;
    for (i, t) in target.iter().enumerate() {
        if !t.is_name() {
            continue;
        }
        let after_dot = i > 0 && target[i - 1].is_op(".");
        let before_access = target.get(i + 1).is_some_and(|n| n.is_op(".") || n.is_op("[") || n.is_op("("));
        let base_depth = target.first().map_or(0, |f| f.depth);
        let nested_in_subscript = t.depth > base_depth
            && target[..i].iter().rev().find(|p| p.depth < t.depth).is_some_and(|p| p.is_op("["));
        if !after_dot && !before_access && !nested_in_subscript {
            count += 1;
        }
    }
    count
}

fn import_bindings(names: &[&Token]) -> usize {
    // `a.b.c as d, e` -> two bindings; `*` binds nothing we can count
    let mut count = 0;
    let mut item_has_name = false;
    for t in names {
        if t.is_op(",") {
            count += usize::from(item_has_name);
            item_has_name = false;
        } else if t.is_name() {
            item_has_name = true;
        }
    }
    count + usize::from(item_has_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src).into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn basic_tokens() {
        use TokenKind::*;
        assert_eq!(
            kinds("x = f(1.5e-3, 'a#b') # note"),
            vec![
                (Name, "x".into()),
                (Op, "=".into()),
                (Name, "f".into()),
                (Op, "(".into()),
                (Number, "1.5e-3".into()),
                (Op, ",".into()),
                (Str, "'a#b'".into()),
                (Op, ")".into()),
                (Comment, "# note".into()),
            ]
        );
    }

    #[test]
    fn prefixed_and_triple_strings() {
        let toks = tokenize("s = f\"\"\"a\nb\"\"\"\nt = rb'x'");
        let strs: Vec<_> = toks.iter().filter(|t| t.kind == TokenKind::Str).collect();
        assert_eq!(strs.len(), 2);
        assert_eq!(strs[0].line, 0);
        assert_eq!(strs[0].end_line, 1);
        assert_eq!(strs[1].text, "rb'x'");
        assert_eq!(statements(&toks).len(), 2);
    }

    #[test]
    fn magics_and_unterminated_strings() {
        let toks = tokenize("%matplotlib inline\nx = 'oops\ny = 2");
        assert_eq!(toks[0].kind, TokenKind::Magic);
        assert_eq!(statements(&toks).len(), 2);
    }

    #[test]
    fn bracketed_statements_span_lines() {
        let toks = tokenize("df = pd.DataFrame({\n  'a': [1, 2],\n})\nprint(df)");
        assert_eq!(statements(&toks).len(), 2);
    }

    #[test]
    fn binding_counts() {
        let cases = [
            ("x=1", 1),
            ("x = 1\ny = x", 2),
            ("a, b = 1, 2", 2),
            ("a = b = 3", 2),
            ("x += 1", 1),
            ("x: int = 3", 1),
            ("df['col'] = 1", 0),
            ("self.x = 1", 0),
            ("def f(a, b=2):\n    return a", 1),
            ("class A:\n    z = 1", 2),
            ("import os, sys", 2),
            ("import numpy as np", 1),
            ("from sklearn.model_selection import train_test_split, KFold as K", 2),
            ("from x import (a,\n b)", 2),
            ("for i, (j, k) in enumerate(z):\n    pass", 3),
            ("if x == 1: y = 2", 1),
            ("print(x == 1)", 0),
            ("f(a=1)", 0),
            ("while n:\n    n = n - 1", 1),
            ("", 0),
        ];
        for (src, want) in cases {
            assert_eq!(count_bindings(src), want, "{src:?}");
        }
    }
}
