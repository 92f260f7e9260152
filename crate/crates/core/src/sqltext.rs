//! Text helpers shared across stages: SQL normalization for deduplication,
//! lexical tokenization for retrieval and schema filtering, and a quote-aware
//! scan for top-level `ORDER BY`.

use std::collections::BTreeSet;

/// Collapses runs of whitespace to a single space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Segment of SQL text produced by [`split_quoted`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment<'a> {
    Plain(&'a str),
    Quoted(&'a str),
}

/// Splits SQL into plain and quoted segments. Quoted segments include their
/// delimiters (`'`, `"`, `` ` `` or `[ ]`). An unterminated quote runs to the end.
fn split_quoted(sql: &str) -> Vec<Segment<'_>> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let close = match bytes[i] {
            b'\'' => Some(b'\''),
            b'"' => Some(b'"'),
            b'`' => Some(b'`'),
            b'[' => Some(b']'),
            _ => None,
        };
        let Some(close) = close else {
            i += 1;
            continue;
        };
        if start < i {
            out.push(Segment::Plain(&sql[start..i]));
        }
        let open = i;
        i += 1;
        loop {
            if i >= bytes.len() {
                break;
            }
            if bytes[i] == close {
                // doubled quote escapes itself
                if close != b']' && i + 1 < bytes.len() && bytes[i + 1] == close {
                    i += 2;
                    continue;
                }
                i += 1;
                break;
            }
            i += 1;
        }
        out.push(Segment::Quoted(&sql[open..i]));
        start = i;
    }
    if start < bytes.len() {
        out.push(Segment::Plain(&sql[start..]));
    }
    out
}

/// Normalizes SQL text for candidate deduplication: whitespace collapsed,
/// everything outside quoted segments lowercased, trailing semicolons removed.
pub fn normalize_sql(sql: &str) -> String {
    let mut buf = String::with_capacity(sql.len());
    for seg in split_quoted(sql) {
        match seg {
            Segment::Plain(s) => buf.push_str(&s.to_lowercase()),
            Segment::Quoted(s) => buf.push_str(s),
        }
    }
    let mut out = collapse_whitespace(&buf);
    while out.ends_with(';') {
        out.pop();
        let trimmed = out.trim_end().len();
        out.truncate(trimmed);
    }
    out
}

/// Strips trailing semicolons and surrounding whitespace.
pub fn strip_statement(sql: &str) -> &str {
    let mut s = sql.trim();
    while let Some(rest) = s.strip_suffix(';') {
        s = rest.trim_end();
    }
    s
}

/// True when the statement's outermost query has an `ORDER BY` clause, i.e. one
/// that appears outside every parenthesis and quoted segment.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let mut depth = 0i32;
    let mut prev_word = String::new();
    for seg in split_quoted(sql) {
        let Segment::Plain(text) = seg else {
            prev_word.clear();
            continue;
        };
        let mut word = String::new();
        for ch in text.chars().chain(std::iter::once(' ')) {
            if ch.is_alphanumeric() || ch == '_' {
                word.push(ch);
                continue;
            }
            if !word.is_empty() {
                let lw = word.to_lowercase();
                if depth == 0 && prev_word == "order" && lw == "by" {
                    return true;
                }
                prev_word = lw;
                word.clear();
            }
            match ch {
                '(' => {
                    depth += 1;
                    prev_word.clear();
                }
                ')' => {
                    depth -= 1;
                    prev_word.clear();
                }
                c if c.is_whitespace() => {}
                _ => prev_word.clear(),
            }
        }
    }
    false
}

/// Lowercase word tokens: maximal alphanumeric runs. Underscores and
/// punctuation separate tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token set used for question-to-question Jaccard similarity.
pub fn token_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

/// Jaccard similarity of two token sets; two empty sets score 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "do", "does", "for", "from", "has", "have", "how", "in", "is",
    "it", "its", "of", "on", "or", "than", "that", "the", "their", "them", "there", "these", "this", "those", "to",
    "was", "were", "what", "when", "where", "which", "who", "whose", "with", "all", "any", "each", "list", "show",
    "give", "find", "return", "me", "many", "much", "number", "please", "tell",
];

/// Crude suffix-stripping stemmer: enough to match `singers` with `singer`
/// and `countries` with `country`.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    if w.len() > 4 {
        if let Some(base) = w.strip_suffix("ies") {
            return format!("{base}y");
        }
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..w.len() - 1].to_string();
    }
    w
}

/// Content stems of free text, stopwords removed.
pub fn content_stems(text: &str) -> BTreeSet<String> {
    word_tokens(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}
