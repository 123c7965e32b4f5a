//! Lexical statement finder used by the mutator backend.
//!
//! Finds `;`-terminated statements inside function bodies that can be
//! removed without breaking compilation: declarations, the first half of
//! an `if ...; else ...;` pair and the `while (...);` tail of a do-loop are
//! never offered.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DECL_KEYWORDS: &[&str] = &[
    "int", "char", "short", "long", "float", "double", "void", "unsigned", "signed", "const",
    "static", "struct", "union", "enum", "bool", "_Bool", "size_t", "ssize_t", "int8_t", "int16_t",
    "int32_t", "int64_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "intptr_t", "uintptr_t",
    "FILE", "register", "volatile", "auto", "typedef", "extern", "inline",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Delim {
    Open,
    Close,
    Semi,
}

/// Byte ranges of deletable statements, in source order.
pub fn deletable_statements(src: &str) -> Vec<Range<usize>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut brace = 0usize;
    let mut paren = 0usize;
    let mut start = 0usize;
    let mut last_delim = Delim::Semi;
    let mut at_line_start = true;
    let mut i = 0usize;

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                at_line_start = true;
                i += 1;
                continue;
            }
            b'#' if at_line_start => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    // line continuations keep the directive going
                    if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'\n') {
                        i += 1;
                    }
                    i += 1;
                }
                if brace == 0 {
                    start = i;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
                continue;
            }
            b'"' | b'\'' => {
                i += 1;
                while i < bytes.len() && bytes[i] != c && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i = (i + 1).min(bytes.len());
                at_line_start = false;
                continue;
            }
            b'(' => paren += 1,
            b')' => paren = paren.saturating_sub(1),
            b'{' if paren == 0 => {
                brace += 1;
                start = i + 1;
                last_delim = Delim::Open;
            }
            b'}' if paren == 0 => {
                brace = brace.saturating_sub(1);
                start = i + 1;
                last_delim = Delim::Close;
            }
            b';' if paren == 0 => {
                if brace > 0 {
                    let span = trim_span(src, start..i + 1);
                    if is_deletable(src, span.clone(), last_delim) {
                        out.push(span);
                    }
                }
                start = i + 1;
                last_delim = Delim::Semi;
            }
            _ => {}
        }
        if !c.is_ascii_whitespace() {
            at_line_start = false;
        }
        i += 1;
    }
    out
}

/// Moves the span start past leading whitespace and comments.
fn trim_span(src: &str, span: Range<usize>) -> Range<usize> {
    let mut start = span.start;
    loop {
        let rest = &src[start..span.end];
        let trimmed = rest.trim_start();
        start += rest.len() - trimmed.len();
        if let Some(after) = trimmed.strip_prefix("//") {
            start += 2 + after.find('\n').map_or(after.len(), |i| i + 1);
        } else if let Some(after) = trimmed.strip_prefix("/*") {
            start += 2 + after.find("*/").map_or(after.len(), |i| i + 2);
        } else {
            return start..span.end;
        }
    }
}

fn first_word(text: &str) -> &str {
    let end = text
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(text.len());
    &text[..end]
}

fn is_deletable(src: &str, span: Range<usize>, preceded_by: Delim) -> bool {
    let text = &src[span.clone()];
    if text == ";" {
        return false;
    }
    let word = first_word(text);
    if DECL_KEYWORDS.contains(&word) {
        return false;
    }
    if word == "while" && preceded_by == Delim::Close {
        return false;
    }
    // `if (c) a; else b;` loses its `if` if the first half goes
    first_word(src[span.end..].trim_start()) != "else"
}

/// Removes one deletable statement chosen deterministically from `seed`.
/// Returns the source unchanged when nothing is deletable.
pub fn delete_one_statement(src: &str, seed: u64) -> String {
    let spans = deletable_statements(src);
    if spans.is_empty() {
        return src.to_string();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = spans[rng.gen_range(0..spans.len())].clone();
    let mut out = String::with_capacity(src.len());
    out.push_str(&src[..pick.start]);
    out.push_str(&src[pick.end..]);
    out
}
