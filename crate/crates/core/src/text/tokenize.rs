use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerOptions {
    /// Replace a whole run of digits with a single `0` instead of one `0` per digit.
    #[serde(default)]
    pub collapse_digit_runs: bool,
}

pub(crate) fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Tokenizes with the default options (per-character digit replacement).
pub fn tokenize_normalize(raw: &str) -> Vec<String> {
    tokenize_with(raw, TokenizerOptions::default())
}

/// Splits on whitespace, lowercases, maps ASCII digits to `0`, then peels
/// leading and trailing punctuation off each chunk as one-character tokens.
pub fn tokenize_with(raw: &str, opts: TokenizerOptions) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in raw.split_whitespace() {
        let chunk = normalize(chunk, opts);
        let start = chunk.find(|c: char| !is_punct(c)).unwrap_or(chunk.len());
        let end = chunk.rfind(|c: char| !is_punct(c)).map_or(start, |i| {
            i + chunk[i..].chars().next().map_or(1, char::len_utf8)
        });
        tokens.extend(chunk[..start].chars().map(String::from));
        if start < end {
            tokens.push(chunk[start..end].to_string());
        }
        tokens.extend(chunk[end..].chars().map(String::from));
    }
    tokens
}

fn normalize(word: &str, opts: TokenizerOptions) -> String {
    let mut out = String::with_capacity(word.len());
    let mut prev_digit = false;
    for c in word.chars() {
        if c.is_ascii_digit() {
            if !(opts.collapse_digit_runs && prev_digit) {
                out.push('0');
            }
            prev_digit = true;
        } else {
            out.extend(c.to_lowercase());
            prev_digit = false;
        }
    }
    out
}
