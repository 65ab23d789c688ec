//! Strict parsers for semicolon-separated model replies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("malformed response: {0:?}")]
    Malformed(String),
    #[error("malformed response: missing key `{0}`")]
    MissingKey(String),
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("range start {start} is after end {end}")]
    NonMonotonicRange { start: usize, end: usize },
}

fn parse_ints(response: &str) -> Result<Vec<usize>, ParseError> {
    let body = response.trim();
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(';')
        .map(|t| t.trim().parse::<usize>().map_err(|_| ParseError::Malformed(response.to_string())))
        .collect()
}

/// `"s;e"` with `s <= e`.
pub fn parse_range(response: &str) -> Result<(usize, usize), ParseError> {
    let v = parse_ints(response)?;
    if v.len() != 2 {
        return Err(ParseError::WrongLength { expected: 2, got: v.len() });
    }
    if v[0] > v[1] {
        return Err(ParseError::NonMonotonicRange { start: v[0], end: v[1] });
    }
    Ok((v[0], v[1]))
}

/// Possibly empty index list; repeated indices are kept once, in first-seen order.
pub fn parse_index_list(response: &str) -> Result<Vec<usize>, ParseError> {
    let mut out = Vec::new();
    for i in parse_ints(response)? {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    Ok(out)
}

pub fn parse_code_list(response: &str, expected_len: usize) -> Result<Vec<usize>, ParseError> {
    let v = parse_ints(response)?;
    if v.len() != expected_len {
        return Err(ParseError::WrongLength { expected: expected_len, got: v.len() });
    }
    Ok(v)
}
