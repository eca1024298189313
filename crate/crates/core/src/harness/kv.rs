//! `key = value` files, one key per line, `#` comments.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct KvError {
    pub line: usize,
    pub msg: String,
}

/// Pairs in file order. `key value` without `=` is accepted too.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k.trim(), v.trim()),
                None => return Err(KvError { line: i + 1, msg: format!("`{line}` has no value") }),
            },
        };
        if k.is_empty() {
            return Err(KvError { line: i + 1, msg: "empty key".into() });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
