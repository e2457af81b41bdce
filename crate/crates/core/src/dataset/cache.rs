//! Transition cache: a version header line followed by one JSON transition per line.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Transition;

pub const CACHE_HEADER: &str = "# trajcql-transitions v1";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("missing or unsupported header (expected `{CACHE_HEADER}`)")]
    BadHeader,
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_transition_cache(text: &str) -> Result<Vec<Transition>, CacheError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CACHE_HEADER => {}
        _ => return Err(CacheError::BadHeader),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(raw).map_err(|source| CacheError::Record { line, source })?;
        if !(1..=9).contains(&t.action) || t.horizon == 0 || t.step >= t.horizon || t.done != (t.step + 1 == t.horizon) {
            return Err(CacheError::Invalid {
                line,
                message: "inconsistent action, step or done flag".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn encode_transition_cache(transitions: &[Transition]) -> String {
    let mut text = String::from(CACHE_HEADER);
    text.push('\n');
    for t in transitions {
        // Transition holds only plain numbers and strings, so this cannot fail.
        text.push_str(&serde_json::to_string(t).expect("transition serialises"));
        text.push('\n');
    }
    text
}

pub fn read_transition_cache(path: &Path) -> Result<Vec<Transition>, CacheError> {
    parse_transition_cache(&fs::read_to_string(path)?)
}

pub fn write_transition_cache(path: &Path, transitions: &[Transition]) -> Result<(), CacheError> {
    fs::write(path, encode_transition_cache(transitions))?;
    Ok(())
}
