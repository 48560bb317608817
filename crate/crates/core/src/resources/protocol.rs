use thiserror::Error;

/// Prefix of the result line a job prints on stdout.
pub const RESULT_PREFIX: &str = "#AUP_RESULT:";

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("no result line found in job output")]
    NoResult,
    #[error("score must be finite, got {0}")]
    NonFinite(f64),
    #[error("aux string must not contain a line break")]
    MultilineAux,
}

fn parse_prefixed(line: &str) -> Option<(f64, Option<String>)> {
    let rest = line.trim_end_matches(['\r', '\n']).strip_prefix(RESULT_PREFIX)?;
    let (num, aux) = match rest.split_once(',') {
        Some((n, a)) => (n, Some(a.to_string())),
        None => (rest, None),
    };
    num.trim().parse::<f64>().ok().map(|s| (s, aux))
}

/// Extracts `(score, aux)` from a job's stdout.
///
/// The last `#AUP_RESULT:<float>[,<aux>]` line wins; without one, the last
/// line that is just a float is used. Everything after the first comma is the
/// aux string, verbatim.
pub fn parse_result_line(stdout: &str) -> Result<(f64, Option<String>), ProtocolError> {
    if let Some(hit) = stdout.lines().rev().find_map(parse_prefixed) {
        return Ok(hit);
    }
    stdout
        .lines()
        .rev()
        .find_map(|l| l.trim().parse::<f64>().ok())
        .map(|s| (s, None))
        .ok_or(ProtocolError::NoResult)
}

/// The line `parse_result_line` expects, without a trailing newline.
pub fn format_result_line(score: f64, aux: Option<&str>) -> Result<String, ProtocolError> {
    if !score.is_finite() {
        return Err(ProtocolError::NonFinite(score));
    }
    match aux {
        Some(a) if a.contains(['\n', '\r']) => Err(ProtocolError::MultilineAux),
        Some(a) => Ok(format!("{RESULT_PREFIX}{score},{a}")),
        None => Ok(format!("{RESULT_PREFIX}{score}")),
    }
}
