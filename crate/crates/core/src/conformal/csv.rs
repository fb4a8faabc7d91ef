//! Score files.
//!
//! Either one score per line with an optional `score` header, or a two
//! column `agent,score` file (header required) holding every agent.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{FedcalError, Result};
use crate::order_stats::{ScoreMatrix, ScoreSample};

fn parse_err(line: usize, message: impl Into<String>) -> FedcalError {
    FedcalError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_score(line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("`{}` is not a number", field.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("score `{}` is not finite", field.trim())));
    }
    Ok(v)
}

/// One score per line; blank lines are skipped.
pub fn read_scores_csv<R: Read>(input: R) -> Result<ScoreSample> {
    let mut values = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if i == 0 && text.eq_ignore_ascii_case("score") {
            continue;
        }
        if text.contains(',') {
            return Err(parse_err(i + 1, "expected a single score per line"));
        }
        values.push(parse_score(i + 1, text)?);
    }
    ScoreSample::new(values)
}

/// `agent,score` rows; agents are ordered by id.
pub fn read_agent_scores_csv<R: Read>(input: R) -> Result<ScoreMatrix> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let (agent_col, score_col) = match lines.next() {
        Some((_, header)) => {
            let header = header?;
            let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
            let a = cols.iter().position(|c| c == "agent");
            let s = cols.iter().position(|c| c == "score");
            match (a, s, cols.len()) {
                (Some(a), Some(s), 2) => (a, s),
                _ => return Err(parse_err(1, format!("expected header `agent,score`, found `{header}`"))),
            }
        }
        None => return Err(parse_err(1, "empty file")),
    };
    let mut agents: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(i + 1, format!("expected 2 fields, found {}", fields.len())));
        }
        let id: u64 = fields[agent_col]
            .trim()
            .parse()
            .map_err(|_| parse_err(i + 1, format!("agent id `{}` is not an integer", fields[agent_col].trim())))?;
        agents.entry(id).or_default().push(parse_score(i + 1, fields[score_col])?);
    }
    ScoreMatrix::from_rows(agents.into_values().collect())
}

/// Read a score file, choosing the format from its first line.
pub fn read_scores_path(path: &Path) -> Result<ScoreMatrix> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("").to_ascii_lowercase();
    if first.contains("agent") {
        read_agent_scores_csv(text.as_bytes())
    } else {
        ScoreMatrix::new(vec![read_scores_csv(text.as_bytes())?])
    }
}
