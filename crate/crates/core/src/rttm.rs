//! RTTM reading and writing.
//!
//! Standard 10-field lines:
//! `SPEAKER <file> 1 <onset> <dur> <NA> <NA> <speaker> <NA> <NA>`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One speaker turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub onset: f64,
    pub offset: f64,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, onset: f64, offset: f64) -> Result<Self> {
        let speaker = speaker.into();
        if speaker.is_empty() {
            return Err(Error::invalid_input("empty speaker id"));
        }
        if !(onset.is_finite() && offset.is_finite()) || offset <= onset {
            return Err(Error::invalid_input(format!(
                "turn [{onset}, {offset}] must satisfy onset < offset"
            )));
        }
        Ok(Self { speaker, onset, offset })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Speaker turns of one session. Turns may overlap (reference annotations
/// of conversational speech routinely do).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub turns: Vec<Turn>,
}

impl Annotation {
    pub fn new(mut turns: Vec<Turn>) -> Self {
        turns.sort_by(|a, b| {
            a.onset
                .partial_cmp(&b.onset)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.speaker.cmp(&b.speaker))
        });
        Self { turns }
    }

    /// Distinct speaker ids in first-appearance order.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.turns {
            if !out.contains(&t.speaker.as_str()) {
                out.push(&t.speaker);
            }
        }
        out
    }

    /// Total speech time counting overlapped speech once per speaker.
    pub fn total_speech(&self) -> f64 {
        self.turns.iter().map(Turn::duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Parses an RTTM file into per-session annotations, keyed by file id.
pub fn read_rttm(path: &Path) -> Result<BTreeMap<String, Annotation>> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut sessions: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 || fields[0] != "SPEAKER" {
            return Err(Error::format(
                &display,
                format!("line {}: expected 10-field SPEAKER record", lineno + 1),
            ));
        }
        let onset: f64 = fields[3].parse().map_err(|_| {
            Error::format(&display, format!("line {}: bad onset", lineno + 1))
        })?;
        let dur: f64 = fields[4].parse().map_err(|_| {
            Error::format(&display, format!("line {}: bad duration", lineno + 1))
        })?;
        if dur <= 0.0 {
            continue; // degenerate rows are silently dropped, like dscore
        }
        let turn = Turn::new(fields[7], onset, onset + dur)?;
        sessions.entry(fields[1].to_string()).or_default().push(turn);
    }
    Ok(sessions
        .into_iter()
        .map(|(k, v)| (k, Annotation::new(v)))
        .collect())
}

/// Serializes one session's turns as RTTM lines (3 decimal places).
pub fn format_rttm(session: &str, annotation: &Annotation) -> String {
    let mut out = String::new();
    for t in &annotation.turns {
        writeln!(
            out,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            session,
            t.onset,
            t.duration(),
            t.speaker
        )
        .expect("string write");
    }
    out
}

pub fn write_rttm(path: &Path, session: &str, annotation: &Annotation) -> Result<()> {
    std::fs::write(path, format_rttm(session, annotation))?;
    Ok(())
}
