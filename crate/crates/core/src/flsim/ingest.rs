use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Rows};
use crate::error::{Error, Result};

pub const SESSION_COLUMNS: [&str; 3] = ["start_datetime", "end_datetime", "energy_kwh"];

/// Features: start hour, start weekday (Monday = 0), duration in hours,
/// start month.
pub const SESSION_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub kept: usize,
    pub dropped: usize,
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn session_row(record: &csv::StringRecord) -> Option<([f64; SESSION_FEATURES], f64)> {
    let start = parse_time(record.get(0)?)?;
    let end = parse_time(record.get(1)?)?;
    let energy: f64 = record.get(2)?.trim().parse().ok()?;
    let hours = (end - start).num_milliseconds() as f64 / 3.6e6;
    if !(energy.is_finite() && energy >= 0.0 && hours >= 0.0) {
        return None;
    }
    let features = [
        start.hour() as f64,
        start.weekday().num_days_from_monday() as f64,
        hours,
        start.month() as f64,
    ];
    Some((features, energy))
}

/// Reads charging sessions. Rows that fail to parse, or that end before
/// they start, are dropped and counted. Rows keep file order, so the test
/// split is the latest `test_fraction` of the file.
pub fn read_sessions_csv<R: Read>(reader: R, test_fraction: f64) -> Result<IngestReport> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != SESSION_COLUMNS {
        return Err(Error::Schema(format!(
            "expected header `{}`, found `{}`",
            SESSION_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut rows = Rows::new(SESSION_FEATURES);
    let mut dropped = 0;
    for record in csv.records() {
        match record.ok().as_ref().and_then(session_row) {
            Some((x, y)) => rows.push(&x, y)?,
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let kept = rows.len();
    Ok(IngestReport {
        dataset: Dataset::split(rows, test_fraction)?,
        kept,
        dropped,
    })
}

pub fn ingest_sessions_csv(path: impl AsRef<Path>, test_fraction: f64) -> Result<IngestReport> {
    read_sessions_csv(std::fs::File::open(path)?, test_fraction)
}
