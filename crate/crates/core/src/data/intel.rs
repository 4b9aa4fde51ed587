//! Ingestion of the Intel Berkeley lab text layout.
//!
//! Readings are whitespace-separated rows:
//! `date time epoch moteid temperature humidity light voltage`.
//! Mote positions come from a separate whitespace-separated file of
//! `moteid x y` rows. Malformed rows are counted and skipped; motes with no
//! known position are dropped.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDateTime;

use super::{grid_from_raw, Channel, DataError, DatasetFrame, IngestReport, RawSeries};
use crate::sensors::Position;

pub fn ingest_intel(
    readings_path: &Path,
    locations_path: &Path,
    channel: Channel,
    step_seconds: f64,
) -> Result<(DatasetFrame, IngestReport), DataError> {
    let value_column = match channel {
        Channel::Temperature => 4,
        Channel::Humidity => 5,
        Channel::Light => 6,
        other => return Err(DataError::ChannelUnavailable(other.to_string())),
    };

    let positions = read_locations(locations_path)?;
    let mut report = IngestReport::default();
    let mut samples: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    let mut missing_location: BTreeMap<u32, ()> = BTreeMap::new();

    let reader = BufReader::new(std::fs::File::open(readings_path)?);
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_reading(trimmed, value_column) {
            Some((mote, t, value)) => {
                if positions.contains_key(&mote) {
                    samples.entry(mote).or_default().push((t, value));
                } else {
                    missing_location.insert(mote, ());
                }
            }
            None => report.skipped_rows += 1,
        }
    }
    report.dropped_sensors = missing_location.into_keys().collect();

    let raw: Vec<RawSeries> = samples
        .into_iter()
        .map(|(id, samples)| RawSeries {
            id,
            position: positions[&id],
            samples,
        })
        .collect();
    let frame = grid_from_raw(raw, step_seconds, channel, &mut report)?;
    Ok((frame, report))
}

/// One reading row: mote id, timestamp in seconds, and the channel value.
/// Returns None for any malformed row.
fn parse_reading(line: &str, value_column: usize) -> Option<(u32, f64, f64)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < value_column + 1 {
        return None;
    }
    let timestamp = parse_timestamp(fields[0], fields[1])?;
    let mote: u32 = fields[3].parse().ok()?;
    let value: f64 = fields[value_column].parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    Some((mote, timestamp, value))
}

fn parse_timestamp(date: &str, time: &str) -> Option<f64> {
    let combined = format!("{date} {time}");
    let parsed = NaiveDateTime::parse_from_str(&combined, "%Y-%m-%d %H:%M:%S%.f").ok()?;
    Some(parsed.and_utc().timestamp_micros() as f64 / 1e6)
}

fn read_locations(path: &Path) -> Result<BTreeMap<u32, Position>, DataError> {
    let mut positions = BTreeMap::new();
    let reader = BufReader::new(std::fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            continue;
        }
        let (Ok(id), Ok(x), Ok(y)) = (
            fields[0].parse::<u32>(),
            fields[1].parse::<f64>(),
            fields[2].parse::<f64>(),
        ) else {
            continue;
        };
        positions.insert(id, Position::new(x, y));
    }
    Ok(positions)
}
