//! Generic CSV ingestion for pre-imputed datasets, and the matching export.
//!
//! The schema names five columns: sensor id, timestamp (seconds), value, and
//! the sensor's x/y coordinates (meters). Rows may arrive unsorted;
//! duplicate (sensor, timestamp) pairs keep the last value seen.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{grid_from_raw, Channel, DataError, DatasetFrame, IngestReport, RawSeries};
use crate::sensors::Position;

/// Column names the ingester looks up in the header row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub sensor_id: String,
    pub timestamp: String,
    pub value: String,
    pub x: String,
    pub y: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            sensor_id: "sensor_id".into(),
            timestamp: "timestamp".into(),
            value: "value".into(),
            x: "x".into(),
            y: "y".into(),
        }
    }
}

pub fn ingest_csv(
    path: &Path,
    schema: &CsvSchema,
    channel: Channel,
    step_seconds: f64,
) -> Result<(DatasetFrame, IngestReport), DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::SchemaMismatch(name.to_string()))
    };
    let id_col = column(&schema.sensor_id)?;
    let ts_col = column(&schema.timestamp)?;
    let value_col = column(&schema.value)?;
    let x_col = column(&schema.x)?;
    let y_col = column(&schema.y)?;

    let mut report = IngestReport::default();
    let mut samples: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    let mut positions: BTreeMap<u32, Position> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let parsed = (|| {
            let id: u32 = record.get(id_col)?.trim().parse().ok()?;
            let t: f64 = record.get(ts_col)?.trim().parse().ok()?;
            let value: f64 = record.get(value_col)?.trim().parse().ok()?;
            let x: f64 = record.get(x_col)?.trim().parse().ok()?;
            let y: f64 = record.get(y_col)?.trim().parse().ok()?;
            (t.is_finite() && value.is_finite()).then_some((id, t, value, x, y))
        })();
        match parsed {
            Some((id, t, value, x, y)) => {
                positions.entry(id).or_insert_with(|| Position::new(x, y));
                samples.entry(id).or_default().push((t, value));
            }
            None => report.skipped_rows += 1,
        }
    }

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

/// Writes a frame in the generic schema, one row per sensor per step.
pub fn write_generic_csv(frame: &DatasetFrame, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["sensor_id", "timestamp", "value", "x", "y"])?;
    for (idx, sensor) in frame.sensors.iter().enumerate() {
        for step in 0..frame.num_steps() {
            writer.write_record(&[
                sensor.id.0.to_string(),
                (step as f64 * frame.step_seconds).to_string(),
                frame.value(idx, step).to_string(),
                sensor.position.x.to_string(),
                sensor.position.y.to_string(),
            ])?;
        }
    }
    writer.flush().map_err(std::io::Error::from)?;
    Ok(())
}
