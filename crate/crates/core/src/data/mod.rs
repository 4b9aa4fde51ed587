//! Dataset ingestion, train/test splitting, and the synthetic
//! spatio-temporal Gaussian-process generator.
//!
//! Every ingestion path produces the same artifact: a [`DatasetFrame`] whose
//! per-sensor series are resampled onto the simulation step grid by
//! zero-order hold. The frame is the ground truth the simulation replays.

mod csv_file;
mod intel;
mod synthetic;

pub use csv_file::{ingest_csv, write_generic_csv, CsvSchema};
pub use intel::ingest_intel;
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::{Position, SensorId};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no usable sensor series in dataset")]
    EmptyDataset,
    #[error("required column '{0}' missing from header")]
    SchemaMismatch(String),
    #[error("channel {0} is not available in this dataset format")]
    ChannelUnavailable(String),
    #[error("split boundary {boundary} outside usable range 1..{num_steps}")]
    BoundaryOutOfRange { boundary: u64, num_steps: u64 },
    #[error("requested size exceeds the exact-sampling limit: {0}")]
    SizeLimit(String),
    #[error("frame cache is malformed: {0}")]
    CacheFormat(String),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
}

/// Observed quantity a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Temperature,
    Humidity,
    Light,
    AmbientNoise,
    Synthetic,
}

impl Channel {
    fn tag(&self) -> u32 {
        match self {
            Channel::Temperature => 0,
            Channel::Humidity => 1,
            Channel::Light => 2,
            Channel::AmbientNoise => 3,
            Channel::Synthetic => 4,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Channel::Temperature),
            1 => Some(Channel::Humidity),
            2 => Some(Channel::Light),
            3 => Some(Channel::AmbientNoise),
            4 => Some(Channel::Synthetic),
            _ => None,
        }
    }
}

impl FromStr for Channel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "temperature" | "temp" => Ok(Channel::Temperature),
            "humidity" | "hum" => Ok(Channel::Humidity),
            "light" => Ok(Channel::Light),
            "ambient-noise" | "noise" => Ok(Channel::AmbientNoise),
            "synthetic" => Ok(Channel::Synthetic),
            other => Err(DataError::UnknownChannel(other.to_string())),
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Channel::Temperature => "temperature",
            Channel::Humidity => "humidity",
            Channel::Light => "light",
            Channel::AmbientNoise => "ambient-noise",
            Channel::Synthetic => "synthetic",
        };
        f.write_str(name)
    }
}

/// Static description of one sensor series within a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSensor {
    pub id: SensorId,
    pub position: Position,
    /// Update period the original deployment used, in seconds (median gap
    /// between raw samples). Baseline lifetimes are computed from this.
    pub native_period_seconds: f64,
}

/// Per-sensor ground-truth series aligned to the simulation step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub step_seconds: f64,
    pub channel: Channel,
    pub sensors: Vec<FrameSensor>,
    /// `values[sensor][step]`, hold-filled so every step has a value.
    values: Vec<Vec<f64>>,
}

impl DatasetFrame {
    pub fn from_grid(
        step_seconds: f64,
        channel: Channel,
        sensors: Vec<FrameSensor>,
        values: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(sensors.len(), values.len());
        let len = values.first().map_or(0, Vec::len);
        assert!(values.iter().all(|v| v.len() == len), "ragged value grid");
        Self {
            step_seconds,
            channel,
            sensors,
            values,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn num_steps(&self) -> u64 {
        self.values.first().map_or(0, Vec::len) as u64
    }

    /// Ground-truth value of sensor `idx` at `step`.
    pub fn value(&self, idx: usize, step: u64) -> f64 {
        self.values[idx][step as usize]
    }

    pub fn series(&self, idx: usize) -> &[f64] {
        &self.values[idx]
    }

    pub fn positions(&self) -> Vec<Position> {
        self.sensors.iter().map(|s| s.position).collect()
    }

    /// Splits into a train frame covering steps `[0, boundary)` and a test
    /// frame covering `[boundary, end)`, each re-based to step zero.
    pub fn split(&self, boundary: u64) -> Result<(DatasetFrame, DatasetFrame), DataError> {
        let num_steps = self.num_steps();
        if boundary == 0 || boundary >= num_steps {
            return Err(DataError::BoundaryOutOfRange {
                boundary,
                num_steps,
            });
        }
        let b = boundary as usize;
        let train_values = self.values.iter().map(|v| v[..b].to_vec()).collect();
        let test_values = self.values.iter().map(|v| v[b..].to_vec()).collect();
        let train = DatasetFrame::from_grid(
            self.step_seconds,
            self.channel,
            self.sensors.clone(),
            train_values,
        );
        let test = DatasetFrame::from_grid(
            self.step_seconds,
            self.channel,
            self.sensors.clone(),
            test_values,
        );
        Ok((train, test))
    }

    /// Writes the versioned binary frame cache (layout documented in the
    /// README).
    pub fn save_cache(&self, path: &Path) -> Result<(), DataError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(b"CSFRAME1")?;
        file.write_all(&1u32.to_le_bytes())?;
        file.write_all(&self.step_seconds.to_le_bytes())?;
        file.write_all(&self.channel.tag().to_le_bytes())?;
        file.write_all(&(self.sensors.len() as u32).to_le_bytes())?;
        file.write_all(&self.num_steps().to_le_bytes())?;
        for s in &self.sensors {
            file.write_all(&s.id.0.to_le_bytes())?;
            file.write_all(&s.position.x.to_le_bytes())?;
            file.write_all(&s.position.y.to_le_bytes())?;
            file.write_all(&s.native_period_seconds.to_le_bytes())?;
        }
        for series in &self.values {
            for v in series {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_cache(path: &Path) -> Result<Self, DataError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != b"CSFRAME1" {
            return Err(DataError::CacheFormat("bad magic".into()));
        }
        let version = read_u32(&mut file)?;
        if version != 1 {
            return Err(DataError::CacheFormat(format!(
                "unsupported version {version}"
            )));
        }
        let step_seconds = read_f64(&mut file)?;
        let channel = Channel::from_tag(read_u32(&mut file)?)
            .ok_or_else(|| DataError::CacheFormat("bad channel tag".into()))?;
        let n_sensors = read_u32(&mut file)? as usize;
        let num_steps = read_u64(&mut file)? as usize;
        let mut sensors = Vec::with_capacity(n_sensors);
        for _ in 0..n_sensors {
            let id = SensorId(read_u32(&mut file)?);
            let x = read_f64(&mut file)?;
            let y = read_f64(&mut file)?;
            let native = read_f64(&mut file)?;
            sensors.push(FrameSensor {
                id,
                position: Position::new(x, y),
                native_period_seconds: native,
            });
        }
        let mut values = Vec::with_capacity(n_sensors);
        for _ in 0..n_sensors {
            let mut series = Vec::with_capacity(num_steps);
            for _ in 0..num_steps {
                series.push(read_f64(&mut file)?);
            }
            values.push(series);
        }
        Ok(DatasetFrame::from_grid(step_seconds, channel, sensors, values))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DataError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, DataError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Side effects of an ingestion pass worth surfacing to the operator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub skipped_rows: u64,
    pub duplicate_samples: u64,
    /// Sensors dropped because no position was available for them.
    pub dropped_sensors: Vec<u32>,
}

/// Raw samples of one sensor before gridding: `(time_seconds, value)`.
pub(crate) struct RawSeries {
    pub id: u32,
    pub position: Position,
    pub samples: Vec<(f64, f64)>,
}

/// Resamples raw per-sensor series onto the shared step grid by zero-order
/// hold. Steps before a sensor's first sample take its first value.
pub(crate) fn grid_from_raw(
    mut raw: Vec<RawSeries>,
    step_seconds: f64,
    channel: Channel,
    report: &mut IngestReport,
) -> Result<DatasetFrame, DataError> {
    raw.retain(|series| !series.samples.is_empty());
    if raw.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    for series in &mut raw {
        series
            .samples
            .sort_by(|a, b| a.0.total_cmp(&b.0));
        // Duplicate timestamps: last value wins.
        let before = series.samples.len();
        let mut deduped: Vec<(f64, f64)> = Vec::with_capacity(before);
        for &(t, v) in series.samples.iter() {
            if let Some(last) = deduped.last_mut() {
                if last.0 == t {
                    last.1 = v;
                    continue;
                }
            }
            deduped.push((t, v));
        }
        report.duplicate_samples += (before - deduped.len()) as u64;
        series.samples = deduped;
    }
    raw.sort_by_key(|series| series.id);

    let t0 = raw
        .iter()
        .map(|s| s.samples[0].0)
        .fold(f64::INFINITY, f64::min);
    let t_end = raw
        .iter()
        .map(|s| s.samples[s.samples.len() - 1].0)
        .fold(f64::NEG_INFINITY, f64::max);
    // The grid extends past the last sample when the span is not
    // step-divisible, so every raw sample is represented.
    let num_steps = ((t_end - t0) / step_seconds).ceil() as usize + 1;

    let mut sensors = Vec::with_capacity(raw.len());
    let mut values = Vec::with_capacity(raw.len());
    for series in &raw {
        let mut grid = Vec::with_capacity(num_steps);
        let mut cursor = 0usize;
        for step in 0..num_steps {
            let t = t0 + step as f64 * step_seconds;
            while cursor + 1 < series.samples.len() && series.samples[cursor + 1].0 <= t {
                cursor += 1;
            }
            // Hold the latest sample at or before t; backfill with the first
            // sample before any data exists.
            grid.push(series.samples[cursor].1);
        }
        sensors.push(FrameSensor {
            id: SensorId(series.id),
            position: series.position,
            native_period_seconds: native_period(&series.samples, step_seconds),
        });
        values.push(grid);
    }
    Ok(DatasetFrame::from_grid(step_seconds, channel, sensors, values))
}

/// Median gap between consecutive raw samples; falls back to one step for
/// single-sample series.
fn native_period(samples: &[(f64, f64)], step_seconds: f64) -> f64 {
    if samples.len() < 2 {
        return step_seconds;
    }
    let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_frame() -> DatasetFrame {
        DatasetFrame::from_grid(
            10.0,
            Channel::Synthetic,
            vec![
                FrameSensor {
                    id: SensorId(0),
                    position: Position::new(0.0, 0.0),
                    native_period_seconds: 30.0,
                },
                FrameSensor {
                    id: SensorId(1),
                    position: Position::new(5.0, 5.0),
                    native_period_seconds: 30.0,
                },
            ],
            vec![
                (0..100).map(|i| i as f64).collect(),
                (0..100).map(|i| -(i as f64)).collect(),
            ],
        )
    }

    #[test]
    fn split_partitions_steps_disjointly() {
        let frame = toy_frame();
        let (train, test) = frame.split(60).unwrap();
        assert_eq!(train.num_steps(), 60);
        assert_eq!(test.num_steps(), 40);
        assert_eq!(train.value(0, 59), 59.0);
        assert_eq!(test.value(0, 0), 60.0);
        assert_eq!(
            train.num_steps() + test.num_steps(),
            frame.num_steps()
        );
    }

    #[test]
    fn split_rejects_boundary_at_frame_edges() {
        let frame = toy_frame();
        assert!(matches!(
            frame.split(0),
            Err(DataError::BoundaryOutOfRange { .. })
        ));
        assert!(matches!(
            frame.split(100),
            Err(DataError::BoundaryOutOfRange { .. })
        ));
    }

    #[test]
    fn cache_round_trips_exactly() {
        let frame = toy_frame();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.bin");
        frame.save_cache(&path).unwrap();
        let loaded = DatasetFrame::load_cache(&path).unwrap();
        assert_eq!(frame, loaded);
    }

    #[test]
    fn gridding_holds_last_value_and_backfills_before_first_sample() {
        let raw = vec![RawSeries {
            id: 3,
            position: Position::new(1.0, 2.0),
            samples: vec![(25.0, 5.0), (52.0, 7.0)],
        }];
        let mut report = IngestReport::default();
        let frame = grid_from_raw(raw, 10.0, Channel::Temperature, &mut report).unwrap();
        // Grid is anchored at the first sample time and reaches past the
        // last sample.
        assert_eq!(frame.num_steps(), 4);
        assert_eq!(frame.series(0), &[5.0, 5.0, 5.0, 7.0]);
    }

    #[test]
    fn gridding_never_invents_values_outside_observed_range() {
        let raw = vec![RawSeries {
            id: 0,
            position: Position::new(0.0, 0.0),
            samples: vec![(0.0, 1.0), (35.0, 9.0), (61.0, 4.0), (90.0, 6.5)],
        }];
        let mut report = IngestReport::default();
        let frame = grid_from_raw(raw, 10.0, Channel::Temperature, &mut report).unwrap();
        for step in 0..frame.num_steps() {
            let v = frame.value(0, step);
            assert!((1.0..=9.0).contains(&v));
        }
    }

    #[test]
    fn duplicate_timestamps_keep_last_value() {
        let raw = vec![RawSeries {
            id: 0,
            position: Position::new(0.0, 0.0),
            samples: vec![(0.0, 1.0), (10.0, 2.0), (10.0, 3.0)],
        }];
        let mut report = IngestReport::default();
        let frame = grid_from_raw(raw, 10.0, Channel::Temperature, &mut report).unwrap();
        assert_eq!(report.duplicate_samples, 1);
        assert_eq!(frame.value(0, 1), 3.0);
    }
}
