//! Core domain types for sensors, simulation time, age of information, and
//! battery/lifetime accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("clock step {now} is earlier than last transmission step {last_tx}")]
    ClockBeforeLastTx { now: u64, last_tx: u64 },
    #[error("update interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("sensor list is empty")]
    EmptySensorList,
}

/// Identifier of a sensor within a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensorId(pub u32);

impl std::fmt::Display for SensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A 2-D deployment coordinate in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Discrete simulation clock: absolute time is `step_index * step_seconds`.
///
/// `step_seconds` is fixed for the lifetime of a run; the step index alone
/// advances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub step_index: u64,
    pub step_seconds: f64,
}

impl SimClock {
    pub fn new(step_seconds: f64) -> Self {
        assert!(step_seconds > 0.0, "step duration must be positive");
        Self {
            step_index: 0,
            step_seconds,
        }
    }

    pub fn at_step(step_index: u64, step_seconds: f64) -> Self {
        Self {
            step_index,
            step_seconds,
        }
    }

    pub fn seconds(&self) -> f64 {
        self.step_index as f64 * self.step_seconds
    }

    pub fn advance(&mut self) {
        self.step_index += 1;
    }
}

/// The gateway's view of one sensor: identity, placement, remaining battery,
/// the commanded update interval, and the latest received observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub id: SensorId,
    pub position: Position,
    /// Remaining battery energy, floored at zero once depleted.
    pub energy_joules: f64,
    /// Commanded sleep time between consecutive updates, in whole steps.
    pub update_interval_steps: u32,
    /// Step index at which the latest observation was received.
    pub last_tx_step: u64,
    /// Latest received observation, in normalized units.
    pub last_value: f64,
    /// Whether any observation has been received from this sensor yet.
    pub has_transmitted: bool,
}

impl SensorState {
    pub fn new(id: SensorId, position: Position, energy_joules: f64) -> Self {
        Self {
            id,
            position,
            energy_joules,
            update_interval_steps: 1,
            last_tx_step: 0,
            last_value: 0.0,
            has_transmitted: false,
        }
    }

    /// A sensor with no remaining energy stops transmitting.
    pub fn is_dead(&self) -> bool {
        self.energy_joules <= 0.0
    }
}

/// Battery and consumption parameters shared by all sensors in a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Starting battery energy E_0, joules.
    pub initial_energy_joules: f64,
    /// Continuous power draw P_c independent of transmissions, watts.
    pub continuous_power_watts: f64,
    /// Energy to acquire and transmit one observation E_tr, joules.
    pub tx_energy_joules: f64,
}

impl EnergyParams {
    pub fn new(
        initial_energy_joules: f64,
        continuous_power_watts: f64,
        tx_energy_joules: f64,
    ) -> Self {
        assert!(
            initial_energy_joules > 0.0 && continuous_power_watts > 0.0 && tx_energy_joules > 0.0,
            "energy parameters must be strictly positive"
        );
        Self {
            initial_energy_joules,
            continuous_power_watts,
            tx_energy_joules,
        }
    }
}

/// Steps elapsed since the latest observation was received from `sensor`.
///
/// Drops to zero at the step of a transmission.
pub fn age_of_information(sensor: &SensorState, now: &SimClock) -> Result<u64, SensorError> {
    if now.step_index < sensor.last_tx_step {
        return Err(SensorError::ClockBeforeLastTx {
            now: now.step_index,
            last_tx: sensor.last_tx_step,
        });
    }
    Ok(now.step_index - sensor.last_tx_step)
}

/// Expected sensor lifetime in seconds for a given update interval:
/// `E_0 / (P_c + E_tr / T)`.
pub fn expected_lifetime_seconds(
    params: &EnergyParams,
    interval_seconds: f64,
) -> Result<f64, SensorError> {
    if interval_seconds <= 0.0 {
        return Err(SensorError::NonPositiveInterval(interval_seconds));
    }
    Ok(params.initial_energy_joules
        / (params.continuous_power_watts + params.tx_energy_joules / interval_seconds))
}

/// Drains `P_c * elapsed * t_S` of continuous consumption plus `E_tr` per
/// transmission, flooring the battery at zero.
pub fn apply_energy_drain(
    sensor: &SensorState,
    params: &EnergyParams,
    elapsed_steps: u64,
    transmissions: u64,
    step_seconds: f64,
) -> SensorState {
    let drain = params.continuous_power_watts * elapsed_steps as f64 * step_seconds
        + params.tx_energy_joules * transmissions as f64;
    let mut out = sensor.clone();
    out.energy_joules = (sensor.energy_joules - drain).max(0.0);
    out
}

/// Network lifetime: the expected lifetime of the shortest-lived sensor,
/// evaluating each sensor at its current update interval.
pub fn network_lifetime(
    sensors: &[SensorState],
    params: &EnergyParams,
    step_seconds: f64,
) -> Result<f64, SensorError> {
    let intervals: Vec<f64> = sensors
        .iter()
        .map(|s| s.update_interval_steps as f64 * step_seconds)
        .collect();
    network_lifetime_from_intervals(&intervals, params)
}

/// Network lifetime from explicit per-sensor intervals (seconds); used by the
/// evaluation harness with empirical mean intervals.
pub fn network_lifetime_from_intervals(
    intervals_seconds: &[f64],
    params: &EnergyParams,
) -> Result<f64, SensorError> {
    if intervals_seconds.is_empty() {
        return Err(SensorError::EmptySensorList);
    }
    let mut min_lifetime = f64::INFINITY;
    for &interval in intervals_seconds {
        let lifetime = expected_lifetime_seconds(params, interval)?;
        min_lifetime = min_lifetime.min(lifetime);
    }
    Ok(min_lifetime)
}
