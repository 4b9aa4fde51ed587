//! The interpreter's state and reward construction.

use crate::agents::AgentStateVector;
use crate::sensors::SensorState;

use super::EnvError;

/// Floor applied to energy fractions before the geometric mean, so one dead
/// sensor cannot zero the whole mean.
const ENERGY_FRACTION_FLOOR: f64 = 1e-6;
/// Floor applied to error ratios before the geometric mean; a freshly
/// refreshed sensor can have an exactly-zero window error.
const ERROR_RATIO_FLOOR: f64 = 1e-12;
/// Error-ratio entries are capped before entering the network: the
/// information-free cold-start error (process variance over target) would
/// otherwise be orders of magnitude outside the distribution the networks
/// train on.
const ERROR_RATIO_CAP: f64 = 5.0;

/// Accuracy reward: near-target errors score close to one, with the change
/// term steering toward approach-from-below. The overshoot branch is the
/// published form; `penalize_overshoot` negates its quadratic term and
/// scales it by `overshoot_weight`.
pub fn accuracy_reward(
    eps_bar: f64,
    delta_eps: f64,
    error_target: f64,
    upsilon: f64,
    penalize_overshoot: bool,
    overshoot_weight: f64,
) -> f64 {
    if eps_bar <= error_target {
        (eps_bar / error_target).powi(2) + upsilon * delta_eps
    } else {
        let overshoot = ((eps_bar - error_target) / error_target).powi(2);
        let quadratic = if penalize_overshoot {
            -overshoot_weight * overshoot
        } else {
            overshoot
        };
        quadratic - upsilon * delta_eps
    }
}

/// Energy reward: increasing the interval of a sensor with above-average
/// energy is discouraged, decreasing it encouraged, and vice versa below
/// average. No interval change scores zero.
pub fn energy_reward(
    energies: &[f64],
    sensor_idx: usize,
    old_interval_steps: u32,
    new_interval_steps: u32,
) -> Result<f64, EnvError> {
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(EnvError::AllSensorsDead);
    }
    let ratio = energies.len() as f64 * energies[sensor_idx] / total;
    Ok(match new_interval_steps.cmp(&old_interval_steps) {
        std::cmp::Ordering::Greater => 1.0 - ratio,
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => ratio - 1.0,
    })
}

/// Weighted combination of the two rewards. The multiplication by the
/// storage scale factor happens at the replay-memory boundary, not here.
pub fn combined_reward(r_acc: f64, r_en: f64, phi: f64) -> Result<f64, EnvError> {
    if !(0.25..=0.75).contains(&phi) {
        return Err(EnvError::PhiOutOfRange(phi));
    }
    Ok(phi * r_acc + (1.0 - phi) * r_en)
}

/// Builds the six-dimensional state for sensor `n`: its own normalized
/// interval, energy fraction, and error ratio, then the geometric means of
/// the other sensors' values. Energies are floored before the mean.
pub fn build_state(
    sensor_idx: usize,
    sensors: &[SensorState],
    error_ratios: &[f64],
    t_max_steps: u32,
    initial_energy_joules: f64,
) -> Result<AgentStateVector, EnvError> {
    if sensors.len() < 2 {
        return Err(EnvError::SingleSensor);
    }
    debug_assert_eq!(sensors.len(), error_ratios.len());

    let interval_fraction =
        |s: &SensorState| s.update_interval_steps as f64 / t_max_steps as f64;
    let energy_fraction = |s: &SensorState| {
        (s.energy_joules / initial_energy_joules).max(ENERGY_FRACTION_FLOOR)
    };

    let own = &sensors[sensor_idx];
    let mut log_interval = 0.0;
    let mut log_energy = 0.0;
    let mut log_ratio = 0.0;
    let others = (sensors.len() - 1) as f64;
    for (i, s) in sensors.iter().enumerate() {
        if i == sensor_idx {
            continue;
        }
        log_interval += interval_fraction(s).ln();
        log_energy += energy_fraction(s).ln();
        log_ratio += error_ratios[i].clamp(ERROR_RATIO_FLOOR, ERROR_RATIO_CAP).ln();
    }

    Ok(AgentStateVector([
        interval_fraction(own),
        (own.energy_joules / initial_energy_joules).clamp(0.0, 1.0),
        error_ratios[sensor_idx].min(ERROR_RATIO_CAP),
        (log_interval / others).exp(),
        (log_energy / others).exp(),
        (log_ratio / others).exp(),
    ]))
}
