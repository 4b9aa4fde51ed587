//! Non-learning schedulers: the dataset-native fixed-interval baseline and
//! the ideal ground-truth oracle.

use crate::covariance::CovarianceModel;
use crate::estimator::mse_at_locations;
use crate::sensors::{Position, SensorState, SimClock};

/// Every sensor transmits at its dataset-native fixed period (rounded to the
/// nearest whole step); start offsets are preserved.
#[derive(Debug, Clone)]
pub struct FixedSchedule {
    intervals_steps: Vec<u32>,
}

impl FixedSchedule {
    pub fn from_native_periods(periods_seconds: &[f64], step_seconds: f64) -> Self {
        let intervals_steps = periods_seconds
            .iter()
            .map(|&p| (p / step_seconds).round().max(1.0) as u32)
            .collect();
        Self { intervals_steps }
    }

    pub fn interval_steps(&self, sensor_idx: usize) -> u32 {
        self.intervals_steps[sensor_idx]
    }
}

/// Selects the sensors the oracle orders to transmit this step: while any
/// sensor location's analytic error exceeds the target, the worst violating
/// location's own sensor transmits (delivering `truth[idx]`), and the errors
/// are re-evaluated. Dead sensors cannot transmit and their locations cannot
/// be repaired.
///
/// Pure with respect to the caller's state: the scratch copy simulates the
/// transmissions; the returned indices are in trigger order.
pub fn ideal_transmission_set(
    sensors: &[SensorState],
    truth: &[f64],
    now: &SimClock,
    model: &CovarianceModel,
    error_target: f64,
) -> Vec<usize> {
    let mut scratch: Vec<SensorState> = sensors.to_vec();
    let locations: Vec<Position> = scratch.iter().map(|s| s.position).collect();
    let mut transmitted = Vec::new();

    loop {
        let observed: Vec<SensorState> = scratch
            .iter()
            .filter(|s| s.has_transmitted)
            .cloned()
            .collect();
        let mses = if observed.is_empty() {
            vec![model.process_variance; locations.len()]
        } else {
            match mse_at_locations(&observed, &locations, now, model) {
                Ok(mses) => mses,
                Err(_) => break,
            }
        };

        // Worst repairable violation; ties resolve to the lowest index.
        let mut worst: Option<(usize, f64)> = None;
        for (idx, &mse) in mses.iter().enumerate() {
            if mse > error_target
                && !scratch[idx].is_dead()
                && !transmitted.contains(&idx)
                && worst.map_or(true, |(_, w)| mse > w)
            {
                worst = Some((idx, mse));
            }
        }
        let Some((idx, _)) = worst else { break };

        scratch[idx].last_value = truth[idx];
        scratch[idx].last_tx_step = now.step_index;
        scratch[idx].has_transmitted = true;
        transmitted.push(idx);
    }
    transmitted
}
