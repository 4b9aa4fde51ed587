//! Run configuration: a TOML file with sections for the static simulation
//! parameters, energy model, reward shaping, covariance fitting, and both
//! agents' hyperparameters. Every value has a default matching the shipped
//! experiment setup, so a config file only needs the overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{DdpgHyper, DqnHyper};
use crate::covariance::FitConfig;
use crate::sensors::EnergyParams;

use super::EnvError;

impl Default for EnergyParams {
    /// A 620 mAh lithium coin cell and LoRaWAN-class radio consumption.
    fn default() -> Self {
        Self {
            initial_energy_joules: 6696.0,
            continuous_power_watts: 15e-6,
            tx_energy_joules: 78.7e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    /// Simulation step duration t_S, seconds.
    pub step_seconds: f64,
    /// Initial update interval for every sensor, seconds.
    pub t_start_seconds: f64,
    /// Largest allowed update interval, seconds.
    pub t_max_seconds: f64,
    /// Largest single interval change the continuous action can make,
    /// seconds.
    pub u_max_seconds: f64,
    /// Passes over the training split.
    pub train_passes: u32,
    /// Fraction of the dataset used for training; the rest evaluates.
    pub split_fraction: f64,
    /// Leading fraction of an evaluation run treated as settling time and
    /// excluded from summary statistics (episode logs keep everything).
    pub eval_settle_fraction: f64,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            step_seconds: 10.0,
            t_start_seconds: 900.0,
            t_max_seconds: 7200.0,
            u_max_seconds: 250.0,
            train_passes: 2,
            split_fraction: 2.0 / 3.0,
            eval_settle_fraction: 0.0,
            seed: 1,
        }
    }
}

impl SimulationSection {
    pub fn t_start_steps(&self) -> u32 {
        (self.t_start_seconds / self.step_seconds).round().max(1.0) as u32
    }

    pub fn t_max_steps(&self) -> u32 {
        (self.t_max_seconds / self.step_seconds).round().max(1.0) as u32
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    /// Target mean estimation error (unitless after normalization).
    pub error_target: f64,
    /// Balance between accuracy and energy rewards.
    pub phi: f64,
    /// Weight of the error-change term in the accuracy reward.
    pub upsilon: f64,
    /// Rewards are multiplied by this before storage in replay memory.
    pub reward_scale: f64,
    /// Negates the quadratic term when the error target is exceeded.
    pub penalize_overshoot: bool,
    /// Scale of the negated overshoot term; only meaningful with
    /// `penalize_overshoot`. The published quadratic is nearly flat for
    /// small overshoots, so desk-scale runs may need a stronger pull-back.
    pub overshoot_penalty_weight: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            error_target: 0.01,
            phi: 0.5,
            upsilon: 10.0,
            reward_scale: 10.0,
            penalize_overshoot: false,
            overshoot_penalty_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CovarianceSection {
    /// Observation window length for parameter refits, seconds.
    pub window_seconds: f64,
    /// Refit the scaling parameters whenever observations arrive.
    pub refit: bool,
    /// Prior used until the first successful fit.
    pub prior_theta_time: f64,
    pub prior_theta_space: f64,
    pub fit: FitConfig,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        Self {
            window_seconds: 86_400.0,
            refit: true,
            prior_theta_time: 0.005,
            prior_theta_space: 0.02,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub simulation: SimulationSection,
    pub energy: EnergyParams,
    pub rewards: RewardSection,
    pub covariance: CovarianceSection,
    pub ddpg: DdpgHyper,
    pub dqn: DqnHyper,
}

impl SimulationConfig {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::InvalidConfig(format!("cannot read {path:?}: {e}")))?;
        let config: SimulationConfig = toml::from_str(&text)
            .map_err(|e| EnvError::InvalidConfig(format!("cannot parse {path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let sim = &self.simulation;
        if !(sim.step_seconds > 0.0) {
            return Err(EnvError::InvalidConfig("step_seconds must be positive".into()));
        }
        if sim.t_start_seconds > sim.t_max_seconds {
            return Err(EnvError::InvalidConfig(
                "t_start_seconds exceeds t_max_seconds".into(),
            ));
        }
        for (name, value) in [
            ("t_start_seconds", sim.t_start_seconds),
            ("t_max_seconds", sim.t_max_seconds),
        ] {
            let steps = value / sim.step_seconds;
            if (steps - steps.round()).abs() > 1e-9 {
                return Err(EnvError::InvalidConfig(format!(
                    "{name} must be a whole number of steps"
                )));
            }
        }
        if !(0.0..1.0).contains(&sim.split_fraction) || sim.split_fraction == 0.0 {
            return Err(EnvError::InvalidConfig(
                "split_fraction must be in (0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&sim.eval_settle_fraction) {
            return Err(EnvError::InvalidConfig(
                "eval_settle_fraction must be in [0, 1)".into(),
            ));
        }
        if !(0.25..=0.75).contains(&self.rewards.phi) {
            return Err(EnvError::PhiOutOfRange(self.rewards.phi));
        }
        if !(self.rewards.error_target > 0.0) {
            return Err(EnvError::InvalidConfig("error_target must be positive".into()));
        }
        Ok(())
    }
}
