//! The schedulers: DDPG, a DQN baseline, a fixed-interval baseline, and the
//! ideal ground-truth oracle, behind a common decision surface.

mod baselines;
mod ddpg;
mod dqn;
mod noise;
mod replay;

pub use baselines::{ideal_transmission_set, FixedSchedule};
pub use ddpg::{DdpgAgent, DdpgHyper, TrainDiagnostics};
pub use dqn::{DqnAgent, DqnHyper, DQN_ACTION_DELTAS};
pub use noise::OuNoise;
pub use replay::ReplayMemory;

use serde::{Deserialize, Serialize};

/// The six-dimensional normalized state the actor and critic consume: the
/// transmitting sensor's interval, energy, and error ratio, then the
/// geometric means of the other sensors' intervals, energies, and error
/// ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentStateVector(pub [f64; 6]);

impl AgentStateVector {
    pub fn own_interval(&self) -> f64 {
        self.0[0]
    }

    pub fn own_energy(&self) -> f64 {
        self.0[1]
    }

    pub fn own_error_ratio(&self) -> f64 {
        self.0[2]
    }

    pub fn others_interval(&self) -> f64 {
        self.0[3]
    }

    pub fn others_energy(&self) -> f64 {
        self.0[4]
    }

    pub fn others_error_ratio(&self) -> f64 {
        self.0[5]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// One transition stored in replay memory. The action type is the DDPG
/// continuous value or the DQN action index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience<A> {
    pub state: AgentStateVector,
    pub action: A,
    pub reward: f64,
    pub next_state: AgentStateVector,
}

/// Maps an action in `[-1, 1]` to the sensor's next update interval:
/// the current interval plus `round(U_max * a)` converted to steps, clamped
/// to `[1, T_max]` steps. Rounding is half-away-from-zero so symmetric
/// actions give symmetric changes.
pub fn map_action_to_interval(
    current_steps: u32,
    action: f64,
    u_max_seconds: f64,
    step_seconds: f64,
    t_max_seconds: f64,
) -> u32 {
    let delta_steps = (u_max_seconds * action / step_seconds).round() as i64;
    let t_max_steps = (t_max_seconds / step_seconds).round().max(1.0) as i64;
    (current_steps as i64 + delta_steps).clamp(1, t_max_steps) as u32
}
