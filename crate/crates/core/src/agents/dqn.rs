//! DQN baseline over five discrete interval changes.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralnet::{
    adam_step, load_adam, load_network, save_adam, save_network, Activation, AdamState,
    LayerSpec, Mode, Network, NetworkError,
};

use super::ddpg::STATE_DIM;
use super::replay::ReplayMemory;
use super::{AgentStateVector, Experience, TrainDiagnostics};

/// The discrete action set, as interval changes in steps.
pub const DQN_ACTION_DELTAS: [i64; 5] = [-10, -1, 0, 1, 10];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnHyper {
    pub learning_rate: f64,
    pub discount: f64,
    pub explore_rate: f64,
    pub soft_update: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub warmup_experiences: usize,
    pub hidden_widths: Vec<usize>,
}

impl Default for DqnHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            discount: 0.2,
            explore_rate: 0.15,
            soft_update: 1e-3,
            batch_size: 32,
            memory_capacity: 20_000,
            warmup_experiences: 1000,
            hidden_widths: vec![24, 24],
        }
    }
}

impl DqnHyper {
    fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = STATE_DIM;
        for &width in &self.hidden_widths {
            specs.push(LayerSpec::new(prev, width, Activation::Rectifier));
            prev = width;
        }
        specs.push(LayerSpec::new(
            prev,
            DQN_ACTION_DELTAS.len(),
            Activation::Identity,
        ));
        specs
    }
}

pub struct DqnAgent {
    q: Network,
    q_target: Network,
    opt: AdamState,
    pub memory: ReplayMemory<usize>,
    hyper: DqnHyper,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(hyper: DqnHyper, seed: u64) -> Result<Self, NetworkError> {
        let q = Network::new(hyper.specs(), seed)?;
        let mut q_target = q.clone();
        q_target.reseed(seed.wrapping_add(1));
        let opt = AdamState::new(&q, hyper.learning_rate);
        let memory = ReplayMemory::new(hyper.memory_capacity);
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        Ok(Self {
            q,
            q_target,
            opt,
            memory,
            hyper,
            rng,
        })
    }

    pub fn hyper(&self) -> &DqnHyper {
        &self.hyper
    }

    /// Epsilon-greedy action index. Greedy ties break toward the lowest
    /// action index.
    pub fn act(&mut self, state: &AgentStateVector, explore: bool) -> usize {
        if explore && self.rng.gen::<f64>() < self.hyper.explore_rate {
            return self.rng.gen_range(0..DQN_ACTION_DELTAS.len());
        }
        let input = Array2::from_shape_vec((1, STATE_DIM), state.0.to_vec()).expect("shape");
        let q = self.q.infer(&input).expect("state width");
        argmax_row(&q, 0)
    }

    pub fn observe(&mut self, experience: Experience<usize>) {
        self.memory.push(experience);
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    fn ready_to_train(&self) -> bool {
        self.memory.len() >= self.hyper.warmup_experiences.max(self.hyper.batch_size)
    }

    /// One batch update toward `h = r + gamma * max_a' Q'(s', a')`, then a
    /// soft target update.
    pub fn train_step(&mut self) -> Option<TrainDiagnostics> {
        if !self.ready_to_train() {
            return None;
        }
        let m = self.hyper.batch_size;
        let batch = self.memory.sample(&mut self.rng, m);

        let mut states = Array2::zeros((m, STATE_DIM));
        let mut next_states = Array2::zeros((m, STATE_DIM));
        let mut actions = vec![0usize; m];
        let mut rewards = vec![0.0f64; m];
        for (row, exp) in batch.iter().enumerate() {
            for (col, &v) in exp.state.0.iter().enumerate() {
                states[[row, col]] = v;
            }
            for (col, &v) in exp.next_state.0.iter().enumerate() {
                next_states[[row, col]] = v;
            }
            actions[row] = exp.action;
            rewards[row] = exp.reward;
        }

        let next_q = self.q_target.infer(&next_states).expect("shape");
        self.q.set_mode(Mode::Training);
        let q = self.q.forward(&states).expect("shape");

        let mut upstream = Array2::zeros((m, DQN_ACTION_DELTAS.len()));
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for row in 0..m {
            let max_next = (0..DQN_ACTION_DELTAS.len())
                .map(|a| next_q[[row, a]])
                .fold(f64::NEG_INFINITY, f64::max);
            let target = rewards[row] + self.hyper.discount * max_next;
            let taken = actions[row];
            let diff = q[[row, taken]] - target;
            loss += diff * diff;
            mean_q += q[[row, taken]];
            upstream[[row, taken]] = 2.0 * diff / m as f64;
        }
        loss /= m as f64;
        mean_q /= m as f64;

        let grads = self.q.backward(&upstream).expect("cached forward");
        adam_step(&mut self.q, &grads.gradients, &mut self.opt).expect("matching shapes");
        self.q.set_mode(Mode::Inference);
        self.q_target
            .soft_update_from(&self.q, self.hyper.soft_update)
            .expect("same architecture");

        Some(TrainDiagnostics {
            critic_loss: loss,
            mean_q,
        })
    }

    pub fn save<W: Write>(&self, writer: &mut W) -> Result<(), NetworkError> {
        save_network(writer, &self.q)?;
        save_network(writer, &self.q_target)?;
        save_adam(writer, &self.opt)?;
        Ok(())
    }

    pub fn load<R: Read>(
        reader: &mut R,
        hyper: DqnHyper,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut q = load_network(reader)?;
        let mut q_target = load_network(reader)?;
        let opt = load_adam(reader, &q)?;
        q.reseed(seed);
        q_target.reseed(seed.wrapping_add(1));
        let memory = ReplayMemory::new(hyper.memory_capacity);
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        Ok(Self {
            q,
            q_target,
            opt,
            memory,
            hyper,
            rng,
        })
    }
}

/// Index of the row maximum; ties resolve to the lowest index.
fn argmax_row(values: &Array2<f64>, row: usize) -> usize {
    let mut best = 0;
    let mut best_value = values[[row, 0]];
    for col in 1..values.ncols() {
        if values[[row, col]] > best_value {
            best_value = values[[row, col]];
            best = col;
        }
    }
    best
}
