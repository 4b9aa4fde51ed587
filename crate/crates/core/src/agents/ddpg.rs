//! Deep deterministic policy gradient agent: one actor/critic pair (plus
//! target copies) shared by every sensor the gateway controls.
//!
//! The training step follows the standard recipe: critic regression toward
//! `h = r + gamma * Q'(s', mu'(s'))`, an actor step along the critic's
//! action gradient evaluated at `a = mu(s)`, then soft target updates.

use std::io::{Read, Write};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralnet::{
    adam_step, load_adam, load_network, save_adam, save_network, Activation, AdamState,
    LayerSpec, Mode, Network, NetworkError,
};

use super::noise::OuNoise;
use super::replay::ReplayMemory;
use super::{AgentStateVector, Experience};

pub const STATE_DIM: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgHyper {
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub soft_update: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub warmup_experiences: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    pub ou_dt: f64,
    /// Multiplier applied to the noise volatility at each training-pass
    /// boundary; 1.0 keeps exploration constant.
    pub ou_sigma_decay: f64,
    /// Critic-only updates for this many training steps before the actor
    /// starts following the critic's action gradient.
    pub actor_delay_steps: u64,
    /// L2 penalty on the critic's weight matrices, as in the reference
    /// actor-critic implementation this design follows.
    pub critic_weight_decay: f64,
    /// L2 penalty on the actor's output in its loss. Keeps the policy out
    /// of tanh saturation; small interval changes are the natural resting
    /// state of a stable scheduler.
    pub actor_action_penalty: f64,
    /// Hidden layer widths of both networks.
    pub hidden_widths: Vec<usize>,
    /// Dropout rate between hidden layers.
    pub dropout_rate: f64,
    /// Batch normalization after the first hidden layer's activation.
    pub batch_norm: bool,
}

impl Default for DdpgHyper {
    fn default() -> Self {
        Self {
            actor_learning_rate: 1e-4,
            critic_learning_rate: 1e-4,
            soft_update: 1e-3,
            discount: 0.99,
            batch_size: 128,
            memory_capacity: 100_000,
            warmup_experiences: 1000,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            ou_dt: 1.0,
            ou_sigma_decay: 1.0,
            actor_delay_steps: 0,
            critic_weight_decay: 1e-2,
            actor_action_penalty: 0.2,
            hidden_widths: vec![75, 75, 75, 25],
            dropout_rate: 0.5,
            batch_norm: true,
        }
    }
}

impl DdpgHyper {
    /// Layer stack shared by actor and critic: dropout between hidden layers
    /// and batch normalization after the first hidden activation.
    fn specs(&self, input_width: usize, head: Activation) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = input_width;
        let last_hidden = self.hidden_widths.len() - 1;
        for (i, &width) in self.hidden_widths.iter().enumerate() {
            let mut spec = LayerSpec::new(prev, width, Activation::Rectifier);
            if i == 0 && self.batch_norm {
                spec = spec.with_batch_norm();
            }
            if i < last_hidden && self.dropout_rate > 0.0 {
                spec = spec.with_dropout(self.dropout_rate);
            }
            specs.push(spec);
            prev = width;
        }
        specs.push(LayerSpec::new(prev, 1, head));
        specs
    }
}

/// Scalar training diagnostics for logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainDiagnostics {
    pub critic_loss: f64,
    pub mean_q: f64,
}

pub struct DdpgAgent {
    actor: Network,
    critic: Network,
    actor_target: Network,
    critic_target: Network,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub memory: ReplayMemory<f64>,
    /// One exploration stream per sensor, so a noise excursion cannot drive
    /// the whole fleet's intervals in lockstep.
    noise: Vec<OuNoise>,
    noise_sigma: f64,
    hyper: DdpgHyper,
    rng: ChaCha8Rng,
    train_steps: u64,
}

impl DdpgAgent {
    pub fn new(hyper: DdpgHyper, seed: u64) -> Result<Self, NetworkError> {
        let actor_specs = hyper.specs(STATE_DIM, Activation::Tanh);
        // The critic consumes the state with the action concatenated.
        let critic_specs = hyper.specs(STATE_DIM + 1, Activation::Identity);

        let actor = Network::new(actor_specs, seed)?;
        let critic = Network::new(critic_specs, seed.wrapping_add(1))?;
        let mut actor_target = actor.clone();
        actor_target.reseed(seed.wrapping_add(2));
        let mut critic_target = critic.clone();
        critic_target.reseed(seed.wrapping_add(3));

        let actor_opt = AdamState::new(&actor, hyper.actor_learning_rate);
        let critic_opt = AdamState::new(&critic, hyper.critic_learning_rate);
        let memory = ReplayMemory::new(hyper.memory_capacity);
        let noise_sigma = hyper.ou_sigma;
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        Ok(Self {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            memory,
            noise: Vec::new(),
            noise_sigma,
            hyper,
            rng,
            train_steps: 0,
        })
    }

    pub fn hyper(&self) -> &DdpgHyper {
        &self.hyper
    }

    /// Policy action for a state, clamped to `[-1, 1]`. With `explore` the
    /// sensor's Ornstein-Uhlenbeck stream is sampled and added before
    /// clamping.
    pub fn act(&mut self, state: &AgentStateVector, explore: bool) -> f64 {
        self.act_for(state, explore, 0)
    }

    /// As [`DdpgAgent::act`], drawing exploration noise from the stream of
    /// sensor `stream`.
    pub fn act_for(&mut self, state: &AgentStateVector, explore: bool, stream: usize) -> f64 {
        let input = Array2::from_shape_vec((1, STATE_DIM), state.0.to_vec()).expect("shape");
        let mut action = self.actor.infer(&input).expect("state width")[[0, 0]];
        if explore {
            while self.noise.len() <= stream {
                self.noise.push(OuNoise::new(
                    self.hyper.ou_theta,
                    self.noise_sigma,
                    self.hyper.ou_dt,
                ));
            }
            let stream_noise = &mut self.noise[stream];
            stream_noise.set_sigma(self.noise_sigma);
            action += stream_noise.sample(&mut self.rng);
        }
        action.clamp(-1.0, 1.0)
    }

    pub fn observe(&mut self, experience: Experience<f64>) {
        self.memory.push(experience);
    }

    pub fn reset_noise(&mut self) {
        for noise in &mut self.noise {
            noise.reset();
        }
    }

    /// Applies the configured per-pass exploration decay.
    pub fn decay_noise(&mut self) {
        self.noise_sigma *= self.hyper.ou_sigma_decay;
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    fn ready_to_train(&self) -> bool {
        self.memory.len() >= self.hyper.warmup_experiences.max(self.hyper.batch_size)
    }

    /// One batch update of critic, actor, and targets. Returns `None` (and
    /// changes nothing) until the warmup threshold is reached.
    pub fn train_step(&mut self) -> Option<TrainDiagnostics> {
        if !self.ready_to_train() {
            return None;
        }
        let m = self.hyper.batch_size;
        let batch = self.memory.sample(&mut self.rng, m);

        let mut states = Array2::zeros((m, STATE_DIM));
        let mut actions = Array2::zeros((m, 1));
        let mut rewards = Array2::zeros((m, 1));
        let mut next_states = Array2::zeros((m, STATE_DIM));
        for (row, exp) in batch.iter().enumerate() {
            for (col, &v) in exp.state.0.iter().enumerate() {
                states[[row, col]] = v;
            }
            actions[[row, 0]] = exp.action;
            rewards[[row, 0]] = exp.reward;
            for (col, &v) in exp.next_state.0.iter().enumerate() {
                next_states[[row, col]] = v;
            }
        }

        // Target values h = r + gamma * Q'(s', mu'(s')).
        let next_actions = self.actor_target.infer(&next_states).expect("shape");
        let next_q = self
            .critic_target
            .infer(&concat_state_action(&next_states, &next_actions))
            .expect("shape");
        let targets = &rewards + &(self.hyper.discount * &next_q);

        // Critic regression toward the targets.
        self.critic.set_mode(Mode::Training);
        let q = self
            .critic
            .forward(&concat_state_action(&states, &actions))
            .expect("shape");
        let diff = &q - &targets;
        let critic_loss = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        let upstream = diff.mapv(|d| 2.0 * d / m as f64);
        let mut critic_grads = self.critic.backward(&upstream).expect("cached forward");
        if self.hyper.critic_weight_decay > 0.0 {
            for (grad, layer) in critic_grads
                .gradients
                .layers
                .iter_mut()
                .zip(self.critic.layers())
            {
                grad.weights
                    .scaled_add(self.hyper.critic_weight_decay, &layer.weights);
            }
        }
        adam_step(&mut self.critic, &critic_grads.gradients, &mut self.critic_opt)
            .expect("matching shapes");

        self.train_steps += 1;

        // Actor ascends the critic's action gradient at a = mu(s), once the
        // critic has had its head start.
        let mut mean_q = q.mean().unwrap_or(0.0);
        if self.train_steps > self.hyper.actor_delay_steps {
            self.actor.set_mode(Mode::Training);
            let proposed = self.actor.forward(&states).expect("shape");
            let q_of_proposed = self
                .critic
                .forward(&concat_state_action(&states, &proposed))
                .expect("shape");
            mean_q = q_of_proposed.mean().unwrap_or(0.0);
            let maximize = Array2::from_elem((m, 1), -1.0 / m as f64);
            let critic_input_grads = self.critic.backward(&maximize).expect("cached forward");
            let mut action_grad = critic_input_grads
                .input_gradient
                .slice(ndarray::s![.., STATE_DIM..])
                .to_owned();
            if self.hyper.actor_action_penalty > 0.0 {
                action_grad
                    .scaled_add(2.0 * self.hyper.actor_action_penalty / m as f64, &proposed);
            }
            let actor_grads = self.actor.backward(&action_grad).expect("cached forward");
            adam_step(&mut self.actor, &actor_grads.gradients, &mut self.actor_opt)
                .expect("matching shapes");
            self.actor.set_mode(Mode::Inference);
        }

        self.critic.set_mode(Mode::Inference);

        let tau = self.hyper.soft_update;
        self.actor_target
            .soft_update_from(&self.actor, tau)
            .expect("same architecture");
        self.critic_target
            .soft_update_from(&self.critic, tau)
            .expect("same architecture");

        Some(TrainDiagnostics {
            critic_loss,
            mean_q,
        })
    }

    /// Critic value of a state-action pair (diagnostics and tests).
    pub fn q_value(&self, state: &AgentStateVector, action: f64) -> f64 {
        let mut input = Array2::zeros((1, STATE_DIM + 1));
        for (col, &v) in state.0.iter().enumerate() {
            input[[0, col]] = v;
        }
        input[[0, STATE_DIM]] = action;
        self.critic.infer(&input).expect("shape")[[0, 0]]
    }

    /// Distance between live and target parameters (contraction checks).
    pub fn target_distance(&self) -> (f64, f64) {
        let dist = |a: &Network, b: &Network| -> f64 {
            (0..a.parameter_count())
                .map(|i| (a.parameter(i) - b.parameter(i)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        (
            dist(&self.actor, &self.actor_target),
            dist(&self.critic, &self.critic_target),
        )
    }

    /// Writes actor, critic, both targets, and both optimizer states.
    pub fn save<W: Write>(&self, writer: &mut W) -> Result<(), NetworkError> {
        save_network(writer, &self.actor)?;
        save_network(writer, &self.critic)?;
        save_network(writer, &self.actor_target)?;
        save_network(writer, &self.critic_target)?;
        save_adam(writer, &self.actor_opt)?;
        save_adam(writer, &self.critic_opt)?;
        Ok(())
    }

    /// Restores a checkpoint written by [`DdpgAgent::save`]. Replay memory
    /// is not persisted; the agent resumes with an empty buffer.
    pub fn load<R: Read>(
        reader: &mut R,
        hyper: DdpgHyper,
        seed: u64,
    ) -> Result<Self, NetworkError> {
        let mut actor = load_network(reader)?;
        let mut critic = load_network(reader)?;
        let mut actor_target = load_network(reader)?;
        let mut critic_target = load_network(reader)?;
        let actor_opt = load_adam(reader, &actor)?;
        let critic_opt = load_adam(reader, &critic)?;
        actor.reseed(seed);
        critic.reseed(seed.wrapping_add(1));
        actor_target.reseed(seed.wrapping_add(2));
        critic_target.reseed(seed.wrapping_add(3));
        let memory = ReplayMemory::new(hyper.memory_capacity);
        let noise_sigma = hyper.ou_sigma;
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        Ok(Self {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt,
            critic_opt,
            memory,
            noise: Vec::new(),
            noise_sigma,
            hyper,
            rng,
            train_steps: 0,
        })
    }
}

fn concat_state_action(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[states.view(), actions.view()]).expect("matching rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_state() -> AgentStateVector {
        AgentStateVector([0.125, 0.5, 0.9, 0.125, 0.5, 0.9])
    }

    fn small_hyper() -> DdpgHyper {
        DdpgHyper {
            batch_size: 16,
            warmup_experiences: 32,
            hidden_widths: vec![32, 16],
            dropout_rate: 0.0,
            batch_norm: false,
            actor_learning_rate: 1e-3,
            critic_learning_rate: 1e-3,
            ..DdpgHyper::default()
        }
    }

    #[test]
    fn greedy_action_is_deterministic_and_bounded() {
        let mut agent = DdpgAgent::new(DdpgHyper::default(), 3).unwrap();
        let state = constant_state();
        let a = agent.act(&state, false);
        let b = agent.act(&state, false);
        assert_eq!(a, b);
        assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn exploration_noise_is_clamped() {
        let hyper = DdpgHyper {
            ou_sigma: 50.0,
            ..small_hyper()
        };
        let mut agent = DdpgAgent::new(hyper, 4).unwrap();
        for _ in 0..100 {
            let a = agent.act(&constant_state(), true);
            assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn zero_volatility_noise_reduces_to_greedy_policy() {
        let hyper = DdpgHyper {
            ou_sigma: 0.0,
            ..small_hyper()
        };
        let mut agent = DdpgAgent::new(hyper, 5).unwrap();
        let greedy = agent.act(&constant_state(), false);
        let explored = agent.act(&constant_state(), true);
        assert_eq!(greedy, explored);
    }

    #[test]
    fn below_warmup_training_is_a_no_op() {
        let mut agent = DdpgAgent::new(small_hyper(), 6).unwrap();
        for _ in 0..10 {
            agent.observe(Experience {
                state: constant_state(),
                action: 0.1,
                reward: 1.0,
                next_state: constant_state(),
            });
        }
        let before: f64 = agent.act(&constant_state(), false);
        assert!(agent.train_step().is_none());
        assert_eq!(agent.act(&constant_state(), false), before);
    }

    #[test]
    fn discount_free_targets_equal_rewards() {
        // With gamma = 0 the critic regresses toward the raw rewards; after
        // many steps on a single repeated experience its value approaches
        // that reward.
        let hyper = DdpgHyper {
            discount: 0.0,
            warmup_experiences: 16,
            ..small_hyper()
        };
        let mut agent = DdpgAgent::new(hyper, 7).unwrap();
        let state = constant_state();
        for _ in 0..64 {
            agent.observe(Experience {
                state,
                action: 0.25,
                reward: 2.0,
                next_state: state,
            });
        }
        for _ in 0..400 {
            agent.train_step().unwrap();
        }
        let q = agent.q_value(&state, 0.25);
        assert!(
            (q - 2.0).abs() < 0.2,
            "critic did not converge to the discount-free reward: {q}"
        );
    }

    #[test]
    fn soft_updates_contract_target_distance() {
        let mut agent = DdpgAgent::new(small_hyper(), 8).unwrap();
        let state = constant_state();
        for k in 0..64 {
            agent.observe(Experience {
                state,
                action: (k % 5) as f64 * 0.2 - 0.4,
                reward: -((k % 5) as f64 * 0.2 - 0.4f64).powi(2),
                next_state: state,
            });
        }
        agent.train_step().unwrap();
        let (actor_d0, critic_d0) = agent.target_distance();
        // Freeze learning effects by measuring contraction of an isolated
        // soft update toward the current live networks.
        let tau = agent.hyper.soft_update;
        let actor = agent.actor.clone();
        let critic = agent.critic.clone();
        agent.actor_target.soft_update_from(&actor, tau).unwrap();
        agent.critic_target.soft_update_from(&critic, tau).unwrap();
        let (actor_d1, critic_d1) = agent.target_distance();
        assert!(actor_d1 <= actor_d0 * (1.0 - tau) + 1e-12);
        assert!(critic_d1 <= critic_d0 * (1.0 - tau) + 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_policy() {
        let mut agent = DdpgAgent::new(small_hyper(), 9).unwrap();
        let state = constant_state();
        for k in 0..64 {
            agent.observe(Experience {
                state,
                action: (k % 3) as f64 * 0.3,
                reward: k as f64 * 0.01,
                next_state: state,
            });
        }
        for _ in 0..10 {
            agent.train_step().unwrap();
        }
        let mut buf = Vec::new();
        agent.save(&mut buf).unwrap();
        let mut restored = DdpgAgent::load(&mut buf.as_slice(), small_hyper(), 9).unwrap();
        assert_eq!(
            agent.act(&state, false),
            restored.act(&state, false)
        );
        assert_eq!(agent.q_value(&state, 0.5), restored.q_value(&state, 0.5));
        assert_eq!(restored.memory_len(), 0);
    }
}
