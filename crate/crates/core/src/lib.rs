//! Energy-aware update-interval scheduling for battery-powered sensors whose
//! observations are correlated in time and space.
//!
//! The library is organised around a gateway-side decision loop:
//!
//! * [`sensors`] — domain types for sensors, simulation time, age of
//!   information, and battery/lifetime accounting.
//! * [`covariance`] — the separable exponential space-time covariance model
//!   and online extraction of its scaling parameters from observations.
//! * [`estimator`] — LMMSE estimation of the observed field from stale
//!   observations and the analytic mean-square error that drives scheduling.
//! * [`neuralnet`] — a small feedforward network kernel (forward, backprop,
//!   Adam, dropout, batch normalisation) sufficient for the actor and critic.
//! * [`agents`] — the schedulers: DDPG, a DQN baseline, a fixed-interval
//!   baseline, and an ideal ground-truth oracle.
//! * [`environment`] — the time-stepped gateway simulation that replays
//!   dataset observations, builds agent states and rewards, and accounts
//!   energy.
//! * [`data`] — dataset ingestion (Intel lab format, generic CSV),
//!   train/test splitting, and a synthetic spatio-temporal Gaussian-process
//!   generator.

pub mod agents;
pub mod covariance;
pub mod data;
pub mod environment;
pub mod estimator;
pub mod neuralnet;
pub mod sensors;
