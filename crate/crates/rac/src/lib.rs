//! Opponent-aware role-based multi-agent actor-critic, with the two
//! team-competitive board games it trains on and a tournament harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: reverse-mode tape over small dense tensors, parameter
//!   storage, Adam, and finite-difference gradient checking.
//! - [`env`]: the Touch-Mark and Market simulators behind one contract.
//! - [`nets`]: policies, attention critics, role encoders, the opponent-role
//!   predictor, the variational posterior, and the GRU trajectory encoder.
//! - [`losses`]: critic TD loss, policy surrogate with counterfactual
//!   baseline, and the role objectives with their decay schedule.
//! - [`replay`] and [`trainer`]: episodic replay, rollouts, windowed batch
//!   updates with target networks, and the training variants.
//! - [`harness`]: checkpoint tournaments, metric emission, and sweeps.

pub mod autodiff;
pub mod config;
pub mod env;
pub mod harness;
pub mod losses;
pub mod nets;
pub mod replay;
pub mod trainer;
