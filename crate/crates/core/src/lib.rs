//! Goal-conditioned offline reinforcement learning for pixel-space trajectory
//! prediction.

pub mod autodiff;
pub mod geom;
pub mod actions;
pub mod dataset;
pub mod reward;
pub mod synthgen;
pub mod encoders;
pub mod model;
pub mod cql;
pub mod rollout;
pub mod metrics;
pub mod baselines;
pub mod config;
pub mod plot;
pub mod pipeline;
