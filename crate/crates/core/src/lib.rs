//! Simulator for LDP-protected knowledge sharing among cooperative
//! Q-learning agents, a privacy-exploiting poisoning attacker, and a
//! threshold anomaly detector.

pub mod advice;
pub mod agent;
pub mod attack;
pub mod campaign;
pub mod config;
pub mod detector;
pub mod dist;
pub mod env;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod privacy;
pub mod rng;
pub mod sim;

pub use campaign::{replay, run_campaign, write_campaign, CampaignResult, RunManifest};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
