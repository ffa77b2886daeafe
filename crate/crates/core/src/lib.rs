//! Physics-based imitation of human-object interaction (HOI) at desk scale.
//!
//! The crate covers the contact-aware HOI representation, the multiplicative
//! imitation reward with its contact-graph term, a deterministic 2D
//! articulated-body simulator, synthetic reference generation, PPO training
//! and the evaluation metrics.

pub mod config;
pub mod contact;
pub mod demo;
pub mod math;
pub mod metrics;
pub mod model;
pub mod physics;
pub mod reward;
pub mod rl;
