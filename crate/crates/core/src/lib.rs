//! Hyperparameter search orchestration.
//!
//! An experiment couples a [`space::SearchSpace`] with a proposer algorithm,
//! a pool of typed resource slots and a persistent store. Training scripts are
//! plain executables: they receive a flat JSON job config as their first
//! argument and report a score on stdout.

pub mod bandit;
pub mod bench;
pub mod model;
pub mod orchestrator;
pub mod proposers;
pub mod resources;
pub mod rng;
pub mod space;
pub mod tracking;
