//! The proposer contract and the two sequence proposers.
//!
//! A proposer hands out job configurations through [`Proposer::get_param`]
//! and ingests finished results through [`Proposer::update`]. Job ids are
//! assigned here, as `0, 1, 2, ...` in issue order, so every algorithm owns
//! its own bookkeeping through a [`ProposerState`].

mod grid;
mod random;

pub use grid::{grid_enumerate, grid_values, GridProposer};
pub use random::{sample_uniform, RandomProposer};

use crate::bandit::{BohbProposer, HyperBandProposer};
use crate::model::{GpEiProposer, TpeProposer};
use crate::rng::{self, SeededRng};
use crate::space::{AlgorithmOptions, ExperimentConfig, JobConfig, JobResult, JobStatus, ParamValue, SearchSpace};
use indexmap::IndexMap;
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProposerError {
    #[error("job {0} was never issued by this proposer")]
    UnknownJob(u64),
    #[error("job {0} was already updated")]
    DuplicateUpdate(u64),
    #[error("grid has {size} points, more than the cap of {cap}")]
    GridTooLarge { size: u128, cap: u64 },
    #[error("invalid bracket plan: {0}")]
    InvalidPlan(String),
}

/// What the orchestrator should do next.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Config(JobConfig),
    /// Nothing can be proposed until pending results arrive.
    Wait,
    /// No further configurations will ever be proposed.
    Done,
}

pub trait Proposer: Send {
    fn get_param(&mut self) -> Proposal;

    /// Feeds back the result of a job previously returned by `get_param`.
    fn update(&mut self, result: &JobResult) -> Result<(), ProposerError>;

    /// True iff no further `Config` will be emitted.
    fn finished(&self) -> bool;

    fn state(&self) -> &ProposerState;
}

/// A completed job as seen by the proposer.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: JobConfig,
    /// Minimization-scale score; `None` for failed or killed jobs.
    pub score: Option<f64>,
    pub status: JobStatus,
}

/// Shared bookkeeping: issued configs, pending jobs, history and the generator.
#[derive(Debug)]
pub struct ProposerState {
    space: SearchSpace,
    n_samples: usize,
    issued: usize,
    pending: HashMap<u64, JobConfig>,
    history: Vec<Observation>,
    failures: usize,
    seed: u64,
    rng: SeededRng,
}

impl ProposerState {
    pub fn new(space: SearchSpace, n_samples: usize, seed: u64) -> Self {
        Self {
            space,
            n_samples,
            issued: 0,
            pending: HashMap::new(),
            history: Vec::new(),
            failures: 0,
            seed,
            rng: rng::seeded(seed),
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn issued(&self) -> usize {
        self.issued
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn is_pending(&self, job_id: u64) -> bool {
        self.pending.contains_key(&job_id)
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    /// Finished observations with their scores, in completion order.
    pub fn completed(&self) -> impl Iterator<Item = (&JobConfig, f64)> {
        self.history.iter().filter_map(|o| o.score.map(|s| (&o.config, s)))
    }

    pub fn n_completed(&self) -> usize {
        self.completed().count()
    }

    pub fn budget_left(&self) -> usize {
        self.n_samples.saturating_sub(self.issued)
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    /// Allocates the next job id and marks the config pending.
    pub fn issue(
        &mut self,
        values: IndexMap<String, ParamValue>,
        n_iterations: Option<u64>,
        aux: BTreeMap<String, Value>,
    ) -> JobConfig {
        let cfg = JobConfig { job_id: self.issued as u64, values, n_iterations, aux };
        debug_assert!(cfg.validate(&self.space).is_ok(), "proposed config out of bounds");
        self.issued += 1;
        self.pending.insert(cfg.job_id, cfg.clone());
        cfg
    }

    /// Moves a pending job into the history, mapping the result back to its config.
    pub fn record(&mut self, result: &JobResult) -> Result<&Observation, ProposerError> {
        let config = match self.pending.remove(&result.job_id) {
            Some(cfg) => cfg,
            None if self.history.iter().any(|o| o.config.job_id == result.job_id) => {
                return Err(ProposerError::DuplicateUpdate(result.job_id))
            }
            None => return Err(ProposerError::UnknownJob(result.job_id)),
        };
        let score = match result.status {
            JobStatus::Finished => result.score.filter(|s| s.is_finite()),
            _ => None,
        };
        if score.is_none() {
            self.failures += 1;
        }
        let status = if score.is_some() { JobStatus::Finished } else { result.status.failure_kind() };
        self.history.push(Observation { config, score, status });
        Ok(self.history.last().expect("just pushed"))
    }
}

impl JobStatus {
    fn failure_kind(self) -> JobStatus {
        match self {
            JobStatus::Finished => JobStatus::Failed,
            other => other,
        }
    }
}

/// Builds the proposer named by `cfg`, seeded from its options.
pub fn build(cfg: &ExperimentConfig) -> Result<Box<dyn Proposer>, ProposerError> {
    let state = ProposerState::new(cfg.space.clone(), cfg.n_samples, cfg.options.random_seed);
    Ok(match &cfg.options.algorithm {
        AlgorithmOptions::Random => Box::new(RandomProposer::new(state)),
        AlgorithmOptions::Grid(opts) => Box::new(GridProposer::new(state, opts.max_grid)?),
        AlgorithmOptions::GpEi(opts) => Box::new(GpEiProposer::new(state, opts.clone())),
        AlgorithmOptions::Tpe(opts) => Box::new(TpeProposer::new(state, opts.clone())),
        AlgorithmOptions::HyperBand(opts) => Box::new(HyperBandProposer::new(state, opts)?),
        AlgorithmOptions::Bohb(opts) => Box::new(BohbProposer::new(state, opts.clone())?),
    })
}
