//! The experiment main loop.
//!
//! A resource slot is acquired before the proposer is asked for a
//! configuration. Completions from job threads are funneled through one
//! channel, so the proposer and the store are only touched by the loop.

mod summary;

pub use summary::{summarize, BestJob, ExperimentSummary};

use crate::proposers::{self, Proposal, Proposer, ProposerError};
use crate::resources::{EnvConfig, ResourceError, ResourcePool, RunningJob, Runner, SlotStatus};
use crate::space::{ConfigError, ExperimentConfig, JobConfig, JobResult, JobStatus, ResourceType};
use crate::tracking::{default_username, ExperimentStatus, StopMode, Store, TrackingError};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("proposer: {0}")]
    Proposer(#[from] ProposerError),
    #[error("resources: {0}")]
    Resource(#[from] ResourceError),
    #[error("tracking: {0}")]
    Tracking(#[from] TrackingError),
    #[error("{0}")]
    Io(String),
    #[error("cannot read config file {0}")]
    ConfigFile(String),
    #[error("script `{0}` does not exist")]
    MissingScript(PathBuf),
    #[error("proposer waits but no job is running")]
    Stalled,
    #[error("all {0} resources are disabled")]
    NoUsableResources(ResourceType),
}

/// Which exit-code family an error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Environment,
    Runtime,
}

impl OrchestratorError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            OrchestratorError::Config(_) | OrchestratorError::ConfigFile(_) | OrchestratorError::MissingScript(_) => ErrorCategory::Config,
            OrchestratorError::Proposer(ProposerError::GridTooLarge { .. } | ProposerError::InvalidPlan(_)) => {
                ErrorCategory::Config
            }
            OrchestratorError::Resource(_) | OrchestratorError::NoUsableResources(_) => ErrorCategory::Environment,
            OrchestratorError::Tracking(TrackingError::Db(_) | TrackingError::VersionMismatch { .. })
            | OrchestratorError::Tracking(TrackingError::Io(_)) => ErrorCategory::Environment,
            _ => ErrorCategory::Runtime,
        }
    }
}

/// Cross-thread stop switch for a running experiment.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicU8>);

impl StopHandle {
    pub fn request(&self, mode: StopMode) {
        let v = match mode {
            StopMode::Drain => 1,
            StopMode::Kill => 2,
        };
        self.0.fetch_max(v, Ordering::SeqCst);
    }

    pub fn get(&self) -> Option<StopMode> {
        match self.0.load(Ordering::SeqCst) {
            0 => None,
            1 => Some(StopMode::Drain),
            _ => Some(StopMode::Kill),
        }
    }
}

/// Progress notifications from the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Launched { job_id: u64, rid: u64, config: JobConfig, job_dir: PathBuf },
    /// `score` is in the experiment's own units.
    Completed { job_id: u64, rid: u64, status: JobStatus, score: Option<f64>, aux: Option<String> },
    Stopping(StopMode),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub stop: StopHandle,
    /// How often the store is checked for an external stop request.
    pub poll: Duration,
    pub username: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { stop: StopHandle::default(), poll: Duration::from_millis(100), username: None }
    }
}

fn absolute(p: &Path) -> Result<PathBuf, OrchestratorError> {
    std::path::absolute(p).map_err(|e| OrchestratorError::Io(format!("{}: {e}", p.display())))
}

/// Checks everything `run` needs without launching anything.
pub fn validate(config: &ExperimentConfig, env: &EnvConfig) -> Result<(), OrchestratorError> {
    proposers::build(config)?;
    let pool = ResourcePool::from_env(env);
    let of_type: Vec<_> = pool.slots().into_iter().filter(|s| s.rtype == config.resource).collect();
    if of_type.is_empty() {
        return Err(ResourceError::NoSuchType(config.resource).into());
    }
    if of_type.iter().all(|s| s.status == SlotStatus::Disabled) {
        return Err(OrchestratorError::NoUsableResources(config.resource));
    }
    if matches!(config.resource, ResourceType::Cpu | ResourceType::Gpu) && !config.script.exists() {
        return Err(OrchestratorError::MissingScript(config.script.clone()));
    }
    Ok(())
}

/// One experiment bound to a store and a resource pool.
pub struct Experiment {
    eid: i64,
    config: ExperimentConfig,
    proposer: Box<dyn Proposer>,
    pool: Arc<ResourcePool>,
    store: Store,
    runner: Runner,
    opts: RunOptions,
    status: ExperimentStatus,
    issued: usize,
    counts: HashMap<JobStatus, usize>,
    /// `(job_id, normalized score)`.
    best: Option<(u64, f64)>,
    best_config: Option<JobConfig>,
    max_running: usize,
    total_iterations: u64,
}

impl Experiment {
    /// Validates, opens the store and registers the experiment as `created`.
    pub fn create(config: ExperimentConfig, env: &EnvConfig, opts: RunOptions) -> Result<Self, OrchestratorError> {
        validate(&config, env)?;
        let proposer = proposers::build(&config)?;
        let store = Store::open(&env.database)?;
        store.recover_orphans()?;
        let pool = Arc::new(ResourcePool::from_env(env));
        store.sync_resources(&pool.slots())?;
        let uid = store.ensure_user(opts.username.as_deref().unwrap_or(&default_username()))?;
        let eid = store.create_experiment(uid, &config)?;
        let script = if config.script.exists() { absolute(&config.script)? } else { config.script.clone() };
        let workdir = absolute(config.workdir.as_deref().unwrap_or(&env.workdir))?;
        let runner = Runner {
            pool: pool.clone(),
            eid,
            script,
            workdir,
            timeout: config.timeout.map(Duration::from_secs_f64),
            remote: env.remote.clone(),
        };
        Ok(Self {
            eid,
            config,
            proposer,
            pool,
            store,
            runner,
            opts,
            status: ExperimentStatus::Created,
            issued: 0,
            counts: HashMap::new(),
            best: None,
            best_config: None,
            max_running: 0,
            total_iterations: 0,
        })
    }

    pub fn eid(&self) -> i64 {
        self.eid
    }

    pub fn status(&self) -> ExperimentStatus {
        self.status
    }

    pub fn pool(&self) -> &Arc<ResourcePool> {
        &self.pool
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn proposer(&self) -> &dyn Proposer {
        self.proposer.as_ref()
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.opts.stop.clone()
    }

    /// Runs the loop to completion and returns the live summary.
    pub fn run(&mut self, on_event: &mut dyn FnMut(&Event)) -> Result<ExperimentSummary, OrchestratorError> {
        if self.status != ExperimentStatus::Created {
            return Err(TrackingError::BadExperimentState {
                eid: self.eid,
                status: self.status,
                expected: "created",
            }
            .into());
        }
        let started = Instant::now();
        self.store.start_experiment(self.eid, std::process::id())?;
        self.status = ExperimentStatus::Running;
        let (tx, rx) = mpsc::channel();
        let mut running: HashMap<u64, RunningJob> = HashMap::new();
        let outcome = self.main_loop(&tx, &rx, &mut running, on_event);
        let outcome = outcome.and_then(|stop| {
            self.drain(&rx, &mut running, stop, on_event)?;
            Ok(stop)
        });
        let final_status = match &outcome {
            Ok(Some(_)) => ExperimentStatus::Stopped,
            Ok(None) => ExperimentStatus::Finished,
            Err(_) => ExperimentStatus::Failed,
        };
        if outcome.is_err() {
            for job in running.values() {
                job.kill();
            }
            let _ = self.drain(&rx, &mut running, Some(StopMode::Kill), on_event);
        }
        self.status = final_status;
        let finish = self.store.finish_experiment(self.eid, final_status);
        outcome?;
        finish?;
        Ok(self.live_summary(started.elapsed().as_secs_f64()))
    }

    fn stop_requested(&self, last_poll: &mut Instant) -> Result<Option<StopMode>, OrchestratorError> {
        if let Some(m) = self.opts.stop.get() {
            return Ok(Some(m));
        }
        if last_poll.elapsed() >= self.opts.poll {
            *last_poll = Instant::now();
            if let Some(m) = self.store.stop_request(self.eid)? {
                self.opts.stop.request(m);
                return Ok(Some(m));
            }
        }
        Ok(None)
    }

    /// Returns the stop mode if the loop ended on a stop request.
    fn main_loop(
        &mut self,
        tx: &Sender<JobResult>,
        rx: &Receiver<JobResult>,
        running: &mut HashMap<u64, RunningJob>,
        on_event: &mut dyn FnMut(&Event),
    ) -> Result<Option<StopMode>, OrchestratorError> {
        let rtype = self.config.resource;
        let mut last_poll = Instant::now();
        loop {
            if let Some(mode) = self.stop_requested(&mut last_poll)? {
                on_event(&Event::Stopping(mode));
                return Ok(Some(mode));
            }
            if self.proposer.finished() {
                return Ok(None);
            }
            if running.len() >= self.config.n_parallel {
                self.wait_event(rx, running, on_event)?;
                continue;
            }
            let Some(slot) = self.pool.get_available(rtype)? else {
                if running.is_empty() {
                    return Err(OrchestratorError::NoUsableResources(rtype));
                }
                self.wait_event(rx, running, on_event)?;
                continue;
            };
            match self.proposer.get_param() {
                Proposal::Config(job) => {
                    self.store.job_started(self.eid, &job, Some(slot.rid))?;
                    self.store.set_resource_status(slot.rid, SlotStatus::Busy)?;
                    let tx = tx.clone();
                    let handle = self
                        .runner
                        .run(&job, &slot, move |r| {
                            let _ = tx.send(r);
                        })
                        .map_err(|e| OrchestratorError::Io(format!("launching job {}: {e}", job.job_id)))?;
                    self.issued += 1;
                    self.total_iterations += job.n_iterations.unwrap_or(1);
                    log::info!("launch job={} slot={} config={}", job.job_id, slot.rid, job.save());
                    on_event(&Event::Launched {
                        job_id: job.job_id,
                        rid: slot.rid,
                        job_dir: crate::resources::job_dir(&self.runner.workdir, self.eid, job.job_id),
                        config: job.clone(),
                    });
                    running.insert(job.job_id, handle);
                    self.max_running = self.max_running.max(running.len());
                }
                Proposal::Wait => {
                    self.pool.release(slot.rid)?;
                    if running.is_empty() {
                        return Err(OrchestratorError::Stalled);
                    }
                    self.wait_event(rx, running, on_event)?;
                }
                Proposal::Done => {
                    self.pool.release(slot.rid)?;
                    return Ok(None);
                }
            }
        }
    }

    /// Blocks until one completion arrives or the poll interval elapses.
    fn wait_event(
        &mut self,
        rx: &Receiver<JobResult>,
        running: &mut HashMap<u64, RunningJob>,
        on_event: &mut dyn FnMut(&Event),
    ) -> Result<(), OrchestratorError> {
        match rx.recv_timeout(self.opts.poll) {
            Ok(result) => self.complete(result, running, on_event),
            Err(RecvTimeoutError::Timeout) => Ok(()),
            Err(RecvTimeoutError::Disconnected) => Err(OrchestratorError::Io("completion channel closed".into())),
        }
    }

    fn drain(
        &mut self,
        rx: &Receiver<JobResult>,
        running: &mut HashMap<u64, RunningJob>,
        stop: Option<StopMode>,
        on_event: &mut dyn FnMut(&Event),
    ) -> Result<(), OrchestratorError> {
        let mut last_poll = Instant::now();
        let mut killed = false;
        while !running.is_empty() {
            let mode = stop.or(self.stop_requested(&mut last_poll)?);
            if mode == Some(StopMode::Kill) && !killed {
                for job in running.values() {
                    job.kill();
                }
                killed = true;
            }
            self.wait_event(rx, running, on_event)?;
        }
        Ok(())
    }

    fn complete(
        &mut self,
        result: JobResult,
        running: &mut HashMap<u64, RunningJob>,
        on_event: &mut dyn FnMut(&Event),
    ) -> Result<(), OrchestratorError> {
        let handle = running.remove(&result.job_id);
        let rid = handle.as_ref().map_or(0, |h| h.rid);
        if let Some(h) = handle {
            h.join();
        }
        self.store.job_finished(self.eid, &result)?;
        self.store.set_resource_status(rid, SlotStatus::Free)?;
        let target = self.config.target;
        let normalized = JobResult { score: result.score.map(|s| target.normalize(s)), ..result.clone() };
        let obs_config = self.proposer.state().history().len();
        self.proposer.update(&normalized)?;
        *self.counts.entry(result.status).or_default() += 1;
        if let Some(s) = normalized.score {
            if self.best.is_none_or(|(j, b)| s < b || (s == b && result.job_id < j)) {
                self.best = Some((result.job_id, s));
                self.best_config = self.proposer.state().history().get(obs_config).map(|o| o.config.clone());
            }
        }
        log::info!(
            "done job={} slot={} status={} score={}",
            result.job_id,
            rid,
            result.status,
            result.score.map_or("-".to_string(), |s| s.to_string())
        );
        on_event(&Event::Completed {
            job_id: result.job_id,
            rid,
            status: result.status,
            score: result.score,
            aux: result.aux_string,
        });
        Ok(())
    }

    fn live_summary(&self, wall_time: f64) -> ExperimentSummary {
        let count = |s| self.counts.get(&s).copied().unwrap_or(0);
        let target = self.config.target;
        ExperimentSummary {
            eid: self.eid,
            status: self.status,
            target,
            n_jobs: self.issued,
            n_finished: count(JobStatus::Finished),
            n_failed: count(JobStatus::Failed),
            n_killed: count(JobStatus::Killed),
            n_interrupted: 0,
            n_running: self.issued - self.counts.values().sum::<usize>(),
            best: self.best.map(|(job_id, s)| BestJob {
                job_id,
                score: target.normalize(s),
                config: self.best_config.clone().expect("best config recorded"),
            }),
            wall_time,
            max_parallel: self.max_running,
            total_iterations: self.total_iterations,
        }
    }
}

/// Parses both files and runs the experiment they describe.
pub fn run_experiment(
    config_path: &Path,
    env_path: &Path,
    opts: RunOptions,
    on_event: &mut dyn FnMut(&Event),
) -> Result<ExperimentSummary, OrchestratorError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| OrchestratorError::ConfigFile(format!("{}: {e}", config_path.display())))?;
    let config = ExperimentConfig::parse(&text)?;
    let env = EnvConfig::load(env_path)?;
    Experiment::create(config, &env, opts)?.run(on_event)
}

/// Requests a stop of a running experiment recorded in `store`.
pub fn stop_experiment(store: &Store, eid: i64, mode: StopMode) -> Result<(), OrchestratorError> {
    Ok(store.request_stop(eid, mode)?)
}
