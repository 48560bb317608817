use crate::space::{JobConfig, Target};
use crate::tracking::{ExperimentStatus, JobState, Store, TrackingError};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct BestJob {
    pub job_id: u64,
    /// In the experiment's own units.
    pub score: f64,
    pub config: JobConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub eid: i64,
    pub status: ExperimentStatus,
    pub target: Target,
    pub n_jobs: usize,
    pub n_finished: usize,
    pub n_failed: usize,
    pub n_killed: usize,
    pub n_interrupted: usize,
    pub n_running: usize,
    pub best: Option<BestJob>,
    /// Seconds.
    pub wall_time: f64,
    /// Most jobs observed running at once; 0 when computed from the store.
    pub max_parallel: usize,
    /// Summed `n_iterations`, counting 1 for jobs without a budget.
    pub total_iterations: u64,
}

impl ExperimentSummary {
    /// Equality on everything except timing and live-only instrumentation.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |s: &Self| Self { wall_time: 0.0, max_parallel: 0, ..s.clone() };
        strip(self) == strip(other)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "eid": self.eid,
            "status": self.status.as_str(),
            "target": self.target.as_str(),
            "n_jobs": self.n_jobs,
            "n_finished": self.n_finished,
            "n_failed": self.n_failed,
            "n_killed": self.n_killed,
            "n_interrupted": self.n_interrupted,
            "n_running": self.n_running,
            "best": self.best.as_ref().map(|b| json!({
                "job_id": b.job_id,
                "score": b.score,
                "config": b.config.to_json(),
            })),
            "wall_time": self.wall_time,
            "total_iterations": self.total_iterations,
        })
    }
}

/// Rebuilds the summary of `eid` purely from the store.
pub fn summarize(store: &Store, eid: i64) -> Result<ExperimentSummary, TrackingError> {
    let exp = store.experiment(eid)?;
    let config = exp.config()?;
    let target = config.target;
    let jobs = store.jobs(eid)?;
    let count = |s: JobState| jobs.iter().filter(|j| j.status == s).count();
    let mut best: Option<(&crate::tracking::JobRecord, f64)> = None;
    for j in jobs.iter().filter(|j| j.status == JobState::Finished) {
        let s = target.normalize(j.score.expect("finished rows carry a score"));
        if best.is_none_or(|(b, bs)| s < bs || (s == bs && j.jid < b.jid)) {
            best = Some((j, s));
        }
    }
    let best = match best {
        Some((j, _)) => Some(BestJob {
            job_id: j.jid,
            score: j.score.expect("finished"),
            config: JobConfig::load(&j.job_config, &config.space)
                .map_err(|e| TrackingError::Corrupt(e.to_string()))?,
        }),
        None => None,
    };
    let mut total_iterations = 0;
    for j in &jobs {
        let c = JobConfig::load(&j.job_config, &config.space).map_err(|e| TrackingError::Corrupt(e.to_string()))?;
        total_iterations += c.n_iterations.unwrap_or(1);
    }
    let wall_time = match (exp.start_time, exp.end_time) {
        (Some(s), Some(e)) => (e - s) as f64 / 1000.0,
        _ => 0.0,
    };
    Ok(ExperimentSummary {
        eid,
        status: exp.status,
        target,
        n_jobs: jobs.len(),
        n_finished: count(JobState::Finished),
        n_failed: count(JobState::Failed),
        n_killed: count(JobState::Killed),
        n_interrupted: count(JobState::Interrupted),
        n_running: count(JobState::Running),
        best,
        wall_time,
        max_parallel: 0,
        total_iterations,
    })
}
