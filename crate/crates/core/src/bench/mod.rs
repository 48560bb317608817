//! Synthetic objectives and the regret harness.
//!
//! The objective functions here are what the standalone objective binaries
//! evaluate; [`run_benchmark`] drives full experiments through the real
//! subprocess path and tabulates best-found scores per seed.

use crate::orchestrator::{summarize, Experiment, OrchestratorError, RunOptions};
use crate::resources::EnvConfig;
use crate::space::{ExperimentConfig, JobConfig};
use crate::tracking::{best_so_far, Store};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Penalty constant of [`budgeted`].
pub const BUDGET_PENALTY: f64 = 10.0;

/// `(1 - x)^2 + 100 (y - x^2)^2`, minimum 0 at `(1, 1)`.
pub fn rosenbrock(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

/// `base + BUDGET_PENALTY / n_iterations`.
pub fn budgeted(base: f64, n_iterations: u64) -> f64 {
    assert!(n_iterations >= 1, "budget must be positive");
    base + BUDGET_PENALTY / n_iterations as f64
}

pub fn sphere(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// A deterministic black-box function of a job config.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticObjective {
    pub name: &'static str,
    /// `None` means any number of numeric parameters.
    pub dim: Option<usize>,
    pub min_location: &'static [f64],
    pub min_value: f64,
    pub budget_sensitive: bool,
    eval: fn(&JobConfig) -> Result<f64, String>,
}

fn param(c: &JobConfig, name: &str) -> Result<f64, String> {
    c.get(name).and_then(|v| v.as_f64()).ok_or_else(|| format!("missing numeric parameter `{name}`"))
}

fn eval_rosenbrock(c: &JobConfig) -> Result<f64, String> {
    Ok(rosenbrock(param(c, "x")?, param(c, "y")?))
}

fn eval_budgeted(c: &JobConfig) -> Result<f64, String> {
    Ok(budgeted(eval_rosenbrock(c)?, c.n_iterations.unwrap_or(1).max(1)))
}

fn eval_sphere(c: &JobConfig) -> Result<f64, String> {
    let xs: Vec<f64> = c.values.values().filter_map(|v| v.as_f64()).collect();
    Ok(sphere(&xs))
}

impl SyntheticObjective {
    pub fn eval(&self, c: &JobConfig) -> Result<f64, String> {
        (self.eval)(c)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        OBJECTIVES.iter().copied().find(|o| o.name == name)
    }
}

pub const OBJECTIVES: &[SyntheticObjective] = &[
    SyntheticObjective {
        name: "rosenbrock",
        dim: Some(2),
        min_location: &[1.0, 1.0],
        min_value: 0.0,
        budget_sensitive: false,
        eval: eval_rosenbrock,
    },
    SyntheticObjective {
        name: "budgeted",
        dim: Some(2),
        min_location: &[1.0, 1.0],
        min_value: 0.0,
        budget_sensitive: true,
        eval: eval_budgeted,
    },
    SyntheticObjective {
        name: "sphere",
        dim: None,
        min_location: &[],
        min_value: 0.0,
        budget_sensitive: false,
        eval: eval_sphere,
    },
];

/// Harness description, read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Experiment config document; its `random_seed` is replaced per seed.
    pub experiment: Value,
    pub seeds: Vec<u64>,
    /// Known optimum, used for the regret column.
    #[serde(default)]
    pub min_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub eid: i64,
    pub n_jobs: usize,
    pub n_finished: usize,
    pub total_iterations: u64,
    pub best: Option<f64>,
    /// Best-so-far after each finished job.
    pub trajectory: Vec<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTable {
    pub proposer: String,
    pub min_value: Option<f64>,
    pub runs: Vec<SeedRun>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl RegretTable {
    pub fn bests(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.best).collect()
    }

    pub fn median_best(&self) -> Option<f64> {
        median(self.bests())
    }

    /// One row per seed followed by a `median` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let regret = |b: Option<f64>| match (b, self.min_value) {
            (Some(b), Some(m)) => Some(b - m),
            _ => None,
        };
        w.write_record(["proposer", "seed", "eid", "n_jobs", "n_finished", "total_iterations", "best", "regret", "wall_time"])
            .expect("in-memory write");
        for r in &self.runs {
            w.write_record([
                self.proposer.clone(),
                r.seed.to_string(),
                r.eid.to_string(),
                r.n_jobs.to_string(),
                r.n_finished.to_string(),
                r.total_iterations.to_string(),
                cell(r.best),
                cell(regret(r.best)),
                format!("{:.3}", r.wall_time),
            ])
            .expect("in-memory write");
        }
        let m = self.median_best();
        let total: u64 = self.runs.iter().map(|r| r.total_iterations).sum();
        w.write_record([
            self.proposer.clone(),
            "median".into(),
            String::new(),
            String::new(),
            String::new(),
            total.to_string(),
            cell(m),
            cell(regret(m)),
            String::new(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn with_seed(doc: &Value, seed: u64) -> Value {
    let mut doc = doc.clone();
    if let Some(obj) = doc.as_object_mut() {
        let opts = obj.entry("proposer_options").or_insert_with(|| Value::Object(Default::default()));
        if let Some(o) = opts.as_object_mut() {
            o.insert("random_seed".into(), Value::from(seed));
        }
    }
    doc
}

/// Runs the experiment once per seed and collects best-found scores.
pub fn run_benchmark(bench: &BenchConfig, env: &EnvConfig) -> Result<RegretTable, OrchestratorError> {
    let mut runs = Vec::new();
    let mut proposer = String::new();
    for &seed in &bench.seeds {
        let config = ExperimentConfig::from_json(&with_seed(&bench.experiment, seed))?;
        proposer = config.proposer().to_string();
        let target = config.target;
        let mut exp = Experiment::create(config, env, RunOptions::default())?;
        let live = exp.run(&mut |_| {})?;
        let store = Store::open(&env.database)?;
        let stored = summarize(&store, live.eid)?;
        let trajectory = best_so_far(&store.jobs(live.eid)?, target).into_iter().map(|p| p.best).collect();
        runs.push(SeedRun {
            seed,
            eid: live.eid,
            n_jobs: stored.n_jobs,
            n_finished: stored.n_finished,
            total_iterations: stored.total_iterations,
            best: stored.best.map(|b| b.score),
            trajectory,
            wall_time: live.wall_time,
        });
    }
    Ok(RegretTable { proposer, min_value: bench.min_value, runs })
}
