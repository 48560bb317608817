//! Command implementations behind the `aup` binary.
//!
//! Exit codes are stable: 0 success, 2 configuration error, 3 environment or
//! resource error, 4 runtime failure.

pub mod objective;

use aup_core::bench::{run_benchmark, BenchConfig};
use aup_core::orchestrator::{
    self, summarize, ErrorCategory, Event, Experiment, ExperimentSummary, OrchestratorError, RunOptions,
};
use aup_core::resources::{format_result_line, submit_result, EnvConfig, RemoteConfig, ResourceDecl, ResourcePool};
use aup_core::space::{
    ExperimentConfig, JobConfig, ParameterSpec, ProposerKind, ProposerOptions, ResourceType, SearchSpace,
    Target,
};
use aup_core::tracking::{export_csv, export_series, JobState, StopMode, Store, TrackingError};
use serde_json::Value;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ENV: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const DEFAULT_ENV_FILE: &str = "aup_env.json";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: m.into() }
    }

    pub fn env(m: impl Into<String>) -> Self {
        Self { code: EXIT_ENV, message: m.into() }
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: m.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.code {
            EXIT_CONFIG => "config error",
            EXIT_ENV => "environment error",
            _ => "runtime error",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        let code = match e.category() {
            ErrorCategory::Config => EXIT_CONFIG,
            ErrorCategory::Environment => EXIT_ENV,
            ErrorCategory::Runtime => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

fn tracking_err(e: TrackingError) -> CliError {
    match e {
        TrackingError::UnknownExperiment(_) | TrackingError::BadExperimentState { .. } => {
            CliError::runtime(e.to_string())
        }
        TrackingError::Config(_) => CliError::config(e.to_string()),
        _ => CliError::env(e.to_string()),
    }
}

/// Loads the environment file and applies `AUP_DB` / `AUP_WORKDIR`.
pub fn load_env(path: &Path) -> Result<EnvConfig, CliError> {
    let mut env = EnvConfig::load(path).map_err(|e| CliError::env(e.to_string()))?;
    if let Ok(db) = std::env::var("AUP_DB") {
        env.database = db.into();
    }
    if let Ok(w) = std::env::var("AUP_WORKDIR") {
        env.workdir = w.into();
    }
    Ok(env)
}

/// Database path from `AUP_DB`, else from the environment file.
pub fn database_path(env_path: &Path) -> Result<PathBuf, CliError> {
    match std::env::var("AUP_DB") {
        Ok(db) => Ok(db.into()),
        Err(_) => Ok(load_env(env_path)?.database),
    }
}

fn open_store(env_path: &Path) -> Result<Store, CliError> {
    let path = database_path(env_path)?;
    if !path.exists() {
        return Err(CliError::env(format!("database {} does not exist", path.display())));
    }
    let store = Store::open(&path).map_err(tracking_err)?;
    store.recover_orphans().map_err(tracking_err)?;
    Ok(store)
}

fn write_new(path: &Path, text: &str, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::config(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::env(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
}

fn prompt(input: &mut dyn BufRead, out: &mut dyn Write, question: &str, default: &str) -> io::Result<String> {
    write!(out, "{question} [{default}]: ")?;
    out.flush()?;
    let mut line = String::new();
    input.read_line(&mut line)?;
    let line = line.trim();
    Ok(if line.is_empty() { default.to_string() } else { line.to_string() })
}

#[derive(Debug, Clone, Default)]
pub struct SetupArgs {
    pub output: PathBuf,
    pub cpu: Option<usize>,
    pub gpu: Vec<String>,
    pub node: Vec<String>,
    pub passive: Option<usize>,
    pub database: PathBuf,
    pub workdir: PathBuf,
    pub remote: RemoteConfig,
    pub force: bool,
    pub interactive: bool,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// Writes the environment file and validates it by opening the store.
pub fn cmd_setup(
    mut args: SetupArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<EnvConfig, CliError> {
    let io_err = |e: io::Error| CliError::runtime(e.to_string());
    if args.output.exists() && !args.force {
        return Err(CliError::config(format!(
            "{} already exists; pass --force to overwrite",
            args.output.display()
        )));
    }
    if args.interactive {
        let cpus = prompt(input, out, "number of cpu slots", &args.cpu.unwrap_or(1).to_string()).map_err(io_err)?;
        args.cpu = Some(cpus.parse().map_err(|_| CliError::config(format!("`{cpus}` is not a count")))?);
        args.gpu = split_list(&prompt(input, out, "gpu device indices (comma separated)", &args.gpu.join(",")).map_err(io_err)?);
        args.node = split_list(&prompt(input, out, "remote hosts (comma separated)", &args.node.join(",")).map_err(io_err)?);
        args.database = prompt(input, out, "database path", &args.database.to_string_lossy()).map_err(io_err)?.into();
        args.workdir = prompt(input, out, "job workspace", &args.workdir.to_string_lossy()).map_err(io_err)?.into();
    }
    let mut resources = Vec::new();
    let cpus = match (args.cpu, args.gpu.is_empty() && args.node.is_empty() && args.passive.is_none()) {
        (Some(n), _) => n,
        (None, true) => 1,
        (None, false) => 0,
    };
    for i in 0..cpus {
        resources.push(ResourceDecl { rtype: ResourceType::Cpu, locator: i.to_string() });
    }
    for g in &args.gpu {
        resources.push(ResourceDecl { rtype: ResourceType::Gpu, locator: g.clone() });
    }
    for h in &args.node {
        resources.push(ResourceDecl { rtype: ResourceType::Node, locator: h.clone() });
    }
    for i in 0..args.passive.unwrap_or(0) {
        resources.push(ResourceDecl { rtype: ResourceType::Passive, locator: format!("passive{i}") });
    }
    let mut env = EnvConfig::new(resources, args.database.clone(), args.workdir.clone());
    env.remote = args.remote.clone();
    let env = EnvConfig::parse(&env.to_json_string()).map_err(|e| CliError::config(e.to_string()))?;
    let store = Store::open(&env.database).map_err(tracking_err)?;
    store.sync_resources(&ResourcePool::from_env(&env).slots()).map_err(tracking_err)?;
    std::fs::create_dir_all(&env.workdir).map_err(|e| CliError::env(format!("{}: {e}", env.workdir.display())))?;
    write_new(&args.output, &env.to_json_string(), args.force)?;
    writeln!(out, "wrote {} with {} resources", args.output.display(), env.resources.len()).map_err(io_err)?;
    Ok(env)
}

#[derive(Debug, Clone)]
pub struct InitArgs {
    pub output: PathBuf,
    pub proposer: String,
    pub script: PathBuf,
    pub resource: String,
    pub n_parallel: usize,
    pub n_samples: usize,
    pub max_budget: u64,
    pub target: String,
    pub force: bool,
    pub interactive: bool,
}

/// Writes an experiment config scaffold with every proposer default filled.
pub fn cmd_init(
    mut args: InitArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<ExperimentConfig, CliError> {
    let io_err = |e: io::Error| CliError::runtime(e.to_string());
    let mut params = Vec::new();
    if args.interactive {
        writeln!(out, "proposers: {}", ProposerKind::valid_names()).map_err(io_err)?;
        args.proposer = prompt(input, out, "proposer", &args.proposer).map_err(io_err)?;
        args.script = prompt(input, out, "script", &args.script.to_string_lossy()).map_err(io_err)?.into();
        args.resource = prompt(input, out, "resource type", &args.resource).map_err(io_err)?;
        args.target = prompt(input, out, "target (min/max)", &args.target).map_err(io_err)?;
        let n = prompt(input, out, "n_samples", &args.n_samples.to_string()).map_err(io_err)?;
        args.n_samples = n.parse().map_err(|_| CliError::config(format!("`{n}` is not a count")))?;
        loop {
            let name = prompt(input, out, "parameter name (blank to finish)", "").map_err(io_err)?;
            if name.is_empty() {
                break;
            }
            let kind = prompt(input, out, "  type (float/int/choice)", "float").map_err(io_err)?;
            let range = prompt(input, out, "  range as JSON list", "[0, 1]").map_err(io_err)?;
            let doc = serde_json::json!({
                "name": name,
                "type": kind,
                "range": serde_json::from_str::<Value>(&range).map_err(|e| CliError::config(e.to_string()))?,
            });
            params.push(doc);
        }
    }
    let kind: ProposerKind = args.proposer.parse().map_err(|e: aup_core::space::ConfigError| CliError::config(e.to_string()))?;
    let space = if params.is_empty() {
        SearchSpace::new(vec![
            ParameterSpec::float("x", -5.0, 10.0).expect("valid"),
            ParameterSpec::float("y", -5.0, 10.0).expect("valid"),
        ])
        .expect("valid")
    } else {
        SearchSpace::from_json(&Value::Array(params)).map_err(|e| CliError::config(e.to_string()))?
    };
    let config = ExperimentConfig {
        script: args.script.clone(),
        resource: args.resource.parse().map_err(|e: aup_core::space::ConfigError| CliError::config(e.to_string()))?,
        n_parallel: args.n_parallel.max(1),
        target: args.target.parse().map_err(|e: aup_core::space::ConfigError| CliError::config(e.to_string()))?,
        options: ProposerOptions::defaults(kind, space.dim(), args.max_budget),
        space,
        n_samples: args.n_samples.max(1),
        workdir: None,
        timeout: None,
    };
    let text = config.to_json_string();
    let reparsed = ExperimentConfig::parse(&text).map_err(|e| CliError::config(e.to_string()))?;
    write_new(&args.output, &text, args.force)?;
    writeln!(out, "wrote {} ({} proposer)", args.output.display(), kind).map_err(io_err)?;
    Ok(reparsed)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub env: PathBuf,
    pub seed: Option<u64>,
    pub dry_run: bool,
    pub quiet: bool,
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn score_cell(s: Option<f64>) -> String {
    s.map_or("-".into(), |s| s.to_string())
}

pub fn print_summary(out: &mut dyn Write, s: &ExperimentSummary) -> io::Result<()> {
    writeln!(
        out,
        "experiment {} {}: {} jobs ({} finished, {} failed, {} killed, {} interrupted) in {:.2}s",
        s.eid, s.status, s.n_jobs, s.n_finished, s.n_failed, s.n_killed, s.n_interrupted, s.wall_time
    )?;
    match &s.best {
        Some(b) => writeln!(out, "best job={} score={} config={}", b.job_id, b.score, b.config.save()),
        None => writeln!(out, "best none"),
    }
}

/// Runs an experiment, printing one line per launch and completion.
/// Exit code 0 iff at least one job finished.
pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.options.random_seed = seed;
    }
    let env = load_env(&args.env)?;
    if args.dry_run {
        orchestrator::validate(&config, &env)?;
        writeln!(out, "dry run ok: {} proposer, {} samples, {} resource", config.proposer(), config.n_samples, config.resource)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        return Ok(0);
    }
    let mut exp = Experiment::create(config, &env, RunOptions::default())?;
    writeln!(out, "experiment {}", exp.eid()).map_err(|e| CliError::runtime(e.to_string()))?;
    let quiet = args.quiet;
    let mut write_err = None;
    let summary = {
        let mut on_event = |e: &Event| {
            if quiet {
                return;
            }
            let line = match e {
                Event::Launched { job_id, rid, config, job_dir } => {
                    format!("launch job={job_id} slot={rid} dir={} config={}", job_dir.display(), config.save())
                }
                Event::Completed { job_id, rid, status, score, aux } => format!(
                    "done job={job_id} slot={rid} status={status} score={}{}",
                    score_cell(*score),
                    aux.as_ref().map(|a| format!(" aux={a}")).unwrap_or_default()
                ),
                Event::Stopping(m) => format!("stopping ({})", if *m == StopMode::Kill { "kill" } else { "drain" }),
            };
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                write_err.get_or_insert(e);
            }
        };
        exp.run(&mut on_event)?
    };
    if let Some(e) = write_err {
        log::warn!("progress output failed: {e}");
    }
    print_summary(out, &summary).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(if summary.n_finished > 0 { 0 } else { EXIT_RUNTIME })
}

pub fn cmd_stop(env_path: &Path, eid: i64, kill: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let store = open_store(env_path)?;
    let mode = if kill { StopMode::Kill } else { StopMode::Drain };
    orchestrator::stop_experiment(&store, eid, mode)?;
    writeln!(out, "stop requested for experiment {eid}").map_err(|e| CliError::runtime(e.to_string()))
}

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    pub env: PathBuf,
    pub eid: i64,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub top: Option<usize>,
}

fn emit(path: &Path, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if path == Path::new("-") {
        write!(out, "{text}").map_err(|e| CliError::runtime(e.to_string()))
    } else {
        std::fs::write(path, text).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
    }
}

/// The `k` best finished jobs, best first, ties by job id.
pub fn top_jobs(store: &Store, eid: i64, k: usize) -> Result<Vec<(u64, f64, JobConfig)>, CliError> {
    let config = store.experiment(eid).map_err(tracking_err)?.config().map_err(tracking_err)?;
    let target: Target = config.target;
    let mut done: Vec<(u64, f64, JobConfig)> = store
        .jobs(eid)
        .map_err(tracking_err)?
        .into_iter()
        .filter(|j| j.status == JobState::Finished)
        .map(|j| {
            let c = JobConfig::load(&j.job_config, &config.space).map_err(|e| CliError::runtime(e.to_string()))?;
            Ok((j.jid, j.score.expect("finished"), c))
        })
        .collect::<Result<_, CliError>>()?;
    done.sort_by(|a, b| target.normalize(a.1).total_cmp(&target.normalize(b.1)).then(a.0.cmp(&b.0)));
    done.truncate(k);
    Ok(done)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = open_store(&args.env)?;
    let summary = summarize(&store, args.eid).map_err(tracking_err)?;
    let mut any = false;
    if let Some(p) = &args.csv {
        emit(p, &export_csv(&store, args.eid).map_err(tracking_err)?, out)?;
        any = true;
    }
    if let Some(p) = &args.json {
        let v = export_series(&store, args.eid).map_err(tracking_err)?;
        emit(p, &format!("{}\n", serde_json::to_string_pretty(&v).expect("json")), out)?;
        any = true;
    }
    if let Some(k) = args.top {
        for (jid, score, cfg) in top_jobs(&store, args.eid, k)? {
            writeln!(out, "job={jid} score={score} config={}", cfg.save()).map_err(|e| CliError::runtime(e.to_string()))?;
        }
        any = true;
    }
    if !any {
        print_summary(out, &summary).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    Ok(())
}

/// Delivers the result of a job running on a passive resource.
pub fn cmd_submit(env_path: &Path, eid: i64, jid: u64, score: f64, aux: Option<&str>) -> Result<(), CliError> {
    let line = format_result_line(score, aux).map_err(|e| CliError::config(e.to_string()))?;
    let store = open_store(env_path)?;
    let exp = store.experiment(eid).map_err(tracking_err)?;
    let job = store.job(eid, jid).map_err(tracking_err)?;
    if job.status != JobState::Running {
        return Err(CliError::runtime(format!("job {jid} of experiment {eid} is {}", job.status)));
    }
    let config = exp.config().map_err(tracking_err)?;
    let env = load_env(env_path)?;
    let workdir = config.workdir.unwrap_or(env.workdir);
    let workdir = std::path::absolute(&workdir).unwrap_or(workdir);
    submit_result(&workdir, eid, jid, &line).map_err(|e| CliError::env(e.to_string()))
}

pub fn cmd_bench(env_path: &Path, harness: &Path, output: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(harness).map_err(|e| CliError::config(format!("{}: {e}", harness.display())))?;
    let bench: BenchConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", harness.display())))?;
    let env = load_env(env_path)?;
    let table = run_benchmark(&bench, &env)?;
    let csv = table.to_csv();
    match output {
        Some(p) => emit(p, &csv, out),
        None => write!(out, "{csv}").map_err(|e| CliError::runtime(e.to_string())),
    }
}

/// `aup-result <score> [aux]` / `aup result`: prints the result line.
pub fn print_result(args: &[String]) -> i32 {
    let (score, aux) = match args {
        [s] => (s, None),
        [s, a] => (s, Some(a.as_str())),
        _ => {
            eprintln!("usage: aup-result <score> [aux]");
            return EXIT_CONFIG;
        }
    };
    let Ok(score) = score.trim().parse::<f64>() else {
        eprintln!("`{score}` is not a number");
        return EXIT_CONFIG;
    };
    match format_result_line(score, aux) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}
