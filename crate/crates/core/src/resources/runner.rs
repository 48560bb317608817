use super::{parse_result_line, RemoteConfig, ResourcePool, ResourceSlot};
use crate::space::{JobConfig, JobResult, ResourceType};
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// File a passive job's result is submitted to, inside its job directory.
pub const PASSIVE_RESULT_FILE: &str = "result";

/// `<workdir>/exp_<eid>/job_<jid>`.
pub fn job_dir(workdir: &Path, eid: i64, job_id: u64) -> PathBuf {
    workdir.join(format!("exp_{eid}")).join(format!("job_{job_id}"))
}

/// Writes a result line for a passive job; the runner picks it up.
pub fn submit_result(workdir: &Path, eid: i64, job_id: u64, line: &str) -> io::Result<()> {
    let dir = job_dir(workdir, eid, job_id);
    if !dir.is_dir() {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("no job directory {}", dir.display())));
    }
    let tmp = dir.join(format!("{PASSIVE_RESULT_FILE}.tmp"));
    fs::write(&tmp, format!("{line}\n"))?;
    fs::rename(tmp, dir.join(PASSIVE_RESULT_FILE))
}

/// Launch settings shared by every job of one experiment.
#[derive(Debug, Clone)]
pub struct Runner {
    pub pool: Arc<ResourcePool>,
    pub eid: i64,
    pub script: PathBuf,
    pub workdir: PathBuf,
    pub timeout: Option<Duration>,
    pub remote: RemoteConfig,
}

/// Handle to a launched job.
#[derive(Debug)]
pub struct RunningJob {
    pub job_id: u64,
    pub rid: u64,
    pub start: Instant,
    pub config_path: PathBuf,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
    pub timeout: Option<Duration>,
    kill: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RunningJob {
    /// Asks the job to terminate; it then completes as killed.
    pub fn kill(&self) {
        self.kill.store(true, Ordering::SeqCst);
    }

    pub fn is_done(&self) -> bool {
        self.thread.as_ref().map_or(true, JoinHandle::is_finished)
    }

    /// Blocks until the callback has run.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

enum Outcome {
    Exited(ExitStatus),
    Passive(String),
    Killed,
    LaunchFailed(String),
}

impl Runner {
    /// Launches `job` on the held `slot`. The slot is released before
    /// `on_complete` fires, exactly once, with the job's result.
    pub fn run<F>(&self, job: &JobConfig, slot: &ResourceSlot, on_complete: F) -> io::Result<RunningJob>
    where
        F: FnOnce(JobResult) + Send + 'static,
    {
        let dir = job_dir(&self.workdir, self.eid, job.job_id);
        fs::create_dir_all(&dir)?;
        let config_path = dir.join("config.json");
        fs::write(&config_path, job.save())?;
        let stdout_path = dir.join("stdout.txt");
        let stderr_path = dir.join("stderr.txt");
        let kill = Arc::new(AtomicBool::new(false));
        let start = Instant::now();

        let ctx = JobContext {
            runner: self.clone(),
            job_id: job.job_id,
            slot: slot.clone(),
            dir: dir.clone(),
            config_path: config_path.clone(),
            stdout_path: stdout_path.clone(),
            stderr_path: stderr_path.clone(),
            kill: kill.clone(),
            start,
        };
        let thread = std::thread::Builder::new()
            .name(format!("job-{}", job.job_id))
            .spawn(move || {
                let outcome = ctx.execute();
                let result = ctx.result(outcome);
                let _ = ctx.runner.pool.release(ctx.slot.rid);
                on_complete(result);
            })?;
        Ok(RunningJob {
            job_id: job.job_id,
            rid: slot.rid,
            start,
            config_path,
            stdout_path,
            stderr_path,
            timeout: self.timeout,
            kill,
            thread: Some(thread),
        })
    }
}

struct JobContext {
    runner: Runner,
    job_id: u64,
    slot: ResourceSlot,
    dir: PathBuf,
    config_path: PathBuf,
    stdout_path: PathBuf,
    stderr_path: PathBuf,
    kill: Arc<AtomicBool>,
    start: Instant,
}

impl JobContext {
    fn expired(&self) -> bool {
        self.kill.load(Ordering::SeqCst) || self.runner.timeout.is_some_and(|t| self.start.elapsed() >= t)
    }

    fn command(&self, program: impl AsRef<std::ffi::OsStr>) -> io::Result<Command> {
        let mut cmd = Command::new(program);
        cmd.stdin(Stdio::null())
            .stdout(File::create(&self.stdout_path)?)
            .stderr(File::create(&self.stderr_path)?)
            .current_dir(&self.dir)
            .env("AUP_JOB_ID", self.job_id.to_string())
            .env("AUP_EXPERIMENT_ID", self.runner.eid.to_string());
        Ok(cmd)
    }

    fn execute(&self) -> Outcome {
        match self.slot.rtype {
            ResourceType::Passive => self.wait_passive(),
            ResourceType::Node => match self.copy_to_node() {
                Ok(remote_path) => {
                    let mut cmd = match self.command(&self.runner.remote.shell) {
                        Ok(c) => c,
                        Err(e) => return Outcome::LaunchFailed(e.to_string()),
                    };
                    cmd.arg(&self.slot.locator).arg(&self.runner.script).arg(remote_path);
                    self.supervise(cmd)
                }
                Err(e) => Outcome::LaunchFailed(e),
            },
            ResourceType::Cpu | ResourceType::Gpu => {
                let mut cmd = match self.command(&self.runner.script) {
                    Ok(c) => c,
                    Err(e) => return Outcome::LaunchFailed(e.to_string()),
                };
                cmd.arg(&self.config_path);
                if self.slot.rtype == ResourceType::Gpu {
                    cmd.env("CUDA_VISIBLE_DEVICES", &self.slot.locator);
                }
                self.supervise(cmd)
            }
        }
    }

    fn copy_to_node(&self) -> Result<String, String> {
        let remote = &self.runner.remote;
        let remote_path = format!(
            "{}/{}_{}.json",
            remote.remote_dir.trim_end_matches('/'),
            self.runner.eid,
            self.job_id
        );
        let status = Command::new(&remote.copy)
            .arg(&self.config_path)
            .arg(format!("{}:{}", self.slot.locator, remote_path))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| format!("{}: {e}", remote.copy))?;
        if status.success() {
            Ok(remote_path)
        } else {
            Err(format!("{} exited with {status}", remote.copy))
        }
    }

    fn supervise(&self, mut cmd: Command) -> Outcome {
        let mut child: Child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return Outcome::LaunchFailed(e.to_string()),
        };
        let mut pause = Duration::from_millis(1);
        loop {
            match child.try_wait() {
                Ok(Some(status)) => return Outcome::Exited(status),
                Ok(None) => {}
                Err(e) => return Outcome::LaunchFailed(e.to_string()),
            }
            if self.expired() {
                let _ = child.kill();
                let _ = child.wait();
                return Outcome::Killed;
            }
            std::thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(20));
        }
    }

    fn wait_passive(&self) -> Outcome {
        let path = self.dir.join(PASSIVE_RESULT_FILE);
        loop {
            if let Ok(text) = fs::read_to_string(&path) {
                return Outcome::Passive(text);
            }
            if self.expired() {
                return Outcome::Killed;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn result(&self, outcome: Outcome) -> JobResult {
        let wall = self.start.elapsed().as_secs_f64();
        let parsed = |text: &str| match parse_result_line(text) {
            Ok((score, aux)) => JobResult::finished(self.job_id, score, aux, wall),
            Err(e) => {
                log::warn!("job {}: {e}", self.job_id);
                JobResult::failed(self.job_id, wall)
            }
        };
        match outcome {
            Outcome::Exited(status) if status.success() => {
                parsed(&fs::read_to_string(&self.stdout_path).unwrap_or_default())
            }
            Outcome::Exited(status) => {
                log::warn!("job {} exited with {status}", self.job_id);
                JobResult::failed(self.job_id, wall)
            }
            Outcome::Passive(text) => parsed(&text),
            Outcome::Killed => JobResult::killed(self.job_id, wall),
            Outcome::LaunchFailed(e) => {
                log::warn!("job {} failed to launch: {e}", self.job_id);
                let _ = fs::write(&self.stderr_path, format!("launch failed: {e}\n"));
                JobResult::failed(self.job_id, wall)
            }
        }
    }
}
