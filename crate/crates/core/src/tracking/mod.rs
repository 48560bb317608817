//! Persistent experiment history in a single SQLite file.
//!
//! Four tables (`user`, `resource`, `experiment`, `job`) plus a
//! `schema_version` stamp. Every write is committed before the call returns.

mod export;

pub use export::{best_so_far, export_csv, export_series};

use crate::resources::{ResourceSlot, SlotStatus};
use crate::space::{ConfigError, ExperimentConfig, JobConfig, JobResult, JobStatus};
use rusqlite::{params, Connection, OptionalExtension};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("database: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("database schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: i64, expected: i64 },
    #[error("unknown experiment {0}")]
    UnknownExperiment(i64),
    #[error("unknown job {jid} in experiment {eid}")]
    UnknownJob { eid: i64, jid: u64 },
    #[error("job {jid} in experiment {eid} already exists")]
    DuplicateJob { eid: i64, jid: u64 },
    #[error("job {jid} in experiment {eid} already reached a terminal state ({status})")]
    DuplicateTransition { eid: i64, jid: u64, status: String },
    #[error("unknown resource {0}")]
    UnknownResource(u64),
    #[error("experiment {eid} is {status}, expected {expected}")]
    BadExperimentState { eid: i64, status: ExperimentStatus, expected: &'static str },
    #[error("stored experiment config is invalid: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentStatus {
    Created,
    Running,
    Finished,
    Stopped,
    Failed,
}

impl ExperimentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentStatus::Created => "created",
            ExperimentStatus::Running => "running",
            ExperimentStatus::Finished => "finished",
            ExperimentStatus::Stopped => "stopped",
            ExperimentStatus::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ExperimentStatus::Finished | ExperimentStatus::Stopped | ExperimentStatus::Failed)
    }
}

impl FromStr for ExperimentStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "created" => ExperimentStatus::Created,
            "running" => ExperimentStatus::Running,
            "finished" => ExperimentStatus::Finished,
            "stopped" => ExperimentStatus::Stopped,
            "failed" => ExperimentStatus::Failed,
            other => return Err(format!("unknown experiment status `{other}`")),
        })
    }
}

impl fmt::Display for ExperimentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Persisted job state. `Interrupted` marks jobs whose owner process died.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Running,
    Finished,
    Failed,
    Killed,
    Interrupted,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Running => "running",
            JobState::Finished => "finished",
            JobState::Failed => "failed",
            JobState::Killed => "killed",
            JobState::Interrupted => "interrupted",
        }
    }
}

impl From<JobStatus> for JobState {
    fn from(s: JobStatus) -> Self {
        match s {
            JobStatus::Finished => JobState::Finished,
            JobStatus::Failed => JobState::Failed,
            JobStatus::Killed => JobState::Killed,
        }
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "running" => JobState::Running,
            "finished" => JobState::Finished,
            "failed" => JobState::Failed,
            "killed" => JobState::Killed,
            "interrupted" => JobState::Interrupted,
            other => return Err(format!("unknown job status `{other}`")),
        })
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    Drain,
    Kill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub uid: i64,
    pub username: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceRecord {
    pub rid: u64,
    pub rtype: String,
    pub locator: String,
    pub status: SlotStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub eid: i64,
    pub uid: i64,
    /// UTC epoch milliseconds.
    pub start_time: Option<i64>,
    pub end_time: Option<i64>,
    pub exp_config: String,
    pub status: ExperimentStatus,
    pub stop_request: Option<StopMode>,
    pub owner_pid: Option<u32>,
}

impl ExperimentRecord {
    pub fn config(&self) -> Result<ExperimentConfig, TrackingError> {
        Ok(ExperimentConfig::parse(&self.exp_config)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub eid: i64,
    pub jid: u64,
    pub job_config: String,
    /// In the experiment's own units (not negated for `max`).
    pub score: Option<f64>,
    pub status: JobState,
    pub start_time: i64,
    pub end_time: Option<i64>,
    pub rid: Option<u64>,
    pub aux_string: Option<String>,
    /// 1-based completion order among terminal jobs.
    pub completion_seq: Option<i64>,
}

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// The OS user, falling back to `"unknown"`.
pub fn default_username() -> String {
    std::env::var("USER").or_else(|_| std::env::var("USERNAME")).unwrap_or_else(|_| "unknown".into())
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS user (
    uid INTEGER PRIMARY KEY AUTOINCREMENT,
    username TEXT NOT NULL UNIQUE
);
CREATE TABLE IF NOT EXISTS resource (
    rid INTEGER PRIMARY KEY,
    rtype TEXT NOT NULL,
    locator TEXT NOT NULL,
    status TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS experiment (
    eid INTEGER PRIMARY KEY AUTOINCREMENT,
    uid INTEGER NOT NULL REFERENCES user(uid),
    start_time INTEGER,
    end_time INTEGER,
    exp_config TEXT NOT NULL,
    status TEXT NOT NULL,
    stop_request TEXT,
    owner_pid INTEGER
);
CREATE TABLE IF NOT EXISTS job (
    eid INTEGER NOT NULL REFERENCES experiment(eid),
    jid INTEGER NOT NULL,
    job_config TEXT NOT NULL,
    score REAL,
    status TEXT NOT NULL,
    start_time INTEGER NOT NULL,
    end_time INTEGER,
    rid INTEGER REFERENCES resource(rid),
    aux_string TEXT,
    completion_seq INTEGER,
    PRIMARY KEY (eid, jid),
    CHECK ((status = 'finished') = (score IS NOT NULL))
);
";

/// Handle to an open history database.
#[derive(Debug)]
pub struct Store {
    conn: Connection,
}

fn parse_col<T: FromStr<Err = String>>(s: String) -> Result<T, TrackingError> {
    s.parse().map_err(TrackingError::Corrupt)
}

impl Store {
    /// Opens or creates the database at `path`.
    pub fn open(path: &Path) -> Result<Self, TrackingError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| TrackingError::Io(format!("{}: {e}", dir.display())))?;
        }
        let conn = Connection::open(path)?;
        conn.busy_timeout(Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        let found: Option<i64> =
            conn.query_row("SELECT MAX(version) FROM schema_version", [], |r| r.get(0))?;
        match found {
            None => {
                conn.execute("INSERT INTO schema_version (version) VALUES (?1)", [SCHEMA_VERSION])?;
            }
            Some(v) if v != SCHEMA_VERSION => {
                return Err(TrackingError::VersionMismatch { found: v, expected: SCHEMA_VERSION })
            }
            Some(_) => {}
        }
        Ok(Self { conn })
    }

    pub fn schema_version(&self) -> Result<i64, TrackingError> {
        Ok(self.conn.query_row("SELECT MAX(version) FROM schema_version", [], |r| r.get(0))?)
    }

    /// Returns the uid for `username`, creating the user if needed.
    pub fn ensure_user(&self, username: &str) -> Result<i64, TrackingError> {
        self.conn.execute("INSERT OR IGNORE INTO user (username) VALUES (?1)", [username])?;
        Ok(self.conn.query_row("SELECT uid FROM user WHERE username = ?1", [username], |r| r.get(0))?)
    }

    pub fn users(&self) -> Result<Vec<UserRecord>, TrackingError> {
        let mut stmt = self.conn.prepare("SELECT uid, username FROM user ORDER BY uid")?;
        let rows = stmt.query_map([], |r| Ok(UserRecord { uid: r.get(0)?, username: r.get(1)? }))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Replaces the resource table with the pool's current slots.
    pub fn sync_resources(&self, slots: &[ResourceSlot]) -> Result<(), TrackingError> {
        let tx = self.conn.unchecked_transaction()?;
        for s in slots {
            tx.execute(
                "INSERT INTO resource (rid, rtype, locator, status) VALUES (?1, ?2, ?3, ?4)
                 ON CONFLICT(rid) DO UPDATE SET rtype = ?2, locator = ?3, status = ?4",
                params![s.rid as i64, s.rtype.as_str(), s.locator, s.status.as_str()],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn set_resource_status(&self, rid: u64, status: SlotStatus) -> Result<(), TrackingError> {
        let n = self
            .conn
            .execute("UPDATE resource SET status = ?2 WHERE rid = ?1", params![rid as i64, status.as_str()])?;
        if n == 0 {
            return Err(TrackingError::UnknownResource(rid));
        }
        Ok(())
    }

    pub fn resources(&self) -> Result<Vec<ResourceRecord>, TrackingError> {
        let mut stmt = self.conn.prepare("SELECT rid, rtype, locator, status FROM resource ORDER BY rid")?;
        let rows = stmt.query_map([], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
        })?;
        rows.map(|row| {
            let (rid, rtype, locator, status) = row?;
            Ok(ResourceRecord { rid: rid as u64, rtype, locator, status: parse_col(status)? })
        })
        .collect()
    }

    /// Inserts an experiment in `created` state and returns its id.
    pub fn create_experiment(&self, uid: i64, config: &ExperimentConfig) -> Result<i64, TrackingError> {
        self.conn.execute(
            "INSERT INTO experiment (uid, exp_config, status) VALUES (?1, ?2, 'created')",
            params![uid, config.to_json_string()],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn start_experiment(&self, eid: i64, owner_pid: u32) -> Result<(), TrackingError> {
        let exp = self.experiment(eid)?;
        if exp.status != ExperimentStatus::Created {
            return Err(TrackingError::BadExperimentState { eid, status: exp.status, expected: "created" });
        }
        self.conn.execute(
            "UPDATE experiment SET status = 'running', start_time = ?2, owner_pid = ?3 WHERE eid = ?1",
            params![eid, now_ms(), owner_pid],
        )?;
        Ok(())
    }

    pub fn finish_experiment(&self, eid: i64, status: ExperimentStatus) -> Result<(), TrackingError> {
        let exp = self.experiment(eid)?;
        if exp.status.is_terminal() {
            return Err(TrackingError::BadExperimentState { eid, status: exp.status, expected: "not terminal" });
        }
        let end = now_ms().max(exp.start_time.unwrap_or(0));
        self.conn.execute(
            "UPDATE experiment SET status = ?2, end_time = ?3, start_time = COALESCE(start_time, ?3)
             WHERE eid = ?1",
            params![eid, status.as_str(), end],
        )?;
        Ok(())
    }

    /// Asks the process running `eid` to stop.
    pub fn request_stop(&self, eid: i64, mode: StopMode) -> Result<(), TrackingError> {
        let exp = self.experiment(eid)?;
        if exp.status != ExperimentStatus::Running {
            return Err(TrackingError::BadExperimentState { eid, status: exp.status, expected: "running" });
        }
        let m = match mode {
            StopMode::Drain => "drain",
            StopMode::Kill => "kill",
        };
        self.conn.execute("UPDATE experiment SET stop_request = ?2 WHERE eid = ?1", params![eid, m])?;
        Ok(())
    }

    pub fn stop_request(&self, eid: i64) -> Result<Option<StopMode>, TrackingError> {
        Ok(self.experiment(eid)?.stop_request)
    }

    pub fn experiment(&self, eid: i64) -> Result<ExperimentRecord, TrackingError> {
        let row = self
            .conn
            .query_row(
                "SELECT eid, uid, start_time, end_time, exp_config, status, stop_request, owner_pid
                 FROM experiment WHERE eid = ?1",
                [eid],
                |r| {
                    Ok((
                        r.get::<_, i64>(0)?,
                        r.get::<_, i64>(1)?,
                        r.get::<_, Option<i64>>(2)?,
                        r.get::<_, Option<i64>>(3)?,
                        r.get::<_, String>(4)?,
                        r.get::<_, String>(5)?,
                        r.get::<_, Option<String>>(6)?,
                        r.get::<_, Option<u32>>(7)?,
                    ))
                },
            )
            .optional()?
            .ok_or(TrackingError::UnknownExperiment(eid))?;
        let (eid, uid, start_time, end_time, exp_config, status, stop, owner_pid) = row;
        let stop_request = match stop.as_deref() {
            None => None,
            Some("drain") => Some(StopMode::Drain),
            Some("kill") => Some(StopMode::Kill),
            Some(other) => return Err(TrackingError::Corrupt(format!("stop request `{other}`"))),
        };
        Ok(ExperimentRecord {
            eid,
            uid,
            start_time,
            end_time,
            exp_config,
            status: parse_col(status)?,
            stop_request,
            owner_pid,
        })
    }

    pub fn experiments(&self) -> Result<Vec<i64>, TrackingError> {
        let mut stmt = self.conn.prepare("SELECT eid FROM experiment ORDER BY eid")?;
        let rows = stmt.query_map([], |r| r.get(0))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn job_started(&self, eid: i64, job: &JobConfig, rid: Option<u64>) -> Result<(), TrackingError> {
        self.experiment(eid)?;
        if self.job(eid, job.job_id).is_ok() {
            return Err(TrackingError::DuplicateJob { eid, jid: job.job_id });
        }
        self.conn.execute(
            "INSERT INTO job (eid, jid, job_config, status, start_time, rid) VALUES (?1, ?2, ?3, 'running', ?4, ?5)",
            params![eid, job.job_id as i64, job.save(), now_ms(), rid.map(|r| r as i64)],
        )?;
        Ok(())
    }

    /// Records the terminal transition of a running job. `score` in the
    /// result must already be in the experiment's own units.
    pub fn job_finished(&self, eid: i64, result: &JobResult) -> Result<(), TrackingError> {
        let job = self.job(eid, result.job_id)?;
        if job.status != JobState::Running {
            return Err(TrackingError::DuplicateTransition {
                eid,
                jid: result.job_id,
                status: job.status.to_string(),
            });
        }
        let state = JobState::from(result.status);
        let score = if state == JobState::Finished { result.score } else { None };
        let end = now_ms().max(job.start_time);
        self.conn.execute(
            "UPDATE job SET status = ?3, score = ?4, aux_string = ?5, end_time = ?6,
                 completion_seq = (SELECT COALESCE(MAX(completion_seq), 0) + 1 FROM job WHERE eid = ?1)
             WHERE eid = ?1 AND jid = ?2 AND status = 'running'",
            params![eid, result.job_id as i64, state.as_str(), score, result.aux_string, end],
        )?;
        Ok(())
    }

    /// Marks every running job of `eid` interrupted, and the experiment failed
    /// if it was still running.
    pub fn mark_interrupted(&self, eid: i64) -> Result<usize, TrackingError> {
        let exp = self.experiment(eid)?;
        let tx = self.conn.unchecked_transaction()?;
        let now = now_ms();
        let n = tx.execute(
            "UPDATE job SET status = 'interrupted', end_time = MAX(start_time, ?2)
             WHERE eid = ?1 AND status = 'running'",
            params![eid, now],
        )?;
        if exp.status == ExperimentStatus::Running {
            tx.execute(
                "UPDATE experiment SET status = 'failed', end_time = MAX(COALESCE(start_time, ?2), ?2) WHERE eid = ?1",
                params![eid, now],
            )?;
        }
        tx.commit()?;
        Ok(n)
    }

    /// Recovers experiments left `running` by a process that no longer exists.
    pub fn recover_orphans(&self) -> Result<Vec<i64>, TrackingError> {
        let mut recovered = Vec::new();
        for eid in self.experiments()? {
            let exp = self.experiment(eid)?;
            if exp.status == ExperimentStatus::Running && exp.owner_pid.is_some_and(|p| !process_alive(p)) {
                self.mark_interrupted(eid)?;
                recovered.push(eid);
            }
        }
        Ok(recovered)
    }

    pub fn job(&self, eid: i64, jid: u64) -> Result<JobRecord, TrackingError> {
        let mut jobs = self.query_jobs("WHERE eid = ?1 AND jid = ?2", params![eid, jid as i64])?;
        jobs.pop().ok_or(TrackingError::UnknownJob { eid, jid })
    }

    /// All jobs of `eid` ordered by job id.
    pub fn jobs(&self, eid: i64) -> Result<Vec<JobRecord>, TrackingError> {
        self.experiment(eid)?;
        self.query_jobs("WHERE eid = ?1 ORDER BY jid", params![eid])
    }

    fn query_jobs(&self, clause: &str, args: impl rusqlite::Params) -> Result<Vec<JobRecord>, TrackingError> {
        let sql = format!(
            "SELECT eid, jid, job_config, score, status, start_time, end_time, rid, aux_string, completion_seq
             FROM job {clause}"
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let rows = stmt.query_map(args, |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, i64>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Option<f64>>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, i64>(5)?,
                r.get::<_, Option<i64>>(6)?,
                r.get::<_, Option<i64>>(7)?,
                r.get::<_, Option<String>>(8)?,
                r.get::<_, Option<i64>>(9)?,
            ))
        })?;
        rows.map(|row| {
            let (eid, jid, job_config, score, status, start_time, end_time, rid, aux_string, completion_seq) = row?;
            Ok(JobRecord {
                eid,
                jid: jid as u64,
                job_config,
                score,
                status: parse_col(status)?,
                start_time,
                end_time,
                rid: rid.map(|r| r as u64),
                aux_string,
                completion_seq,
            })
        })
        .collect()
    }

    /// Runs SQLite's integrity check; `Ok(())` when the file is sound.
    pub fn integrity_check(&self) -> Result<(), TrackingError> {
        let res: String = self.conn.query_row("PRAGMA integrity_check", [], |r| r.get(0))?;
        if res == "ok" {
            Ok(())
        } else {
            Err(TrackingError::Corrupt(res))
        }
    }
}

#[cfg(target_os = "linux")]
fn process_alive(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat.rsplit_once(')').map_or(true, |(_, rest)| !rest.trim_start().starts_with('Z')),
        Err(_) => false,
    }
}

#[cfg(not(target_os = "linux"))]
fn process_alive(_pid: u32) -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ResourceType;
    use indexmap::IndexMap;

    fn config() -> ExperimentConfig {
        ExperimentConfig::parse(
            r#"{"proposer":"random","script":"f.sh","n_samples":3,
                "parameter_config":[{"name":"x","range":[0,1],"type":"float"}]}"#,
        )
        .unwrap()
    }

    fn job(jid: u64) -> JobConfig {
        let values: IndexMap<_, _> = [("x".to_string(), crate::space::ParamValue::Float(0.5))].into_iter().collect();
        JobConfig::new(jid, values)
    }

    #[test]
    fn fresh_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/aup.db");
        let store = Store::open(&path).unwrap();
        assert_eq!(store.schema_version().unwrap(), SCHEMA_VERSION);
        assert!(store.experiments().unwrap().is_empty());
        let uid = store.ensure_user("alice").unwrap();
        assert_eq!(store.ensure_user("alice").unwrap(), uid);
        let eid = store.create_experiment(uid, &config()).unwrap();
        drop(store);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.experiments().unwrap(), vec![eid]);
        assert_eq!(store.experiment(eid).unwrap().config().unwrap(), config());
        assert_eq!(store.users().unwrap().len(), 1);
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aup.db");
        Store::open(&path).unwrap();
        let conn = Connection::open(&path).unwrap();
        conn.execute("UPDATE schema_version SET version = 99", []).unwrap();
        drop(conn);
        match Store::open(&path) {
            Err(TrackingError::VersionMismatch { found: 99, expected: SCHEMA_VERSION }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn job_transitions() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(&dir.path().join("aup.db")).unwrap();
        let uid = store.ensure_user("u").unwrap();
        let eid = store.create_experiment(uid, &config()).unwrap();
        store.start_experiment(eid, std::process::id()).unwrap();
        store
            .sync_resources(&[ResourceSlot {
                rid: 1,
                rtype: ResourceType::Cpu,
                locator: "0".into(),
                status: SlotStatus::Free,
            }])
            .unwrap();
        store.job_started(eid, &job(0), Some(1)).unwrap();
        assert!(matches!(store.job_started(eid, &job(0), Some(1)), Err(TrackingError::DuplicateJob { .. })));
        assert!(store.job_started(eid, &job(1), Some(7)).is_err(), "foreign key on rid");
        assert!(store.job_started(99, &job(1), None).is_err());
        store.job_finished(eid, &JobResult::finished(0, 0.125, Some("e=1".into()), 0.1)).unwrap();
        assert!(matches!(
            store.job_finished(eid, &JobResult::finished(0, 0.125, None, 0.1)),
            Err(TrackingError::DuplicateTransition { .. })
        ));
        let j = store.job(eid, 0).unwrap();
        assert_eq!((j.score, j.status, j.completion_seq), (Some(0.125), JobState::Finished, Some(1)));
        assert_eq!(j.aux_string.as_deref(), Some("e=1"));
        store.job_started(eid, &job(1), None).unwrap();
        store.job_finished(eid, &JobResult::failed(1, 0.0)).unwrap();
        assert_eq!(store.job(eid, 1).unwrap().score, None);
        store.job_started(eid, &job(2), None).unwrap();
        assert_eq!(store.mark_interrupted(eid).unwrap(), 1);
        assert_eq!(store.job(eid, 2).unwrap().status, JobState::Interrupted);
        assert_eq!(store.experiment(eid).unwrap().status, ExperimentStatus::Failed);
        store.integrity_check().unwrap();
    }

    #[test]
    fn stop_requests_require_running() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(&dir.path().join("aup.db")).unwrap();
        let uid = store.ensure_user("u").unwrap();
        let eid = store.create_experiment(uid, &config()).unwrap();
        assert!(store.request_stop(eid, StopMode::Drain).is_err());
        store.start_experiment(eid, 1).unwrap();
        store.request_stop(eid, StopMode::Kill).unwrap();
        assert_eq!(store.stop_request(eid).unwrap(), Some(StopMode::Kill));
        store.finish_experiment(eid, ExperimentStatus::Stopped).unwrap();
        assert!(store.request_stop(eid, StopMode::Drain).is_err());
        assert!(store.finish_experiment(eid, ExperimentStatus::Finished).is_err());
        assert!(matches!(store.experiment(42), Err(TrackingError::UnknownExperiment(42))));
        let rec = store.experiment(eid).unwrap();
        assert!(rec.end_time.unwrap() >= rec.start_time.unwrap());
    }
}
