use super::{ParamValue, SearchSpace};
use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use thiserror::Error;

pub const JOB_ID_KEY: &str = "job_id";
pub const N_ITERATIONS_KEY: &str = "n_iterations";

#[derive(Debug, Error)]
pub enum JobConfigError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("job config must be a JSON object")]
    NotAnObject,
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("missing or invalid `job_id`")]
    MissingJobId,
    #[error("`n_iterations` must be a positive integer")]
    InvalidIterations,
    #[error("value {value} is outside the range of `{name}`")]
    OutOfRange { name: String, value: String },
    #[error("parameter `{name}` expects a {expected} value")]
    WrongType { name: String, expected: &'static str },
    #[error("aux key `{0}` collides with a reserved or parameter key")]
    ReservedKey(String),
}

/// One concrete hyperparameter assignment handed to a training script.
#[derive(Debug, Clone, PartialEq)]
pub struct JobConfig {
    pub job_id: u64,
    pub values: IndexMap<String, ParamValue>,
    /// Training budget for budget-aware proposers.
    pub n_iterations: Option<u64>,
    /// Extra proposer-private fields, e.g. `resume_from`.
    pub aux: BTreeMap<String, Value>,
}

impl JobConfig {
    pub fn new(job_id: u64, values: IndexMap<String, ParamValue>) -> Self {
        Self { job_id, values, n_iterations: None, aux: BTreeMap::new() }
    }

    pub fn with_iterations(mut self, n: u64) -> Self {
        self.n_iterations = Some(n);
        self
    }

    pub fn with_aux(mut self, key: impl Into<String>, value: Value) -> Self {
        self.aux.insert(key.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.get(name)
    }

    /// Checks every parameter of `space` is present exactly once and in range.
    pub fn validate(&self, space: &SearchSpace) -> Result<(), JobConfigError> {
        for p in space.iter() {
            let v = self
                .values
                .get(p.name())
                .ok_or_else(|| JobConfigError::MissingParameter(p.name().to_string()))?;
            if !p.contains(v) {
                return Err(JobConfigError::OutOfRange {
                    name: p.name().to_string(),
                    value: v.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in &self.values {
            m.insert(k.clone(), v.to_json());
        }
        m.insert(JOB_ID_KEY.into(), Value::from(self.job_id));
        if let Some(n) = self.n_iterations {
            m.insert(N_ITERATIONS_KEY.into(), Value::from(n));
        }
        for (k, v) in &self.aux {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }

    /// Flat JSON object with `", "` and `": "` separators, e.g.
    /// `{"x": -5.0, "y": 5.0, "job_id": 0}`.
    pub fn save(&self) -> String {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SpacedFormatter);
        self.to_json().serialize(&mut ser).expect("in-memory serialization");
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    /// Parses a flat job-config object, validating every value against `space`.
    /// Keys that are neither parameters, `job_id` nor `n_iterations` land in `aux`.
    pub fn load(text: &str, space: &SearchSpace) -> Result<Self, JobConfigError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json(&value, space)
    }

    pub fn from_json(value: &Value, space: &SearchSpace) -> Result<Self, JobConfigError> {
        let obj = value.as_object().ok_or(JobConfigError::NotAnObject)?;
        let job_id = obj
            .get(JOB_ID_KEY)
            .and_then(Value::as_u64)
            .ok_or(JobConfigError::MissingJobId)?;
        let mut values = IndexMap::with_capacity(space.dim());
        for p in space.iter() {
            let raw = obj
                .get(p.name())
                .ok_or_else(|| JobConfigError::MissingParameter(p.name().to_string()))?;
            values.insert(p.name().to_string(), p.value_from_json(raw)?);
        }
        let n_iterations = match obj.get(N_ITERATIONS_KEY) {
            None => None,
            Some(v) => Some(
                v.as_u64()
                    .filter(|n| *n >= 1)
                    .ok_or(JobConfigError::InvalidIterations)?,
            ),
        };
        let aux = obj
            .iter()
            .filter(|(k, _)| {
                k.as_str() != JOB_ID_KEY && k.as_str() != N_ITERATIONS_KEY && space.get(k).is_none()
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self { job_id, values, n_iterations, aux })
    }
}

struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobStatus {
    Finished,
    Failed,
    Killed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Finished => "finished",
            JobStatus::Failed => "failed",
            JobStatus::Killed => "killed",
        }
    }
}

impl FromStr for JobStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "finished" => Ok(JobStatus::Finished),
            "failed" => Ok(JobStatus::Failed),
            "killed" => Ok(JobStatus::Killed),
            other => Err(format!("unknown job status `{other}`")),
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one job. `score` is `Some` iff `status` is `Finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub job_id: u64,
    pub score: Option<f64>,
    pub aux_string: Option<String>,
    /// Seconds.
    pub wall_time: f64,
    pub status: JobStatus,
}

impl JobResult {
    /// A non-finite score turns the result into a failure.
    pub fn finished(job_id: u64, score: f64, aux_string: Option<String>, wall_time: f64) -> Self {
        if score.is_finite() {
            Self { job_id, score: Some(score), aux_string, wall_time, status: JobStatus::Finished }
        } else {
            Self { job_id, score: None, aux_string, wall_time, status: JobStatus::Failed }
        }
    }

    pub fn failed(job_id: u64, wall_time: f64) -> Self {
        Self { job_id, score: None, aux_string: None, wall_time, status: JobStatus::Failed }
    }

    pub fn killed(job_id: u64, wall_time: f64) -> Self {
        Self { job_id, score: None, aux_string: None, wall_time, status: JobStatus::Killed }
    }
}
