//! Search-space, experiment and job configuration types.
//!
//! Everything in here is immutable once constructed and validated, so the
//! values can be shared freely between the orchestrator and worker threads.

mod experiment;
mod job;

pub use experiment::{
    AlgorithmOptions, BanditOptions, BohbOptions, ExperimentConfig, GpOptions, GridOptions,
    ProposerKind, ProposerOptions, ResourceType, Target, TpeOptions,
};
pub use job::{JobConfig, JobConfigError, JobResult, JobStatus};

use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Default number of grid points for numeric parameters without `grid_n`.
pub const DEFAULT_GRID_N: usize = 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("configuration must be a JSON object")]
    NotAnObject,
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("parameter `{name}` has an inverted range [{lo}, {hi}]")]
    InvertedRange { name: String, lo: f64, hi: f64 },
    #[error("parameter `{name}` is an int but its bounds are not integers")]
    NonIntegerBound { name: String },
    #[error("choice parameter `{name}` has no values")]
    EmptyChoice { name: String },
    #[error("parameter name must be non-empty")]
    EmptyName,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("parameter_config must contain at least one parameter")]
    EmptySpace,
    #[error("parameter `{name}` has unknown type `{kind}` (expected float, int or choice)")]
    UnknownParameterType { name: String, kind: String },
    #[error("unknown proposer `{0}` (valid: {list})", list = ProposerKind::valid_names())]
    UnknownProposer(String),
    #[error("unknown resource type `{0}` (valid: cpu, gpu, node, passive)")]
    UnknownResource(String),
    #[error("unknown target `{0}` (valid: min, max)")]
    UnknownTarget(String),
    #[error("unknown proposer_options key `{key}` for proposer `{proposer}`")]
    UnknownOption { proposer: &'static str, key: String },
    #[error("invalid proposer option `{key}`: {reason}")]
    InvalidOption { key: String, reason: String },
}

/// A scalar value a choice parameter may take.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Atom {
    pub fn from_json(value: &Value) -> Option<Atom> {
        match value {
            Value::Bool(b) => Some(Atom::Bool(*b)),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Atom::Int(i))
                } else {
                    n.as_f64().map(Atom::Float)
                }
            }
            Value::String(s) => Some(Atom::Str(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Atom::Bool(b) => Value::Bool(*b),
            Atom::Int(i) => Value::from(*i),
            Atom::Float(f) => float_json(*f),
            Atom::Str(s) => Value::String(s.clone()),
        }
    }

    /// Numeric view used when a choice value has to be treated as a number
    /// (objective scripts, CSV export).
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Atom::Int(i) => Some(*i as f64),
            Atom::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Loose equality used when matching a loaded JSON value against the
    /// declared list: `1` and `1.0` name the same number.
    fn matches(&self, other: &Atom) -> bool {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Bool(b) => write!(f, "{b}"),
            Atom::Int(i) => write!(f, "{i}"),
            Atom::Float(x) => write!(f, "{x:?}"),
            Atom::Str(s) => f.write_str(s),
        }
    }
}

/// A concrete value assigned to one hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Float(f64),
    Int(i64),
    Choice(Atom),
}

impl ParamValue {
    pub fn to_json(&self) -> Value {
        match self {
            ParamValue::Float(f) => float_json(*f),
            ParamValue::Int(i) => Value::from(*i),
            ParamValue::Choice(a) => a.to_json(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(f) => Some(*f),
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Choice(a) => a.as_f64(),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Float(x) => write!(f, "{x:?}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Choice(a) => write!(f, "{a}"),
        }
    }
}

/// JSON number for a float which keeps a trailing `.0` on integral values,
/// so `-5.0` is written as `-5.0` rather than `-5`.
pub(crate) fn float_json(f: f64) -> Value {
    serde_json::Number::from_f64(f)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Float { lo: f64, hi: f64 },
    Int { lo: i64, hi: i64 },
    Choice(Vec<Atom>),
}

impl ParamKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamKind::Float { .. } => "float",
            ParamKind::Int { .. } => "int",
            ParamKind::Choice(_) => "choice",
        }
    }
}

/// One named, bounded dimension of the search space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    name: String,
    kind: ParamKind,
    grid_n: Option<usize>,
}

impl ParameterSpec {
    pub fn float(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self, ConfigError> {
        Self::new(name, ParamKind::Float { lo, hi }, None)
    }

    pub fn int(name: impl Into<String>, lo: i64, hi: i64) -> Result<Self, ConfigError> {
        Self::new(name, ParamKind::Int { lo, hi }, None)
    }

    pub fn choice(name: impl Into<String>, values: Vec<Atom>) -> Result<Self, ConfigError> {
        Self::new(name, ParamKind::Choice(values), None)
    }

    pub fn new(
        name: impl Into<String>,
        kind: ParamKind,
        grid_n: Option<usize>,
    ) -> Result<Self, ConfigError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ConfigError::EmptyName);
        }
        match &kind {
            ParamKind::Float { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(ConfigError::InvalidField {
                        field: format!("{name}.range"),
                        reason: "bounds must be finite".into(),
                    });
                }
                if lo > hi {
                    return Err(ConfigError::InvertedRange { name, lo: *lo, hi: *hi });
                }
            }
            ParamKind::Int { lo, hi } => {
                if lo > hi {
                    return Err(ConfigError::InvertedRange {
                        name,
                        lo: *lo as f64,
                        hi: *hi as f64,
                    });
                }
            }
            ParamKind::Choice(values) => {
                if values.is_empty() {
                    return Err(ConfigError::EmptyChoice { name });
                }
            }
        }
        if grid_n == Some(0) {
            return Err(ConfigError::InvalidField {
                field: format!("{name}.grid_n"),
                reason: "must be a positive integer".into(),
            });
        }
        Ok(Self { name, kind, grid_n })
    }

    pub fn with_grid_n(mut self, n: usize) -> Self {
        assert!(n > 0, "grid_n must be positive");
        self.grid_n = Some(n);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ParamKind {
        &self.kind
    }

    pub fn grid_n(&self) -> Option<usize> {
        self.grid_n
    }

    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.kind, value) {
            (ParamKind::Float { lo, hi }, ParamValue::Float(v)) => *lo <= *v && *v <= *hi,
            (ParamKind::Int { lo, hi }, ParamValue::Int(v)) => *lo <= *v && *v <= *hi,
            (ParamKind::Choice(values), ParamValue::Choice(a)) => values.contains(a),
            _ => false,
        }
    }

    /// Interprets a JSON value as this parameter's value, checking type and range.
    pub fn value_from_json(&self, value: &Value) -> Result<ParamValue, JobConfigError> {
        let wrong = || JobConfigError::WrongType {
            name: self.name.clone(),
            expected: self.kind.type_name(),
        };
        let parsed = match &self.kind {
            ParamKind::Float { .. } => ParamValue::Float(value.as_f64().ok_or_else(wrong)?),
            ParamKind::Int { .. } => ParamValue::Int(value.as_i64().ok_or_else(wrong)?),
            ParamKind::Choice(values) => {
                let atom = Atom::from_json(value).ok_or_else(wrong)?;
                let found = values.iter().find(|v| v.matches(&atom)).ok_or_else(|| {
                    JobConfigError::OutOfRange {
                        name: self.name.clone(),
                        value: value.to_string(),
                    }
                })?;
                ParamValue::Choice(found.clone())
            }
        };
        if !self.contains(&parsed) {
            return Err(JobConfigError::OutOfRange {
                name: self.name.clone(),
                value: value.to_string(),
            });
        }
        Ok(parsed)
    }

    /// Maps a point `u` of the unit interval onto this parameter's domain.
    /// Ints round to the nearest lattice point, choices split `[0, 1)` into
    /// equal cells.
    pub fn from_unit(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            ParamKind::Float { lo, hi } => ParamValue::Float((lo + u * (hi - lo)).clamp(*lo, *hi)),
            ParamKind::Int { lo, hi } => {
                let span = (*hi - *lo) as f64;
                let v = *lo + (u * span).round() as i64;
                ParamValue::Int(v.clamp(*lo, *hi))
            }
            ParamKind::Choice(values) => {
                let idx = ((u * values.len() as f64) as usize).min(values.len() - 1);
                ParamValue::Choice(values[idx].clone())
            }
        }
    }

    /// Normalized position of a numeric value in `[0, 1]`; degenerate ranges map to `0.5`.
    pub fn to_unit(&self, value: &ParamValue) -> Option<f64> {
        match (&self.kind, value) {
            (ParamKind::Float { lo, hi }, ParamValue::Float(v)) => Some(unit(*v, *lo, *hi)),
            (ParamKind::Int { lo, hi }, ParamValue::Int(v)) => {
                Some(unit(*v as f64, *lo as f64, *hi as f64))
            }
            _ => None,
        }
    }

    /// Index of a choice value in the declared list.
    pub fn choice_index(&self, value: &ParamValue) -> Option<usize> {
        match (&self.kind, value) {
            (ParamKind::Choice(values), ParamValue::Choice(a)) => {
                values.iter().position(|v| v == a)
            }
            _ => None,
        }
    }

    pub(crate) fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let obj = value.as_object().ok_or_else(|| ConfigError::InvalidField {
            field: "parameter_config".into(),
            reason: "each entry must be an object".into(),
        })?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "name" | "range" | "type" | "grid_n") {
                return Err(ConfigError::UnknownField(format!("parameter_config.{key}")));
            }
        }
        let name = obj
            .get("name")
            .ok_or(ConfigError::MissingField("parameter_config.name"))?
            .as_str()
            .ok_or_else(|| ConfigError::InvalidField {
                field: "parameter_config.name".into(),
                reason: "must be a string".into(),
            })?
            .to_string();
        let kind_name = obj
            .get("type")
            .ok_or(ConfigError::MissingField("parameter_config.type"))?
            .as_str()
            .ok_or_else(|| ConfigError::InvalidField {
                field: format!("{name}.type"),
                reason: "must be a string".into(),
            })?;
        let range = obj
            .get("range")
            .ok_or(ConfigError::MissingField("parameter_config.range"))?
            .as_array()
            .ok_or_else(|| ConfigError::InvalidField {
                field: format!("{name}.range"),
                reason: "must be an array".into(),
            })?;
        let grid_n = match obj.get("grid_n") {
            None => None,
            Some(v) => Some(v.as_u64().filter(|n| *n > 0).ok_or_else(|| {
                ConfigError::InvalidField {
                    field: format!("{name}.grid_n"),
                    reason: "must be a positive integer".into(),
                }
            })? as usize),
        };
        let bounds = |range: &[Value]| -> Result<(f64, f64), ConfigError> {
            match range {
                [lo, hi] => match (lo.as_f64(), hi.as_f64()) {
                    (Some(lo), Some(hi)) => Ok((lo, hi)),
                    _ => Err(ConfigError::InvalidField {
                        field: format!("{name}.range"),
                        reason: "bounds must be numbers".into(),
                    }),
                },
                _ => Err(ConfigError::InvalidField {
                    field: format!("{name}.range"),
                    reason: "must be [lo, hi]".into(),
                }),
            }
        };
        let kind = match kind_name {
            "float" => {
                let (lo, hi) = bounds(range)?;
                ParamKind::Float { lo, hi }
            }
            "int" => {
                let (lo, hi) = bounds(range)?;
                if lo.fract() != 0.0 || hi.fract() != 0.0 {
                    return Err(ConfigError::NonIntegerBound { name });
                }
                ParamKind::Int { lo: lo as i64, hi: hi as i64 }
            }
            "choice" => {
                let values = range
                    .iter()
                    .map(|v| {
                        Atom::from_json(v).ok_or_else(|| ConfigError::InvalidField {
                            field: format!("{name}.range"),
                            reason: "choice values must be scalars".into(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ParamKind::Choice(values)
            }
            other => {
                return Err(ConfigError::UnknownParameterType {
                    name,
                    kind: other.to_string(),
                })
            }
        };
        Self::new(name, kind, grid_n)
    }

    pub(crate) fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        let range = match &self.kind {
            ParamKind::Float { lo, hi } => vec![float_json(*lo), float_json(*hi)],
            ParamKind::Int { lo, hi } => vec![Value::from(*lo), Value::from(*hi)],
            ParamKind::Choice(values) => values.iter().map(Atom::to_json).collect(),
        };
        obj.insert("range".into(), Value::Array(range));
        obj.insert("type".into(), Value::String(self.kind.type_name().into()));
        if let Some(n) = self.grid_n {
            obj.insert("grid_n".into(), Value::from(n));
        }
        Value::Object(obj)
    }
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Ordered, non-empty list of uniquely named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    params: Vec<ParameterSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParameterSpec>) -> Result<Self, ConfigError> {
        if params.is_empty() {
            return Err(ConfigError::EmptySpace);
        }
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name()) {
                return Err(ConfigError::DuplicateParameter(p.name().to_string()));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn get(&self, name: &str) -> Option<&ParameterSpec> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.params.iter()
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let entries = value.as_array().ok_or_else(|| ConfigError::InvalidField {
            field: "parameter_config".into(),
            reason: "must be an array".into(),
        })?;
        let params = entries
            .iter()
            .map(ParameterSpec::from_json)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(params)
    }

    pub(crate) fn to_json(&self) -> Value {
        Value::Array(self.params.iter().map(ParameterSpec::to_json).collect())
    }
}
