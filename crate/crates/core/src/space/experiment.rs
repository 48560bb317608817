use super::{ConfigError, SearchSpace};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProposerKind {
    Random,
    Grid,
    GpEi,
    Tpe,
    HyperBand,
    Bohb,
}

impl ProposerKind {
    pub const ALL: [ProposerKind; 6] = [
        ProposerKind::Random,
        ProposerKind::Grid,
        ProposerKind::GpEi,
        ProposerKind::Tpe,
        ProposerKind::HyperBand,
        ProposerKind::Bohb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProposerKind::Random => "random",
            ProposerKind::Grid => "grid",
            ProposerKind::GpEi => "gp_ei",
            ProposerKind::Tpe => "tpe",
            ProposerKind::HyperBand => "hyperband",
            ProposerKind::Bohb => "bohb",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
    }

    pub fn is_budgeted(self) -> bool {
        matches!(self, ProposerKind::HyperBand | ProposerKind::Bohb)
    }

    fn option_keys(self) -> &'static [&'static str] {
        match self {
            ProposerKind::Random => &["random_seed"],
            ProposerKind::Grid => &["random_seed", "max_grid"],
            ProposerKind::GpEi => &["random_seed", "n_candidates", "n_restarts"],
            ProposerKind::Tpe => &["random_seed", "engine", "gamma", "n_startup", "n_candidates"],
            ProposerKind::HyperBand => &["random_seed", "max_budget", "min_budget", "eta"],
            ProposerKind::Bohb => &[
                "random_seed",
                "max_budget",
                "min_budget",
                "eta",
                "rho",
                "min_points",
                "gamma",
                "n_candidates",
            ],
        }
    }
}

impl FromStr for ProposerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "random" => ProposerKind::Random,
            "grid" => ProposerKind::Grid,
            "gp_ei" | "spearmint" => ProposerKind::GpEi,
            "tpe" | "hyperopt" => ProposerKind::Tpe,
            "hyperband" => ProposerKind::HyperBand,
            "bohb" => ProposerKind::Bohb,
            other => return Err(ConfigError::UnknownProposer(other.to_string())),
        })
    }
}

impl fmt::Display for ProposerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Cpu,
    Gpu,
    Node,
    Passive,
}

impl ResourceType {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceType::Cpu => "cpu",
            ResourceType::Gpu => "gpu",
            ResourceType::Node => "node",
            ResourceType::Passive => "passive",
        }
    }
}

impl FromStr for ResourceType {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cpu" => ResourceType::Cpu,
            "gpu" => ResourceType::Gpu,
            "node" => ResourceType::Node,
            "passive" => ResourceType::Passive,
            other => return Err(ConfigError::UnknownResource(other.to_string())),
        })
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Direction of optimization. Proposers always minimize; `Max` scores are
/// negated on the way in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    #[default]
    Min,
    Max,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Min => "min",
            Target::Max => "max",
        }
    }

    /// Maps a raw score to the minimization scale.
    pub fn normalize(self, score: f64) -> f64 {
        match self {
            Target::Min => score,
            Target::Max => -score,
        }
    }

    /// True if `a` is strictly better than `b` in raw units.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.normalize(a) < self.normalize(b)
    }
}

impl FromStr for Target {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Target::Min),
            "max" => Ok(Target::Max),
            other => Err(ConfigError::UnknownTarget(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub max_grid: u64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { max_grid: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpOptions {
    pub n_candidates: usize,
    pub n_restarts: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self { n_candidates: 1000, n_restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpeOptions {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeOptions {
    fn default() -> Self {
        Self { gamma: 0.25, n_startup: 20, n_candidates: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditOptions {
    pub max_budget: u64,
    pub min_budget: u64,
    pub eta: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BohbOptions {
    pub bandit: BanditOptions,
    pub rho: f64,
    pub min_points: usize,
    pub gamma: f64,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmOptions {
    Random,
    Grid(GridOptions),
    GpEi(GpOptions),
    Tpe(TpeOptions),
    HyperBand(BanditOptions),
    Bohb(BohbOptions),
}

/// Validated per-proposer settings with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposerOptions {
    pub random_seed: u64,
    pub algorithm: AlgorithmOptions,
}

impl ProposerOptions {
    pub fn kind(&self) -> ProposerKind {
        match self.algorithm {
            AlgorithmOptions::Random => ProposerKind::Random,
            AlgorithmOptions::Grid(_) => ProposerKind::Grid,
            AlgorithmOptions::GpEi(_) => ProposerKind::GpEi,
            AlgorithmOptions::Tpe(_) => ProposerKind::Tpe,
            AlgorithmOptions::HyperBand(_) => ProposerKind::HyperBand,
            AlgorithmOptions::Bohb(_) => ProposerKind::Bohb,
        }
    }

    /// Options for `kind` with every default applied; bandit proposers get
    /// `max_budget` as a placeholder since it has no natural default.
    pub fn defaults(kind: ProposerKind, dim: usize, max_budget: u64) -> Self {
        let bandit = BanditOptions { max_budget, min_budget: 1, eta: 3 };
        let tpe = TpeOptions::default();
        let algorithm = match kind {
            ProposerKind::Random => AlgorithmOptions::Random,
            ProposerKind::Grid => AlgorithmOptions::Grid(GridOptions::default()),
            ProposerKind::GpEi => AlgorithmOptions::GpEi(GpOptions::default()),
            ProposerKind::Tpe => AlgorithmOptions::Tpe(tpe),
            ProposerKind::HyperBand => AlgorithmOptions::HyperBand(bandit),
            ProposerKind::Bohb => AlgorithmOptions::Bohb(BohbOptions {
                bandit,
                rho: 1.0 / 3.0,
                min_points: dim + 2,
                gamma: tpe.gamma,
                n_candidates: tpe.n_candidates,
            }),
        };
        Self { random_seed: 0, algorithm }
    }

    fn parse(kind: ProposerKind, raw: Option<&Value>, dim: usize) -> Result<Self, ConfigError> {
        let empty = Map::new();
        let map = match raw {
            None | Some(Value::Null) => &empty,
            Some(Value::Object(m)) => m,
            Some(_) => {
                return Err(ConfigError::InvalidField {
                    field: "proposer_options".into(),
                    reason: "must be an object".into(),
                })
            }
        };
        let allowed = kind.option_keys();
        if let Some(key) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::UnknownOption { proposer: kind.as_str(), key: key.clone() });
        }
        let opts = OptionReader(map);
        let random_seed = opts.u64("random_seed")?.unwrap_or(0);
        let tpe_defaults = TpeOptions::default();
        let bandit = || -> Result<BanditOptions, ConfigError> {
            let max_budget = opts.u64("max_budget")?.ok_or_else(|| ConfigError::InvalidOption {
                key: "max_budget".into(),
                reason: format!("required for proposer `{kind}`"),
            })?;
            let min_budget = opts.u64("min_budget")?.unwrap_or(1);
            let eta = opts.u64("eta")?.unwrap_or(3);
            if min_budget < 1 {
                return Err(opts.invalid("min_budget", "must be at least 1"));
            }
            if max_budget < min_budget {
                return Err(opts.invalid("max_budget", "must be at least min_budget"));
            }
            if eta < 2 {
                return Err(opts.invalid("eta", "must be at least 2"));
            }
            Ok(BanditOptions { max_budget, min_budget, eta })
        };
        let gamma = || -> Result<f64, ConfigError> {
            let g = opts.f64("gamma")?.unwrap_or(tpe_defaults.gamma);
            if !(g > 0.0 && g < 1.0) {
                return Err(opts.invalid("gamma", "must lie in (0, 1)"));
            }
            Ok(g)
        };
        let algorithm = match kind {
            ProposerKind::Random => AlgorithmOptions::Random,
            ProposerKind::Grid => {
                let max_grid = opts.positive("max_grid")?.unwrap_or(GridOptions::default().max_grid);
                AlgorithmOptions::Grid(GridOptions { max_grid })
            }
            ProposerKind::GpEi => {
                let d = GpOptions::default();
                AlgorithmOptions::GpEi(GpOptions {
                    n_candidates: opts.positive("n_candidates")?.map_or(d.n_candidates, |v| v as usize),
                    n_restarts: opts.positive("n_restarts")?.map_or(d.n_restarts, |v| v as usize),
                })
            }
            ProposerKind::Tpe => {
                if let Some(engine) = map.get("engine") {
                    if engine.as_str() != Some("tpe") {
                        return Err(opts.invalid("engine", "only \"tpe\" is supported"));
                    }
                }
                AlgorithmOptions::Tpe(TpeOptions {
                    gamma: gamma()?,
                    n_startup: opts.u64("n_startup")?.map_or(tpe_defaults.n_startup, |v| v as usize),
                    n_candidates: opts
                        .positive("n_candidates")?
                        .map_or(tpe_defaults.n_candidates, |v| v as usize),
                })
            }
            ProposerKind::HyperBand => AlgorithmOptions::HyperBand(bandit()?),
            ProposerKind::Bohb => {
                let rho = opts.f64("rho")?.unwrap_or(1.0 / 3.0);
                if !(0.0..=1.0).contains(&rho) {
                    return Err(opts.invalid("rho", "must lie in [0, 1]"));
                }
                let min_points = opts.u64("min_points")?.map_or(dim + 2, |v| v as usize);
                if min_points < 2 {
                    return Err(opts.invalid("min_points", "must be at least 2"));
                }
                AlgorithmOptions::Bohb(BohbOptions {
                    bandit: bandit()?,
                    rho,
                    min_points,
                    gamma: gamma()?,
                    n_candidates: opts
                        .positive("n_candidates")?
                        .map_or(tpe_defaults.n_candidates, |v| v as usize),
                })
            }
        };
        Ok(Self { random_seed, algorithm })
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("random_seed".into(), Value::from(self.random_seed));
        let bandit = |m: &mut Map<String, Value>, b: &BanditOptions| {
            m.insert("max_budget".into(), Value::from(b.max_budget));
            m.insert("min_budget".into(), Value::from(b.min_budget));
            m.insert("eta".into(), Value::from(b.eta));
        };
        match &self.algorithm {
            AlgorithmOptions::Random => {}
            AlgorithmOptions::Grid(g) => {
                m.insert("max_grid".into(), Value::from(g.max_grid));
            }
            AlgorithmOptions::GpEi(g) => {
                m.insert("n_candidates".into(), Value::from(g.n_candidates));
                m.insert("n_restarts".into(), Value::from(g.n_restarts));
            }
            AlgorithmOptions::Tpe(t) => {
                m.insert("engine".into(), Value::from("tpe"));
                m.insert("gamma".into(), super::float_json(t.gamma));
                m.insert("n_startup".into(), Value::from(t.n_startup));
                m.insert("n_candidates".into(), Value::from(t.n_candidates));
            }
            AlgorithmOptions::HyperBand(b) => bandit(&mut m, b),
            AlgorithmOptions::Bohb(b) => {
                bandit(&mut m, &b.bandit);
                m.insert("rho".into(), super::float_json(b.rho));
                m.insert("min_points".into(), Value::from(b.min_points));
                m.insert("gamma".into(), super::float_json(b.gamma));
                m.insert("n_candidates".into(), Value::from(b.n_candidates));
            }
        }
        Value::Object(m)
    }
}

struct OptionReader<'a>(&'a Map<String, Value>);

impl OptionReader<'_> {
    fn invalid(&self, key: &str, reason: &str) -> ConfigError {
        ConfigError::InvalidOption { key: key.into(), reason: reason.into() }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| self.invalid(key, "must be a non-negative integer")),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.u64(key)? {
            Some(0) => Err(self.invalid(key, "must be positive")),
            v => Ok(v),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.invalid(key, "must be a number")),
        }
    }
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub script: PathBuf,
    pub resource: ResourceType,
    pub n_parallel: usize,
    pub target: Target,
    pub space: SearchSpace,
    pub n_samples: usize,
    pub options: ProposerOptions,
    pub workdir: Option<PathBuf>,
    /// Per-job wall clock limit in seconds.
    pub timeout: Option<f64>,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "proposer",
    "script",
    "resource",
    "n_parallel",
    "target",
    "parameter_config",
    "n_samples",
    "proposer_options",
    "workdir",
    "timeout",
];

impl ExperimentConfig {
    pub fn proposer(&self) -> ProposerKind {
        self.options.kind()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let obj = value.as_object().ok_or(ConfigError::NotAnObject)?;
        if let Some(key) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownField(key.clone()));
        }
        let string = |key: &'static str| -> Result<Option<&str>, ConfigError> {
            match obj.get(key) {
                None => Ok(None),
                Some(v) => v.as_str().map(Some).ok_or_else(|| ConfigError::InvalidField {
                    field: key.into(),
                    reason: "must be a string".into(),
                }),
            }
        };
        let positive = |key: &'static str| -> Result<Option<usize>, ConfigError> {
            match obj.get(key) {
                None => Ok(None),
                Some(v) => v
                    .as_u64()
                    .filter(|n| *n >= 1)
                    .map(|n| Some(n as usize))
                    .ok_or_else(|| ConfigError::InvalidField {
                        field: key.into(),
                        reason: "must be a positive integer".into(),
                    }),
            }
        };

        let kind: ProposerKind = string("proposer")?
            .ok_or(ConfigError::MissingField("proposer"))?
            .parse()?;
        let script = PathBuf::from(string("script")?.ok_or(ConfigError::MissingField("script"))?);
        let space = SearchSpace::from_json(
            obj.get("parameter_config")
                .ok_or(ConfigError::MissingField("parameter_config"))?,
        )?;
        let n_samples = positive("n_samples")?.ok_or(ConfigError::MissingField("n_samples"))?;
        let resource = string("resource")?.map_or(Ok(ResourceType::Cpu), str::parse)?;
        let target = string("target")?.map_or(Ok(Target::Min), str::parse)?;
        let n_parallel = positive("n_parallel")?.unwrap_or(1);
        let options = ProposerOptions::parse(kind, obj.get("proposer_options"), space.dim())?;
        let workdir = string("workdir")?.map(PathBuf::from);
        let timeout = match obj.get("timeout") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().filter(|t| *t > 0.0).ok_or_else(|| {
                ConfigError::InvalidField {
                    field: "timeout".into(),
                    reason: "must be a positive number of seconds".into(),
                }
            })?),
        };
        Ok(Self {
            script,
            resource,
            n_parallel,
            target,
            space,
            n_samples,
            options,
            workdir,
            timeout,
        })
    }

    /// Canonical JSON form, keys in the documented order with every default explicit.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("proposer".into(), Value::from(self.proposer().as_str()));
        m.insert("script".into(), Value::from(self.script.to_string_lossy().into_owned()));
        m.insert("resource".into(), Value::from(self.resource.as_str()));
        m.insert("n_parallel".into(), Value::from(self.n_parallel));
        m.insert("target".into(), Value::from(self.target.as_str()));
        m.insert("parameter_config".into(), self.space.to_json());
        m.insert("n_samples".into(), Value::from(self.n_samples));
        m.insert("proposer_options".into(), self.options.to_json());
        if let Some(w) = &self.workdir {
            m.insert("workdir".into(), Value::from(w.to_string_lossy().into_owned()));
        }
        if let Some(t) = self.timeout {
            m.insert("timeout".into(), super::float_json(t));
        }
        Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serializes")
    }
}
