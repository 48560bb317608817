//! Tree-structured Parzen estimator.
//!
//! Observations are split at the gamma quantile of their scores; each
//! dimension gets an independent density for the good set `l(x)` and the bad
//! set `g(x)`. Candidates are drawn from `l` and the one maximizing
//! `l(x) / g(x)` wins.

use crate::proposers::{sample_uniform, Proposal, Proposer, ProposerError, ProposerState};
use crate::space::{JobConfig, JobResult, ParamKind, ParamValue, SearchSpace, TpeOptions};
use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

/// Bandwidth floor, as a fraction of the normalized range.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Sizes of the good and bad sets for `n` observations: `ceil(gamma n)`
/// good, clamped so both sets are non-empty. Requires `n >= 2`.
pub fn split_sizes(n: usize, gamma: f64) -> (usize, usize) {
    assert!(n >= 2, "need two observations to split");
    let good = ((gamma * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let good = good.min(n - 1);
    (good, n - good)
}

#[derive(Debug, Clone)]
enum Density {
    /// Truncated Gaussian mixture on `[0, 1]`.
    Kde { centres: Vec<f64>, bandwidth: f64 },
    /// Smoothed frequency table.
    Categorical { probs: Vec<f64> },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Density {
    fn kde(points: &[f64]) -> Self {
        let n = points.len() as f64;
        let mean = points.iter().sum::<f64>() / n;
        let std = if points.len() > 1 {
            (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        // Scott-style factor for a univariate density.
        let bandwidth = (std * n.powf(-1.0 / 5.0)).max(MIN_BANDWIDTH);
        Density::Kde { centres: points.to_vec(), bandwidth }
    }

    fn categorical(indices: &[usize], k: usize) -> Self {
        let mut counts = vec![1.0; k];
        for &i in indices {
            counts[i] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Density::Categorical { probs: counts.into_iter().map(|c| c / total).collect() }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        match self {
            Density::Kde { centres, bandwidth } => {
                let h = *bandwidth;
                let log_norm = -(h * (2.0 * PI).sqrt()).ln();
                log_sum_exp(centres.iter().map(|c| {
                    let mass = std_normal_cdf((1.0 - c) / h) - std_normal_cdf(-c / h);
                    let z = (x - c) / h;
                    log_norm - 0.5 * z * z - mass.max(1e-300).ln()
                })) - (centres.len() as f64).ln()
            }
            Density::Categorical { probs } => probs[x as usize].ln(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Density::Kde { centres, bandwidth } => {
                let c = centres[rng.gen_range(0..centres.len())];
                let normal = Normal::new(c, *bandwidth).expect("positive bandwidth");
                for _ in 0..64 {
                    let x = normal.sample(rng);
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                c.clamp(0.0, 1.0)
            }
            Density::Categorical { probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
        }
    }
}

/// Good/bad densities fitted on one set of observations.
#[derive(Debug, Clone)]
pub struct TpeModel {
    space: SearchSpace,
    good: Vec<Density>,
    bad: Vec<Density>,
    n_good: usize,
    n_bad: usize,
}

impl TpeModel {
    /// Fits the model on `(config, score)` pairs (lower is better). Ties in
    /// score are ordered by job id. Returns `None` with fewer than two
    /// observations.
    pub fn fit(space: &SearchSpace, observations: &[(&JobConfig, f64)], gamma: f64) -> Option<Self> {
        if observations.len() < 2 {
            return None;
        }
        let mut sorted: Vec<&(&JobConfig, f64)> = observations.iter().collect();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.job_id.cmp(&b.0.job_id)));
        let (n_good, n_bad) = split_sizes(sorted.len(), gamma);
        let (good, bad) = sorted.split_at(n_good);
        let fit = |set: &[&(&JobConfig, f64)]| -> Vec<Density> {
            space
                .iter()
                .map(|p| match p.kind() {
                    ParamKind::Choice(values) => {
                        let idx: Vec<usize> =
                            set.iter().map(|(c, _)| p.choice_index(&c.values[p.name()]).expect("declared")).collect();
                        Density::categorical(&idx, values.len())
                    }
                    _ => {
                        let pts: Vec<f64> =
                            set.iter().map(|(c, _)| p.to_unit(&c.values[p.name()]).expect("numeric")).collect();
                        Density::kde(&pts)
                    }
                })
                .collect()
        };
        Some(Self { space: space.clone(), good: fit(good), bad: fit(bad), n_good, n_bad })
    }

    pub fn n_good(&self) -> usize {
        self.n_good
    }

    pub fn n_bad(&self) -> usize {
        self.n_bad
    }

    fn coords(&self, values: &IndexMap<String, ParamValue>) -> Vec<f64> {
        self.space
            .iter()
            .map(|p| match p.kind() {
                ParamKind::Choice(_) => p.choice_index(&values[p.name()]).expect("declared") as f64,
                _ => p.to_unit(&values[p.name()]).expect("numeric"),
            })
            .collect()
    }

    /// `log l(x) - log g(x)` summed over dimensions.
    pub fn log_ratio(&self, values: &IndexMap<String, ParamValue>) -> f64 {
        self.coords(values)
            .iter()
            .zip(self.good.iter().zip(&self.bad))
            .map(|(x, (l, g))| l.log_pdf(*x) - g.log_pdf(*x))
            .sum()
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> IndexMap<String, ParamValue> {
        self.space
            .iter()
            .zip(&self.good)
            .map(|(p, d)| {
                let x = d.sample(rng);
                let v = match p.kind() {
                    ParamKind::Choice(values) => ParamValue::Choice(values[x as usize].clone()),
                    _ => p.from_unit(x),
                };
                (p.name().to_string(), v)
            })
            .collect()
    }

    /// Draws `n_candidates` from `l` and returns the one with the best ratio.
    pub fn propose<R: Rng + ?Sized>(&self, n_candidates: usize, rng: &mut R) -> IndexMap<String, ParamValue> {
        let mut best: Option<(f64, IndexMap<String, ParamValue>)> = None;
        for _ in 0..n_candidates.max(1) {
            let cand = self.sample_one(rng);
            let score = self.log_ratio(&cand);
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, cand));
            }
        }
        best.expect("at least one candidate").1
    }
}

pub struct TpeProposer {
    state: ProposerState,
    options: TpeOptions,
}

impl TpeProposer {
    pub fn new(state: ProposerState, options: TpeOptions) -> Self {
        Self { state, options }
    }
}

impl Proposer for TpeProposer {
    fn get_param(&mut self) -> Proposal {
        if self.state.budget_left() == 0 {
            return Proposal::Done;
        }
        let space = self.state.space().clone();
        let model = if self.state.n_completed() >= self.options.n_startup {
            let obs: Vec<(&JobConfig, f64)> = self.state.completed().collect();
            TpeModel::fit(&space, &obs, self.options.gamma)
        } else {
            None
        };
        let values = match model {
            Some(m) => m.propose(self.options.n_candidates, self.state.rng()),
            None => sample_uniform(&space, self.state.rng()),
        };
        Proposal::Config(self.state.issue(values, None, BTreeMap::new()))
    }

    fn update(&mut self, result: &JobResult) -> Result<(), ProposerError> {
        self.state.record(result).map(|_| ())
    }

    fn finished(&self) -> bool {
        self.state.budget_left() == 0
    }

    fn state(&self) -> &ProposerState {
        &self.state
    }
}
