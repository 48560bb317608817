//! Gaussian-process surrogate with an anisotropic squared-exponential kernel
//! and the expected-improvement acquisition.

use super::encode::{halton, Encoder};
use crate::proposers::{sample_uniform, Proposal, Proposer, ProposerError, ProposerState};
use crate::space::{GpOptions, JobResult, ParamValue};
use indexmap::IndexMap;
use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.605170185988091, 2.302585092994046); // ln 1e-2, ln 10
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-6.907755278982137, 6.907755278982137); // ln 1e-3, ln 1e3
const LOG_NOISE_BOUNDS: (f64, f64) = (-18.420680743952367, 0.0); // ln 1e-8, ln 1

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("cannot fit a GP without observations")]
    NoData,
    #[error("inputs have inconsistent dimension")]
    DimensionMismatch,
    #[error(
        "kernel matrix ({n}x{n}) not positive definite after jitter {jitter:e} \
         (diagonal range [{min_diag:e}, {max_diag:e}])"
    )]
    Singular { n: usize, jitter: f64, min_diag: f64, max_diag: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn new(signal_var: f64, length_scales: Vec<f64>, noise_var: f64) -> Self {
        Self { signal_var, length_scales, noise_var }
    }

    /// `[ln l_1, .., ln l_d, ln signal_var, ln noise_var]`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_var: theta[d].exp(),
            noise_var: theta[d + 1].exp(),
        }
    }

    /// `k(a, b) = s^2 exp(-1/2 sum_i (a_i - b_i)^2 / l_i^2)`.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| (x - y).powi(2) / (l * l))
            .sum();
        self.signal_var * (-0.5 * r2).exp()
    }
}

fn signal_matrix(x: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| params.kernel(&x[i], &x[j]))
}

/// Cholesky of `K + noise I`, escalating diagonal jitter from 1e-10 by
/// doubling up to 1e-4. Returns the factor and the jitter that was needed.
fn factor(k_signal: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = k_signal.nrows();
    let mut base = k_signal.clone();
    for i in 0..n {
        base[(i, i)] += noise;
    }
    if let Some(c) = Cholesky::new(base.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 2.0;
    }
    let diag = base.diagonal();
    Err(GpError::Singular {
        n,
        jitter: jitter / 2.0,
        min_diag: diag.min(),
        max_diag: diag.max(),
    })
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], params: &KernelParams) -> Result<(), GpError> {
    if x.is_empty() {
        return Err(GpError::NoData);
    }
    let d = params.length_scales.len();
    if x.len() != y.len() || x.iter().any(|r| r.len() != d) {
        return Err(GpError::DimensionMismatch);
    }
    Ok(())
}

/// Log marginal likelihood of `y` under a zero-mean GP prior.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], params: &KernelParams) -> Result<f64, GpError> {
    check_inputs(x, y, params)?;
    let (chol, _) = factor(&signal_matrix(x, params), params.noise_var)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let n = y.len() as f64;
    Ok(-0.5 * yv.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln())
}

/// Gradient of the log marginal likelihood with respect to
/// [`KernelParams::to_log`] coordinates.
pub fn log_marginal_likelihood_grad(
    x: &[Vec<f64>],
    y: &[f64],
    params: &KernelParams,
) -> Result<Vec<f64>, GpError> {
    check_inputs(x, y, params)?;
    let n = x.len();
    let d = params.length_scales.len();
    let k_signal = signal_matrix(x, params);
    let (chol, _) = factor(&k_signal, params.noise_var)?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let w = &alpha * alpha.transpose() - chol.inverse();

    let mut grad = vec![0.0; d + 2];
    for a in 0..n {
        for b in 0..n {
            let wk = w[(a, b)] * k_signal[(a, b)];
            for (i, l) in params.length_scales.iter().enumerate() {
                grad[i] += wk * (x[a][i] - x[b][i]).powi(2) / (l * l);
            }
            grad[d] += wk;
        }
        grad[d + 1] += w[(a, a)] * params.noise_var;
    }
    Ok(grad.into_iter().map(|g| 0.5 * g).collect())
}

/// Minimization-form expected improvement over the incumbent `best`.
/// With `sigma = 0` this degenerates to `max(best - mu, 0)`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mu;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let cdf = 0.5 * erfc(-z / SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    (gap * cdf + sigma * pdf).max(0.0)
}

/// A fitted GP over standardized targets.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    y: Vec<f64>,
    params: KernelParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpSurrogate {
    /// Builds the posterior for fixed kernel hyperparameters.
    pub fn with_params(x: Vec<Vec<f64>>, scores: &[f64], params: KernelParams) -> Result<Self, GpError> {
        check_inputs(&x, scores, &params)?;
        let (y_mean, y_scale) = standardization(scores);
        let y: Vec<f64> = scores.iter().map(|s| (s - y_mean) / y_scale).collect();
        let (chol, jitter) = factor(&signal_matrix(&x, &params), params.noise_var)?;
        let alpha = chol.solve(&DVector::from_column_slice(&y));
        Ok(Self { x, y_mean, y_scale, y, params, chol, alpha, jitter })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood from
    /// `n_restarts` starting points (the first is a fixed default, the rest
    /// are drawn from `rng`), each refined by bounded coordinate search in
    /// log space.
    pub fn fit<R: Rng + ?Sized>(
        x: Vec<Vec<f64>>,
        scores: &[f64],
        n_restarts: usize,
        rng: &mut R,
    ) -> Result<Self, GpError> {
        if x.is_empty() {
            return Err(GpError::NoData);
        }
        let d = x[0].len();
        let (y_mean, y_scale) = standardization(scores);
        let y: Vec<f64> = scores.iter().map(|s| (s - y_mean) / y_scale).collect();
        let bounds = log_bounds(d);
        let objective = |theta: &[f64]| {
            log_marginal_likelihood(&x, &y, &KernelParams::from_log(theta)).unwrap_or(f64::NEG_INFINITY)
        };

        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in 0..n_restarts.max(1) {
            let theta0: Vec<f64> = if start == 0 {
                let mut t = vec![(0.3f64).ln(); d];
                t.push(0.0);
                t.push((1e-4f64).ln());
                t
            } else {
                bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect()
            };
            let (value, theta) = coordinate_search(&objective, theta0, &bounds);
            if best.as_ref().map_or(true, |(v, _)| value > *v) {
                best = Some((value, theta));
            }
        }
        let (_, theta) = best.expect("at least one restart");
        Self::with_params(x, scores, KernelParams::from_log(&theta))
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Maps a raw score into the model's standardized units.
    pub fn standardize(&self, score: f64) -> f64 {
        (score - self.y_mean) / self.y_scale
    }

    pub fn standardized_targets(&self) -> &[f64] {
        &self.y
    }

    /// Posterior mean and latent variance at `z`, in standardized units.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let k_star = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.params.kernel(xi, z)));
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor is invertible");
        let var = (self.params.kernel(z, z) - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn expected_improvement_at(&self, z: &[f64], best_std: f64) -> f64 {
        let (mu, var) = self.predict(z);
        expected_improvement(mu, var.sqrt(), best_std)
    }
}

fn standardization(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    (mean, if scale > 1e-12 { scale } else { 1.0 })
}

fn log_bounds(d: usize) -> Vec<(f64, f64)> {
    let mut b = vec![LOG_LENGTH_BOUNDS; d];
    b.push(LOG_SIGNAL_BOUNDS);
    b.push(LOG_NOISE_BOUNDS);
    b
}

/// Derivative-free bounded maximization: per-coordinate +/- steps, halving
/// the step when a sweep makes no progress.
fn coordinate_search(
    f: &dyn Fn(&[f64]) -> f64,
    mut theta: Vec<f64>,
    bounds: &[(f64, f64)],
) -> (f64, Vec<f64>) {
    let mut value = f(&theta);
    let mut step = 1.0;
    let mut evals = 0usize;
    let max_evals = 60 + 20 * theta.len();
    while step > 0.02 && evals < max_evals {
        let mut improved = false;
        for i in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut trial = theta.clone();
                trial[i] = (trial[i] + dir * step).clamp(bounds[i].0, bounds[i].1);
                if trial[i] == theta[i] {
                    continue;
                }
                evals += 1;
                let v = f(&trial);
                if v > value {
                    value = v;
                    theta = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (value, theta)
}

/// Candidate points for EI maximization: a randomly shifted Halton set over
/// the unit cube plus Gaussian perturbations around `incumbent`.
pub fn candidate_set<R: Rng + ?Sized>(
    encoder: &Encoder,
    n_quasi: usize,
    incumbent: Option<&IndexMap<String, ParamValue>>,
    rng: &mut R,
) -> Vec<IndexMap<String, ParamValue>> {
    let d = encoder.space().dim();
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let mut out: Vec<_> = (0..n_quasi as u64)
        .map(|i| {
            let u: Vec<f64> = halton(i, d).iter().zip(&shift).map(|(h, s)| (h + s).fract()).collect();
            encoder.decode_unit(&u)
        })
        .collect();
    if let Some(inc) = incumbent {
        let centre: Vec<f64> = encoder
            .space()
            .iter()
            .map(|p| Encoder::unit_coordinate(p, &inc[p.name()]))
            .collect();
        let noise = Normal::new(0.0, 0.05).expect("valid normal");
        for _ in 0..(n_quasi / 10).max(10) {
            let u: Vec<f64> = centre.iter().map(|c| (c + noise.sample(rng)).clamp(0.0, 1.0)).collect();
            out.push(encoder.decode_unit(&u));
        }
    }
    out
}

/// Index of the candidate with the largest EI; ties keep the earliest.
pub fn argmax_ei(
    model: &GpSurrogate,
    encoder: &Encoder,
    candidates: &[IndexMap<String, ParamValue>],
    best_score: f64,
) -> usize {
    let best_std = model.standardize(best_score);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let ei = model.expected_improvement_at(&encoder.encode(c), best_std);
        if ei > best.1 {
            best = (i, ei);
        }
    }
    best.0
}

pub struct GpEiProposer {
    state: ProposerState,
    options: GpOptions,
    encoder: Encoder,
}

impl GpEiProposer {
    pub fn new(state: ProposerState, options: GpOptions) -> Self {
        let encoder = Encoder::new(state.space());
        Self { state, options, encoder }
    }

    fn model_proposal(&mut self) -> Option<IndexMap<String, ParamValue>> {
        let (x, y): (Vec<Vec<f64>>, Vec<f64>) = self
            .state
            .completed()
            .map(|(c, s)| (self.encoder.encode(&c.values), s))
            .unzip();
        let (best_idx, best) = y
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        let incumbent = self.state.completed().nth(best_idx).map(|(c, _)| c.values.clone());
        let n_restarts = self.options.n_restarts;
        let model = match GpSurrogate::fit(x, &y, n_restarts, self.state.rng()) {
            Ok(m) => m,
            Err(e) => {
                warn!("GP fit failed, falling back to random proposal: {e}");
                return None;
            }
        };
        let candidates = candidate_set(&self.encoder, self.options.n_candidates, incumbent.as_ref(), self.state.rng());
        let idx = argmax_ei(&model, &self.encoder, &candidates, best);
        candidates.into_iter().nth(idx)
    }
}

impl Proposer for GpEiProposer {
    fn get_param(&mut self) -> Proposal {
        if self.state.budget_left() == 0 {
            return Proposal::Done;
        }
        let values = match self.model_proposal() {
            Some(v) => v,
            None => {
                let space = self.state.space().clone();
                sample_uniform(&space, self.state.rng())
            }
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
