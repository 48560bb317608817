use super::{Proposal, Proposer, ProposerError, ProposerState};
use crate::space::{JobConfig, JobResult, ParamKind, ParamValue, ParameterSpec, SearchSpace, DEFAULT_GRID_N};
use indexmap::IndexMap;
use std::collections::BTreeMap;

/// Grid points of one dimension. Numeric grids are `grid_n` equally spaced
/// points including both endpoints (ints rounded), with duplicates removed.
pub fn grid_values(p: &ParameterSpec) -> Vec<ParamValue> {
    let n = p.grid_n().unwrap_or(DEFAULT_GRID_N);
    let at = |i: usize, lo: f64, hi: f64| {
        if n == 1 {
            lo
        } else if i == n - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut out: Vec<ParamValue> = Vec::with_capacity(n);
    match p.kind() {
        ParamKind::Float { lo, hi } => {
            for i in 0..n {
                let v = ParamValue::Float(at(i, *lo, *hi));
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        ParamKind::Int { lo, hi } => {
            for i in 0..n {
                let v = ParamValue::Int(at(i, *lo as f64, *hi as f64).round() as i64);
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        ParamKind::Choice(values) => out.extend(values.iter().cloned().map(ParamValue::Choice)),
    }
    out
}

/// Cartesian product of every dimension's grid, first parameter varying slowest.
pub fn grid_enumerate(space: &SearchSpace, cap: u64) -> Result<Vec<JobConfig>, ProposerError> {
    let axes: Vec<Vec<ParamValue>> = space.iter().map(grid_values).collect();
    let size = axes.iter().fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
    if size > cap as u128 {
        return Err(ProposerError::GridTooLarge { size, cap });
    }
    let mut configs = Vec::with_capacity(size as usize);
    let mut index = vec![0usize; axes.len()];
    for job_id in 0..size as u64 {
        let values: IndexMap<String, ParamValue> = space
            .iter()
            .zip(&index)
            .zip(&axes)
            .map(|((p, &i), axis)| (p.name().to_string(), axis[i].clone()))
            .collect();
        configs.push(JobConfig::new(job_id, values));
        for d in (0..axes.len()).rev() {
            index[d] += 1;
            if index[d] < axes[d].len() {
                break;
            }
            index[d] = 0;
        }
    }
    Ok(configs)
}

pub struct GridProposer {
    state: ProposerState,
    grid: Vec<JobConfig>,
}

impl GridProposer {
    pub fn new(state: ProposerState, cap: u64) -> Result<Self, ProposerError> {
        let grid = grid_enumerate(state.space(), cap)?;
        Ok(Self { state, grid })
    }

    /// Number of jobs this proposer will issue.
    pub fn total(&self) -> usize {
        self.grid.len().min(self.state.n_samples())
    }
}

impl Proposer for GridProposer {
    fn get_param(&mut self) -> Proposal {
        let next = self.state.issued();
        if next >= self.total() {
            return Proposal::Done;
        }
        let values = self.grid[next].values.clone();
        Proposal::Config(self.state.issue(values, None, BTreeMap::new()))
    }

    fn update(&mut self, result: &JobResult) -> Result<(), ProposerError> {
        self.state.record(result).map(|_| ())
    }

    fn finished(&self) -> bool {
        self.state.issued() >= self.total()
    }

    fn state(&self) -> &ProposerState {
        &self.state
    }
}
