//! Budget-allocating proposers.
//!
//! Both proposers walk the same [`BracketPlan`]: every round of a bracket is
//! issued in full, then acts as a barrier until all of its results are in.
//! The best `floor(n / eta)` configurations are re-issued at the next budget
//! with a fresh job id and `"resume_from"` pointing at their previous job.

mod plan;

pub use plan::{Bracket, BracketPlan, Round};

use crate::model::TpeModel;
use crate::proposers::{sample_uniform, Proposal, Proposer, ProposerError, ProposerState};
use crate::space::{BanditOptions, BohbOptions, JobConfig, JobResult, ParamValue};
use indexmap::IndexMap;
use rand::Rng;
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};

pub const RESUME_KEY: &str = "resume_from";

/// The best `k` job ids by score, lower job id first among equal scores.
/// Jobs without a score are never promoted.
pub fn top_k(results: &[(u64, Option<f64>)], k: usize) -> Vec<u64> {
    let mut ok: Vec<(u64, f64)> = results.iter().filter_map(|&(j, s)| s.map(|s| (j, s))).collect();
    ok.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ok.into_iter().take(k).map(|(j, _)| j).collect()
}

/// One completed promotion decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Promotion {
    pub bracket: u32,
    pub round: usize,
    pub results: Vec<(u64, Option<f64>)>,
    pub k: usize,
    pub promoted: Vec<u64>,
}

struct Seed {
    values: IndexMap<String, ParamValue>,
    resume_from: Option<u64>,
}

/// Successive-halving bookkeeping shared by HyperBand and BOHB.
struct Scheduler {
    plan: BracketPlan,
    bracket: usize,
    round: usize,
    /// Promoted configurations still to issue in the current round.
    queue: Vec<Seed>,
    /// New configurations still to draw in the current round.
    to_draw: u64,
    /// Job ids issued in the current round with their scores once known.
    members: Vec<u64>,
    scores: HashMap<u64, Option<f64>>,
    values: HashMap<u64, IndexMap<String, ParamValue>>,
    promotions: Vec<Promotion>,
    issued_budget: Vec<u64>,
    done: bool,
}

impl Scheduler {
    fn new(plan: BracketPlan) -> Self {
        let to_draw = plan.brackets.first().map_or(0, Bracket::n_new_configs);
        let done = plan.brackets.is_empty();
        let issued_budget = vec![0; plan.brackets.len()];
        Self {
            plan,
            bracket: 0,
            round: 0,
            queue: Vec::new(),
            to_draw,
            members: Vec::new(),
            scores: HashMap::new(),
            values: HashMap::new(),
            promotions: Vec::new(),
            issued_budget,
            done,
        }
    }

    fn current(&self) -> &Bracket {
        &self.plan.brackets[self.bracket]
    }

    fn round_complete(&self) -> bool {
        self.queue.is_empty() && self.to_draw == 0 && self.members.iter().all(|j| self.scores.contains_key(j))
    }

    /// Closes finished rounds until something can be issued or the plan ends.
    fn advance(&mut self) {
        while !self.done && self.round_complete() {
            let bracket = self.current().clone();
            let results: Vec<(u64, Option<f64>)> = self.members.iter().map(|j| (*j, self.scores[j])).collect();
            let next = self.round + 1;
            let promoted = if next < bracket.rounds.len() {
                let k = bracket.rounds[next].n_configs as usize;
                let promoted = top_k(&results, k);
                self.promotions.push(Promotion {
                    bracket: bracket.s,
                    round: self.round,
                    results,
                    k,
                    promoted: promoted.clone(),
                });
                promoted
            } else {
                Vec::new()
            };
            self.members.clear();
            if promoted.is_empty() {
                self.bracket += 1;
                self.round = 0;
                self.values.clear();
                self.scores.clear();
                match self.plan.brackets.get(self.bracket) {
                    Some(b) => self.to_draw = b.n_new_configs(),
                    None => self.done = true,
                }
            } else {
                self.round = next;
                self.queue = promoted
                    .into_iter()
                    .rev()
                    .map(|j| Seed { values: self.values[&j].clone(), resume_from: Some(j) })
                    .collect();
            }
        }
    }

    fn next(
        &mut self,
        state: &mut ProposerState,
        draw: impl FnOnce(&mut ProposerState) -> IndexMap<String, ParamValue>,
    ) -> Proposal {
        self.advance();
        if self.done {
            return Proposal::Done;
        }
        let seed = if let Some(seed) = self.queue.pop() {
            seed
        } else if self.to_draw > 0 {
            self.to_draw -= 1;
            Seed { values: draw(state), resume_from: None }
        } else {
            return Proposal::Wait;
        };
        let budget = self.current().rounds[self.round].budget;
        let mut aux = BTreeMap::new();
        if let Some(prev) = seed.resume_from {
            aux.insert(RESUME_KEY.to_string(), Value::from(prev));
        }
        let cfg = state.issue(seed.values.clone(), Some(budget), aux);
        self.issued_budget[self.bracket] += budget;
        self.members.push(cfg.job_id);
        self.values.insert(cfg.job_id, seed.values);
        Proposal::Config(cfg)
    }

    fn update(&mut self, state: &mut ProposerState, result: &JobResult) -> Result<(), ProposerError> {
        let score = state.record(result)?.score;
        self.scores.insert(result.job_id, score);
        Ok(())
    }

    fn finished(&self) -> bool {
        if self.done {
            return true;
        }
        let last_bracket = self.bracket + 1 == self.plan.brackets.len();
        let last_round = self.round + 1 == self.current().rounds.len();
        last_bracket && last_round && self.queue.is_empty() && self.to_draw == 0
    }
}

/// Builds the effective plan, truncated so new configs never exceed `n_samples`.
fn effective_plan(state: &ProposerState, opts: &BanditOptions) -> Result<BracketPlan, ProposerError> {
    let plan = BracketPlan::new(opts.max_budget, opts.eta, opts.min_budget)?;
    Ok(plan.truncated(state.n_samples() as u64))
}

macro_rules! bandit_accessors {
    ($t:ty) => {
        impl $t {
            /// The schedule actually followed, after `n_samples` truncation.
            pub fn plan(&self) -> &BracketPlan {
                &self.sched.plan
            }

            pub fn promotions(&self) -> &[Promotion] {
                &self.sched.promotions
            }

            /// Summed `n_iterations` issued so far, per bracket of [`Self::plan`].
            pub fn issued_budget(&self) -> &[u64] {
                &self.sched.issued_budget
            }
        }
    };
}

pub struct HyperBandProposer {
    state: ProposerState,
    sched: Scheduler,
}

impl HyperBandProposer {
    pub fn new(state: ProposerState, opts: &BanditOptions) -> Result<Self, ProposerError> {
        let plan = effective_plan(&state, opts)?;
        Ok(Self { state, sched: Scheduler::new(plan) })
    }
}

bandit_accessors!(HyperBandProposer);

impl Proposer for HyperBandProposer {
    fn get_param(&mut self) -> Proposal {
        self.sched.next(&mut self.state, |st| {
            let space = st.space().clone();
            sample_uniform(&space, st.rng())
        })
    }

    fn update(&mut self, result: &JobResult) -> Result<(), ProposerError> {
        self.sched.update(&mut self.state, result)
    }

    fn finished(&self) -> bool {
        self.sched.finished()
    }

    fn state(&self) -> &ProposerState {
        &self.state
    }
}

/// How a BOHB round-0 configuration was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawSource {
    Random,
    /// TPE fitted on the finished results at this budget.
    Model { budget: u64, n_points: usize },
}

pub struct BohbProposer {
    state: ProposerState,
    sched: Scheduler,
    opts: BohbOptions,
    draws: Vec<DrawSource>,
}

impl BohbProposer {
    pub fn new(state: ProposerState, opts: BohbOptions) -> Result<Self, ProposerError> {
        let plan = effective_plan(&state, &opts.bandit)?;
        Ok(Self { state, sched: Scheduler::new(plan), opts, draws: Vec::new() })
    }

    /// One entry per new configuration, in issue order.
    pub fn draws(&self) -> &[DrawSource] {
        &self.draws
    }

    /// Largest budget with at least `min_points` finished results.
    pub fn model_budget(&self) -> Option<u64> {
        model_budget(&self.state, self.opts.min_points)
    }
}

fn model_budget(state: &ProposerState, min_points: usize) -> Option<u64> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (c, _) in state.completed() {
        if let Some(n) = c.n_iterations {
            *counts.entry(n).or_default() += 1;
        }
    }
    counts.into_iter().rev().find(|&(_, n)| n >= min_points).map(|(b, _)| b)
}

fn bohb_draw(
    state: &mut ProposerState,
    opts: &BohbOptions,
) -> (IndexMap<String, ParamValue>, DrawSource) {
    let space = state.space().clone();
    let explore = state.rng().gen::<f64>() < opts.rho;
    let budget = if explore { None } else { model_budget(state, opts.min_points) };
    if let Some(budget) = budget {
        let obs: Vec<(JobConfig, f64)> = state
            .completed()
            .filter(|(c, _)| c.n_iterations == Some(budget))
            .map(|(c, s)| (c.clone(), s))
            .collect();
        let refs: Vec<(&JobConfig, f64)> = obs.iter().map(|(c, s)| (c, *s)).collect();
        if let Some(model) = TpeModel::fit(&space, &refs, opts.gamma) {
            let values = model.propose(opts.n_candidates, state.rng());
            return (values, DrawSource::Model { budget, n_points: obs.len() });
        }
    }
    (sample_uniform(&space, state.rng()), DrawSource::Random)
}

bandit_accessors!(BohbProposer);

impl Proposer for BohbProposer {
    fn get_param(&mut self) -> Proposal {
        let opts = &self.opts;
        let mut source = None;
        let p = self.sched.next(&mut self.state, |st| {
            let (values, s) = bohb_draw(st, opts);
            source = Some(s);
            values
        });
        self.draws.extend(source);
        p
    }

    fn update(&mut self, result: &JobResult) -> Result<(), ProposerError> {
        self.sched.update(&mut self.state, result)
    }

    fn finished(&self) -> bool {
        self.sched.finished()
    }

    fn state(&self) -> &ProposerState {
        &self.state
    }
}
