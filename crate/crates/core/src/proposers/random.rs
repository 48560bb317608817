use super::{Proposal, Proposer, ProposerError, ProposerState};
use crate::space::{JobResult, ParamKind, ParamValue, SearchSpace};
use indexmap::IndexMap;
use rand::Rng;
use std::collections::BTreeMap;

/// Draws one configuration with every dimension independent and uniform:
/// floats on `[lo, hi]`, ints on the inclusive lattice, choices by index.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> IndexMap<String, ParamValue> {
    space
        .iter()
        .map(|p| {
            let v = match p.kind() {
                ParamKind::Float { lo, hi } => ParamValue::Float(rng.gen_range(*lo..=*hi)),
                ParamKind::Int { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
                ParamKind::Choice(values) => {
                    ParamValue::Choice(values[rng.gen_range(0..values.len())].clone())
                }
            };
            (p.name().to_string(), v)
        })
        .collect()
}

pub struct RandomProposer {
    state: ProposerState,
}

impl RandomProposer {
    pub fn new(state: ProposerState) -> Self {
        Self { state }
    }
}

impl Proposer for RandomProposer {
    fn get_param(&mut self) -> Proposal {
        if self.state.budget_left() == 0 {
            return Proposal::Done;
        }
        let space = self.state.space().clone();
        let values = sample_uniform(&space, self.state.rng());
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
