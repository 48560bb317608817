use crate::proposers::ProposerError;

/// One successive-halving round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Round {
    pub n_configs: u64,
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bracket {
    pub s: u32,
    pub rounds: Vec<Round>,
}

impl Bracket {
    /// Sum of `n_configs * budget` over rounds.
    pub fn total_budget(&self) -> u64 {
        self.rounds.iter().map(|r| r.n_configs * r.budget).sum()
    }

    pub fn n_new_configs(&self) -> u64 {
        self.rounds.first().map_or(0, |r| r.n_configs)
    }
}

/// HyperBand bracket table for maximum budget `R` and rate `eta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketPlan {
    pub max_budget: u64,
    pub min_budget: u64,
    pub eta: u64,
    pub s_max: u32,
    /// Ordered from `s = s_max` down to `0`.
    pub brackets: Vec<Bracket>,
}

fn pow(eta: u64, e: u32) -> u64 {
    eta.checked_pow(e).expect("budget power overflow")
}

impl BracketPlan {
    /// Builds the table. `s_max` is the largest `s` with
    /// `min_budget * eta^s <= max_budget`, which is `floor(log_eta R)` for
    /// `min_budget = 1`. Round budgets are `floor(R / eta^(s - i))`.
    pub fn new(max_budget: u64, eta: u64, min_budget: u64) -> Result<Self, ProposerError> {
        if max_budget < 1 {
            return Err(ProposerError::InvalidPlan("max_budget must be at least 1".into()));
        }
        if eta < 2 {
            return Err(ProposerError::InvalidPlan("eta must be at least 2".into()));
        }
        if min_budget < 1 || min_budget > max_budget {
            return Err(ProposerError::InvalidPlan("min_budget must lie in [1, max_budget]".into()));
        }
        let mut s_max = 0u32;
        while min_budget.checked_mul(pow(eta, s_max + 1)).is_some_and(|b| b <= max_budget) {
            s_max += 1;
        }
        let brackets = (0..=s_max)
            .rev()
            .map(|s| {
                let num = (s_max as u64 + 1) * pow(eta, s);
                let den = s as u64 + 1;
                let n0 = num.div_ceil(den);
                let rounds = (0..=s)
                    .map(|i| Round { n_configs: n0 / pow(eta, i), budget: max_budget / pow(eta, s - i) })
                    .collect();
                Bracket { s, rounds }
            })
            .collect();
        Ok(Self { max_budget, min_budget, eta, s_max, brackets })
    }

    pub fn hyperband(max_budget: u64, eta: u64) -> Result<Self, ProposerError> {
        Self::new(max_budget, eta, 1)
    }

    pub fn total_budget(&self) -> u64 {
        self.brackets.iter().map(Bracket::total_budget).sum()
    }

    /// Distinct configurations sampled across all brackets.
    pub fn n_new_configs(&self) -> u64 {
        self.brackets.iter().map(Bracket::n_new_configs).sum()
    }

    /// Caps the number of new configurations at `cap`, shrinking round-0
    /// sizes in bracket order and dropping brackets left empty.
    pub fn truncated(&self, cap: u64) -> Self {
        let mut left = cap;
        let mut brackets = Vec::new();
        for b in &self.brackets {
            if left == 0 {
                break;
            }
            let n0 = b.n_new_configs().min(left);
            left -= n0;
            let rounds = b
                .rounds
                .iter()
                .enumerate()
                .map(|(i, r)| Round { n_configs: n0 / pow(self.eta, i as u32), budget: r.budget })
                .take_while(|r| r.n_configs > 0)
                .collect();
            brackets.push(Bracket { s: b.s, rounds });
        }
        Self { brackets, ..self.clone() }
    }
}
