//! Coalition searches.
//!
//! Every search returns a [`SearchOutcome`] whose certificate is computed
//! independently of the search's internal estimates: exactly when the free
//! coordinates fit the enumeration budget, otherwise by Monte-Carlo with its
//! Hoeffding radius. An outcome whose certificate misses its threshold is
//! returned with status [`Status::Failed`], never as a success.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::functions::RangedFunction;
use crate::influence::{self, Coalition, InfluenceEstimate, Mode, EXACT_FREE_LIMIT};
use crate::measures::ProductMeasure;

mod boosted;
mod multi;
mod range;
mod single;
mod small_bias;

pub use boosted::{boosted_coalition, boosted_success_rates, classify_conditions, prop22_k, Classification};
pub(crate) use multi::certify_protocol;
pub use multi::{multi_round_coalition, schedule, MultiRoundParams, Schedule, MAX_ROUNDS};
pub use range::{dagger_threshold, large_range_coalition, range_k, RangeParams};
pub use single::{find_single_round, SingleRoundParams};
pub use small_bias::{
    and_expansion, decompose_bias, greedy_small_bias, min_subset_size, project_expanded, random_small_bias,
    AndExpansion,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Certified,
    Failed,
}

/// One step of a construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub coalition: Coalition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Structured log of a search: parameters used, counters, flags, stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub params: BTreeMap<String, f64>,
    pub counters: BTreeMap<String, u64>,
    pub flags: Vec<String>,
    pub stages: Vec<Stage>,
}

impl Trace {
    pub fn param(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_string(), value);
    }

    pub fn count(&mut self, name: &str, by: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += by;
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    pub fn stage(&mut self, name: &str, coalition: &Coalition, target: Option<u32>, value: Option<f64>) {
        self.stages.push(Stage {
            name: name.to_string(),
            coalition: coalition.clone(),
            target,
            value,
        });
    }

    /// Merges a sub-search trace under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: Trace) {
        for (k, v) in other.params {
            self.params.insert(format!("{prefix}.{k}"), v);
        }
        for (k, v) in other.counters {
            *self.counters.entry(format!("{prefix}.{k}")).or_insert(0) += v;
        }
        for f in other.flags {
            self.flag(f);
        }
        for s in other.stages {
            self.stages.push(Stage { name: format!("{prefix}.{}", s.name), ..s });
        }
    }
}

/// A coalition, the value it pushes toward, and an independent certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub status: Status,
    pub coalition: Coalition,
    pub target: u32,
    /// The level `1 - ε` the certificate must reach.
    pub threshold: f64,
    pub certificate: InfluenceEstimate,
    /// Boosted certificates `I_S^{b,ℓ}` keyed by `ℓ`, when the search makes
    /// claims about boosted measures.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub boosted_certificates: BTreeMap<usize, InfluenceEstimate>,
    pub trace: Trace,
}

impl SearchOutcome {
    /// Status follows from whether the certificate meets the threshold.
    pub fn judge(
        coalition: Coalition,
        target: u32,
        threshold: f64,
        certificate: InfluenceEstimate,
        trace: Trace,
    ) -> Self {
        let status = if certificate.meets(threshold) { Status::Certified } else { Status::Failed };
        SearchOutcome {
            status,
            coalition,
            target,
            threshold,
            certificate,
            boosted_certificates: BTreeMap::new(),
            trace,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.status == Status::Certified
    }
}

/// Independent random stream number `index` derived from `seed`.
pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exact when the free coordinates fit the budget, else Monte-Carlo.
pub(crate) fn certify_mode(n: usize, coalition: &Coalition, seed: u64) -> Mode {
    if n - coalition.len() <= EXACT_FREE_LIMIT {
        Mode::Exact
    } else {
        Mode::monte_carlo(seed)
    }
}

/// `I_S^b` computed the way every search certifies.
pub fn certify(
    f: &RangedFunction,
    mu: &ProductMeasure,
    s: &Coalition,
    b: u32,
    seed: u64,
) -> Result<InfluenceEstimate> {
    influence::coalition_influence(f, mu, s, b, certify_mode(f.n(), s, seed))
}

/// Values the function attains (the whole range when it is too large to
/// tabulate), most probable under `μ` first, ties by value.
pub(crate) fn candidate_values(f: &RangedFunction, mu: &ProductMeasure, seed: u64) -> Result<Vec<u32>> {
    let values = f.attained_values().unwrap_or_else(|| (0..f.range_size()).collect());
    let mode = if f.n() <= EXACT_FREE_LIMIT { Mode::Exact } else { Mode::monte_carlo(seed) };
    let mut weighted = values
        .into_iter()
        .map(|b| Ok((influence::value_probability(f, mu, Some(b), mode)?.value, b)))
        .collect::<Result<Vec<_>>>()?;
    weighted.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(weighted.into_iter().map(|(_, b)| b).collect())
}

/// Trials run in parallel batches of this size; the first success in index
/// order wins, so results do not depend on scheduling.
const BATCH: u64 = 32;

/// One sampled candidate and its certificate.
pub(crate) struct Attempt {
    pub coalition: Coalition,
    pub target: u32,
    pub certificate: InfluenceEstimate,
}

/// Result of scanning trials: the first certified attempt, or the best one.
pub(crate) struct Scan {
    pub attempt: Attempt,
    pub success: bool,
    pub trials_used: u64,
}

/// Evaluates `attempt(j)` for `j = 0, 1, ...` until one meets `threshold`.
pub(crate) fn scan_trials(
    trials: u64,
    threshold: f64,
    attempt: impl Fn(u64) -> Result<Attempt> + Sync,
) -> Result<Scan> {
    let mut best: Option<Attempt> = None;
    let mut start = 0;
    while start < trials {
        let end = (start + BATCH).min(trials);
        let batch = (start..end).into_par_iter().map(&attempt).collect::<Result<Vec<_>>>()?;
        for (offset, a) in batch.into_iter().enumerate() {
            if a.certificate.meets(threshold) {
                return Ok(Scan { attempt: a, success: true, trials_used: start + offset as u64 + 1 });
            }
            if best.as_ref().map_or(true, |b| a.certificate.value > b.certificate.value) {
                best = Some(a);
            }
        }
        start = end;
    }
    let attempt = best.ok_or_else(|| crate::error::invalid("trials", "need at least one trial"))?;
    Ok(Scan { attempt, success: false, trials_used: trials })
}
