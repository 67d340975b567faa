//! Coalition, boosted and variable influence, exact or Monte-Carlo.
//!
//! Exact computations enumerate the coordinates outside the coalition with
//! their product mass and scan each block for the target value, stopping at
//! the first hit. Monte-Carlo estimates report a two-sided 95% Hoeffding
//! half-width.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits;
use crate::error::{invalid, Error, Result};
use crate::functions::RangedFunction;
use crate::measures::{BitVector, ProductMeasure, SubcubeMasses};

/// Largest number of free coordinates enumerated exactly.
pub const EXACT_FREE_LIMIT: usize = 24;

/// Largest block scanned by brute force.
pub const BLOCK_LIMIT: usize = 26;

pub const DEFAULT_MC_SAMPLES: u64 = 10_000;

/// Monte-Carlo work is split into this many independently seeded chunks.
const MC_CHUNKS: u64 = 16;

/// Absolute slack when comparing exact sums against thresholds.
pub const FLOAT_SLACK: f64 = 1e-12;

/// A set of players, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    /// Sorts and deduplicates; every member must be below `n`.
    pub fn new(members: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&c| c >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        Ok(Coalition { members })
    }

    pub fn empty() -> Self {
        Coalition::default()
    }

    /// Parses 1-based members separated by `;` or `,`. The empty string is
    /// the empty coalition.
    pub fn from_one_based(s: &str, n: usize) -> Result<Self> {
        let members = s
            .split([';', ','])
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t.parse::<usize>() {
                Ok(0) | Err(_) => Err(Error::Parse(format!("coalition member `{t}` is not a positive integer"))),
                Ok(v) => Ok(v - 1),
            })
            .collect::<Result<Vec<_>>>()?;
        Coalition::new(members, n)
    }

    pub(crate) fn from_mask(mask: u64) -> Self {
        Coalition {
            members: (0..64).filter(|&i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn mask(&self) -> u64 {
        bits::mask_of(&self.members)
    }

    pub fn union(&self, other: &Coalition) -> Coalition {
        Coalition::from_mask(self.mask() | other.mask())
    }

    pub fn is_subset(&self, other: &Coalition) -> bool {
        self.mask() & !other.mask() == 0
    }

    /// Coordinates of `0..n` outside the coalition.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| !self.contains(i)).collect()
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        match self.members.last() {
            Some(&c) if c >= n => Err(Error::IndexOutOfRange { index: c, n }),
            _ => Ok(()),
        }
    }

    /// Semicolon-joined 1-based members.
    pub fn to_one_based(&self) -> String {
        self.members
            .iter()
            .map(|c| (c + 1).to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (j, c) in self.members.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", c + 1)?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

/// A probability with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub value: f64,
    pub method: Method,
    pub samples: u64,
    pub radius: f64,
}

impl InfluenceEstimate {
    pub fn exact(value: f64) -> Self {
        InfluenceEstimate {
            value: value.clamp(0.0, 1.0),
            method: Method::Exact,
            samples: 0,
            radius: 0.0,
        }
    }

    pub fn monte_carlo(hits: u64, samples: u64) -> Self {
        InfluenceEstimate {
            value: hits as f64 / samples as f64,
            method: Method::MonteCarlo,
            samples,
            radius: hoeffding_radius(samples),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.method == Method::Exact
    }

    /// Whether the estimate is compatible with `value >= threshold`, up to
    /// floating-point noise.
    pub fn meets(&self, threshold: f64) -> bool {
        self.value + self.radius + FLOAT_SLACK >= threshold
    }
}

/// Two-sided 95% Hoeffding half-width.
pub fn hoeffding_radius(samples: u64) -> f64 {
    if samples == 0 {
        return 0.0;
    }
    ((2.0f64 / 0.05).ln() / (2.0 * samples as f64)).sqrt()
}

/// How a probability should be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Mode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

impl Mode {
    pub fn monte_carlo(seed: u64) -> Self {
        Mode::MonteCarlo { samples: DEFAULT_MC_SAMPLES, seed }
    }
}

/// Counts successes of `trial` over `samples` draws, split into chunks with
/// seeds `seed ^ i` and summed in chunk order.
pub(crate) fn mc_count(
    samples: u64,
    seed: u64,
    trial: impl Fn(&mut ChaCha8Rng) -> bool + Sync,
) -> u64 {
    let chunks = MC_CHUNKS.min(samples.max(1));
    (0..chunks)
        .into_par_iter()
        .map(|i| {
            let len = samples / chunks + u64::from(i < samples % chunks);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i);
            (0..len).filter(|_| trial(&mut rng)).count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Whether some completion of `base` on the coalition mask gives `b`.
pub(crate) fn block_hit(f: &RangedFunction, base: u64, mask: u64, b: u32) -> bool {
    let base = base & !mask;
    bits::submasks(mask).any(|sub| f.eval_bits(base | sub) == b)
}

fn check_pair(f: &RangedFunction, mu: &ProductMeasure) -> Result<()> {
    if f.n() != mu.n() {
        return Err(Error::ArityMismatch { expected: f.n(), got: mu.n() });
    }
    Ok(())
}

/// `b ∈ f(B_S(x))`.
pub fn block_contains(f: &RangedFunction, x: &BitVector, s: &Coalition, b: u32) -> Result<bool> {
    x.check_arity(f.n())?;
    s.check(f.n())?;
    if s.len() > BLOCK_LIMIT {
        return Err(Error::BudgetExceeded {
            what: format!("block of {} coordinates", s.len()),
            limit: BLOCK_LIMIT,
        });
    }
    Ok(block_hit(f, x.bits(), s.mask(), b))
}

/// `I_S^b(f) = Pr_{x∼μ}[b ∈ f(B_S(x))]`.
pub fn coalition_influence(
    f: &RangedFunction,
    mu: &ProductMeasure,
    s: &Coalition,
    b: u32,
    mode: Mode,
) -> Result<InfluenceEstimate> {
    check_pair(f, mu)?;
    s.check(f.n())?;
    if s.len() > BLOCK_LIMIT {
        return Err(Error::BudgetExceeded {
            what: format!("block of {} coordinates", s.len()),
            limit: BLOCK_LIMIT,
        });
    }
    let mask = s.mask();
    match mode {
        Mode::Exact => {
            let free = s.complement(f.n());
            if free.len() > EXACT_FREE_LIMIT {
                return Err(Error::BudgetExceeded {
                    what: format!("exact enumeration of {} free coordinates", free.len()),
                    limit: EXACT_FREE_LIMIT,
                });
            }
            f.ensure_table();
            let value = SubcubeMasses::new(mu, &free)
                .expectation_par(|x| f64::from(u8::from(block_hit(f, x, mask, b))));
            Ok(InfluenceEstimate::exact(value))
        }
        Mode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(invalid("samples", "Monte-Carlo needs at least one sample"));
            }
            f.ensure_table();
            let hits = mc_count(samples, seed, |rng| {
                block_hit(f, mu.sample(rng).bits(), mask, b)
            });
            Ok(InfluenceEstimate::monte_carlo(hits, samples))
        }
    }
}

/// `I_S^{b,t}(f)`: coalition influence under the boosted measure.
pub fn boosted_influence(
    f: &RangedFunction,
    mu: &ProductMeasure,
    s: &Coalition,
    b: u32,
    t: usize,
    mode: Mode,
) -> Result<InfluenceEstimate> {
    coalition_influence(f, &mu.boost(t)?, s, b, mode)
}

/// `I_k(f)`: probability that flipping coordinate `k` changes the value.
pub fn variable_influence(
    f: &RangedFunction,
    mu: &ProductMeasure,
    k: usize,
    mode: Mode,
) -> Result<InfluenceEstimate> {
    check_pair(f, mu)?;
    if k >= f.n() {
        return Err(Error::IndexOutOfRange { index: k, n: f.n() });
    }
    let bit = 1u64 << k;
    let pivotal = |x: u64| f.eval_bits(x & !bit) != f.eval_bits(x | bit);
    match mode {
        Mode::Exact => {
            let free: Vec<usize> = (0..f.n()).filter(|&i| i != k).collect();
            if free.len() > EXACT_FREE_LIMIT {
                return Err(Error::BudgetExceeded {
                    what: format!("exact enumeration of {} free coordinates", free.len()),
                    limit: EXACT_FREE_LIMIT,
                });
            }
            f.ensure_table();
            let value = SubcubeMasses::new(mu, &free).expectation_par(|x| f64::from(u8::from(pivotal(x))));
            Ok(InfluenceEstimate::exact(value))
        }
        Mode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(invalid("samples", "Monte-Carlo needs at least one sample"));
            }
            f.ensure_table();
            let hits = mc_count(samples, seed, |rng| pivotal(mu.sample(rng).bits()));
            Ok(InfluenceEstimate::monte_carlo(hits, samples))
        }
    }
}

/// `Pr_{x∼μ}[f(x) = b]`; `b = None` asks for the †-mass.
pub fn value_probability(
    f: &RangedFunction,
    mu: &ProductMeasure,
    b: Option<u32>,
    mode: Mode,
) -> Result<InfluenceEstimate> {
    check_pair(f, mu)?;
    let target = b.unwrap_or(u32::MAX);
    match mode {
        Mode::Exact => {
            if f.n() > EXACT_FREE_LIMIT {
                return Err(Error::BudgetExceeded {
                    what: format!("exact enumeration of {} coordinates", f.n()),
                    limit: EXACT_FREE_LIMIT,
                });
            }
            f.ensure_table();
            let all: Vec<usize> = (0..f.n()).collect();
            let value = SubcubeMasses::new(mu, &all)
                .expectation_par(|x| f64::from(u8::from(f.eval_bits(x) == target)));
            Ok(InfluenceEstimate::exact(value))
        }
        Mode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(invalid("samples", "Monte-Carlo needs at least one sample"));
            }
            f.ensure_table();
            let hits = mc_count(samples, seed, |rng| f.eval_bits(mu.sample(rng).bits()) == target);
            Ok(InfluenceEstimate::monte_carlo(hits, samples))
        }
    }
}

pub const RESILIENCE_MAX_N: usize = 18;
pub const RESILIENCE_MAX_ELL: usize = 4;

/// Outcome of an exhaustive resilience check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "verdict")]
pub enum Resilience {
    /// No coalition of the allowed size reaches `1 - ε`. Carries the largest
    /// influence seen.
    Resilient { max_influence: f64 },
    Witness {
        coalition: Coalition,
        b: u32,
        influence: f64,
    },
}

/// Exhaustive search for a coalition of size at most `ell` with
/// `I_S^b >= 1 - ε` for some value `b`. Coalitions are tried by size, then
/// lexicographically, then by increasing `b`.
pub fn certify_resilience(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    ell: usize,
) -> Result<Resilience> {
    check_pair(f, mu)?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(invalid("epsilon", "must lie in [0, 1]"));
    }
    if f.n() > RESILIENCE_MAX_N || ell > RESILIENCE_MAX_ELL {
        return Err(Error::BudgetExceeded {
            what: format!("resilience check with n = {}, ell = {ell}", f.n()),
            limit: if f.n() > RESILIENCE_MAX_N { RESILIENCE_MAX_N } else { RESILIENCE_MAX_ELL },
        });
    }
    let mut best = 0.0f64;
    for size in 0..=ell.min(f.n()) {
        for members in bits::combinations(f.n(), size) {
            let s = Coalition { members };
            for b in 0..f.range_size() {
                let v = coalition_influence(f, mu, &s, b, Mode::Exact)?.value;
                if v >= 1.0 - eps {
                    return Ok(Resilience::Witness { coalition: s, b, influence: v });
                }
                best = best.max(v);
            }
        }
    }
    Ok(Resilience::Resilient { max_influence: best })
}
