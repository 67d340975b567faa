//! Single-round search over a measure mixing biased and unbiased coordinates.
//!
//! Coordinates of bias at most `α₀ = 1/log₂ n` are handled by a boosted
//! coalition `S`, elected across sampled assignments `y` of the others. The
//! remaining coordinates then only need to land `y` where `S` wins, which is a
//! Boolean question about the indicator `h(y)` answered by a small-bias
//! coalition `T`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::range::large_range_unchecked;
use super::{
    boosted_coalition, candidate_values, certify, greedy_small_bias, min_subset_size, random_small_bias, stream,
    RangeParams, SearchOutcome, Trace,
};
use crate::bits;
use crate::error::{invalid, Error, Result};
use crate::functions::{code_length, Output, RangedFunction, Source};
use crate::influence::{block_hit, Coalition, EXACT_FREE_LIMIT};
use crate::measures::{ProductMeasure, SubcubeMasses};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleRoundParams {
    /// Assignments `y` sampled to elect the biased-part coalition.
    pub y_samples: u64,
    /// Supports tried by each boosted sub-search.
    pub trials: u64,
    /// Subsets tried by the random small-bias search.
    pub small_bias_trials: u64,
    /// Sub-searches on a non-Boolean range.
    pub range: RangeParams,
    /// Most frequent candidates re-scored across all `y`.
    pub finalists: usize,
}

impl Default for SingleRoundParams {
    fn default() -> Self {
        SingleRoundParams {
            y_samples: 200,
            trials: 20,
            small_bias_trials: 2000,
            range: RangeParams::default(),
            finalists: 4,
        }
    }
}

/// Finds a coalition pushing `f` to some value with probability `1 - ε`.
/// All biases must be at most 1/2.
pub fn find_single_round(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    seed: u64,
    params: SingleRoundParams,
) -> Result<SearchOutcome> {
    let n = f.n();
    if n != mu.n() {
        return Err(Error::ArityMismatch { expected: n, got: mu.n() });
    }
    if n < 4 {
        return Err(invalid("n", "need at least four coordinates"));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(invalid("epsilon", format!("{eps} is outside (0, 1/2]")));
    }
    if let Some(i) = (0..n).find(|&i| mu.bias(i) > 0.5) {
        return Err(Error::Precondition(format!(
            "coordinate {} has bias {} above 1/2; negate it first",
            i + 1,
            mu.bias(i)
        )));
    }
    let alpha0 = 1.0 / (n as f64).log2();
    let small: Vec<usize> = (0..n).filter(|&i| mu.bias(i) > alpha0).collect();
    let biased: Vec<usize> = (0..n).filter(|&i| mu.bias(i) <= alpha0).collect();
    let m = code_length(f.range_size());
    let gamma = (eps / 2.0).min(0.5f64.powi(m as i32 + 1));

    let mut trace = Trace::default();
    trace.param("alpha0", alpha0);
    trace.param("gamma", gamma);
    trace.param("small_bias_coordinates", small.len() as f64);

    if small.is_empty() {
        trace.flag("no-small-bias-part");
        let inner = biased_search(f, mu, eps, seed, params)?;
        let mut outcome = inner.clone();
        trace.absorb("biased", inner.trace);
        outcome.trace = trace;
        return Ok(outcome);
    }

    // Elect (S, b₀) on the biased coordinates.
    let (s_local, b0, votes) = if biased.is_empty() {
        trace.flag("no-biased-part");
        (Coalition::empty(), candidate_values(f, mu, seed)?[0], 1.0)
    } else {
        match elect(f, mu, &small, &biased, eps, seed, params, &mut trace)? {
            Some(e) => e,
            None => {
                trace.flag("election-found-no-candidate");
                let s = Coalition::empty();
                let certificate = certify(f, mu, &s, 0, seed)?;
                return Ok(SearchOutcome::judge(s, 0, 1.0 - eps, certificate, trace));
            }
        }
    };
    let s = Coalition::new(s_local.members().iter().map(|&j| biased[j]), n)?;
    trace.param("votes", votes);
    trace.stage("biased", &s, Some(b0), Some(votes));

    // Indicator over the small-bias coordinates.
    let free: Vec<usize> = biased.iter().copied().filter(|i| !s.contains(*i)).collect();
    if free.len() > EXACT_FREE_LIMIT || small.len() > 20 {
        return Err(Error::BudgetExceeded {
            what: format!("indicator over {} coordinates with {} free", small.len(), free.len()),
            limit: EXACT_FREE_LIMIT,
        });
    }
    f.ensure_table();
    let masses = SubcubeMasses::new(mu, &free);
    let inner_level = 1.0 - eps / 2.0;
    let indicator: Vec<bool> = (0..1u64 << small.len())
        .into_par_iter()
        .map(|code| {
            let y = bits::spread(code, &small);
            let v = masses.expectation(|x| f64::from(u8::from(block_hit(f, y | x, s.mask(), b0))));
            v + crate::influence::FLOAT_SLACK >= inner_level
        })
        .collect();
    let h = RangedFunction::from_fn(small.len(), 2, |y| Output::value(u32::from(indicator[y.bits() as usize])))?;
    let mu_small = mu.restrict(&small)?;

    let t_local = small_bias_part(&h, &mu_small, eps, gamma, seed, params.small_bias_trials, &mut trace)?;
    let t = Coalition::new(t_local.members().iter().map(|&j| small[j]), n)?;
    trace.stage("small-bias", &t, Some(1), None);

    let coalition = s.union(&t);
    let certificate = certify(f, mu, &coalition, b0, seed)?;
    trace.stage("combined", &coalition, Some(b0), Some(certificate.value));
    Ok(SearchOutcome::judge(coalition, b0, 1.0 - eps, certificate, trace))
}

fn biased_search(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    seed: u64,
    params: SingleRoundParams,
) -> Result<SearchOutcome> {
    if f.is_boolean() {
        boosted_coalition(f, mu, eps, params.trials, seed)
    } else {
        large_range_unchecked(f, mu, 1, eps, seed, params.range)
    }
}

/// `f` with the small-bias coordinates fixed by `y`, as a function of the
/// biased coordinates alone.
fn restrict(f: &RangedFunction, small: &[usize], biased: &[usize], y: u64) -> Result<RangedFunction> {
    let mut sources = vec![Source::Const(false); f.n()];
    for &i in small {
        sources[i] = Source::Const(y >> i & 1 == 1);
    }
    for (j, &i) in biased.iter().enumerate() {
        sources[i] = Source::Coord(j);
    }
    RangedFunction::embed(f.clone(), biased.len(), sources)
}

/// Runs the biased search on sampled restrictions and returns the candidate
/// that wins on the most of them.
#[allow(clippy::too_many_arguments)]
fn elect(
    f: &RangedFunction,
    mu: &ProductMeasure,
    small: &[usize],
    biased: &[usize],
    eps: f64,
    seed: u64,
    params: SingleRoundParams,
    trace: &mut Trace,
) -> Result<Option<(Coalition, u32, f64)>> {
    let mu_biased = mu.restrict(biased)?;
    let ys: Vec<u64> = (0..params.y_samples).map(|j| mu.sample(&mut stream(seed, j)).bits()).collect();
    let found = ys
        .par_iter()
        .enumerate()
        .map(|(j, &y)| {
            let g = restrict(f, small, biased, y)?;
            let out = biased_search(&g, &mu_biased, eps / 2.0, seed ^ (j as u64 + 1), params)?;
            Ok(out.is_certified().then_some((out.coalition, out.target)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tally: BTreeMap<(usize, Vec<usize>, u32), u64> = BTreeMap::new();
    for (s, b) in found.into_iter().flatten() {
        *tally.entry((s.len(), s.members().to_vec(), b)).or_insert(0) += 1;
    }
    trace.count("election.certified", tally.values().sum());
    let mut ranked: Vec<_> = tally.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(params.finalists.max(1));

    // Re-score finalists: on how many sampled y does the candidate win?
    let level = 1.0 - eps / 2.0;
    let mut best: Option<(Coalition, u32, f64)> = None;
    for ((_, members, b), _) in ranked {
        let s = Coalition::new(members, biased.len())?;
        let wins = ys
            .par_iter()
            .map(|&y| {
                let g = restrict(f, small, biased, y)?;
                Ok(u64::from(certify(&g, &mu_biased, &s, b, seed ^ y)?.meets(level)))
            })
            .collect::<Result<Vec<u64>>>()?
            .into_iter()
            .sum::<u64>();
        let score = wins as f64 / ys.len() as f64;
        if best.as_ref().map_or(true, |(_, _, v)| score > *v) {
            best = Some((s, b, score));
        }
    }
    Ok(best)
}

/// `T` over the small-bias coordinates with `I_T^1(h) ≥ 1 - ε/2`: empty if
/// `h` is already likely, else a random subset when the size bound allows,
/// else greedy.
pub(crate) fn small_bias_part(
    h: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    gamma: f64,
    seed: u64,
    trials: u64,
    trace: &mut Trace,
) -> Result<Coalition> {
    let target = 1.0 - eps / 2.0;
    let empty = certify(h, mu, &Coalition::empty(), 1, seed)?;
    trace.param("indicator_mass", empty.value);
    if empty.meets(target) {
        return Ok(Coalition::empty());
    }
    let k = h.n();
    if k >= 2 && empty.meets(gamma) {
        let min_bias = mu.biases().iter().copied().fold(f64::INFINITY, f64::min);
        let need = min_subset_size(k, min_bias * (1.0 - 1e-12), gamma)?;
        trace.param("m_required", need as f64);
        if need <= k {
            let out = random_small_bias(h, mu, None, gamma, need, trials, seed)?;
            if out.is_certified() {
                trace.absorb("random", out.trace);
                return Ok(out.coalition);
            }
            trace.flag("random-small-bias-missed");
        } else {
            trace.flag("subset-bound-exceeds-coordinates");
        }
    }
    if !empty.meets(eps / 2.0) {
        trace.flag("indicator-mass-too-small");
        return Ok(Coalition::empty());
    }
    let out = greedy_small_bias(h, mu, eps / 2.0, 1, k)?;
    let coalition = out.coalition.clone();
    trace.absorb("greedy", out.trace);
    Ok(coalition)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> (RangedFunction, ProductMeasure) {
        let f = RangedFunction::xor(vec![RangedFunction::majority(9).unwrap(), RangedFunction::or(7).unwrap()]).unwrap();
        let mut biases = vec![0.5; 9];
        biases.extend([1.0 / 16.0; 7]);
        (f, ProductMeasure::new(biases).unwrap())
    }

    #[test]
    fn mixed_instance_certifies() {
        let (f, mu) = mixed();
        let out = find_single_round(&f, &mu, 0.3, 1, SingleRoundParams::default()).unwrap();
        assert!(out.is_certified());
        assert!(out.coalition.len() < 16);
        assert!(out.certificate.is_exact() && out.certificate.value >= 0.7);
    }

    #[test]
    fn all_biased_reduces_to_boosted() {
        let f = RangedFunction::or(16).unwrap();
        let mu = ProductMeasure::uniform_bias(16, 1.0 / 16.0).unwrap();
        let out = find_single_round(&f, &mu, 0.25, 2, SingleRoundParams::default()).unwrap();
        assert!(out.is_certified());
        assert!(out.trace.flags.iter().any(|f| f == "no-small-bias-part"));
    }

    #[test]
    fn all_unbiased_reduces_to_small_bias() {
        let f = RangedFunction::majority(9).unwrap();
        let out = find_single_round(&f, &ProductMeasure::uniform(9), 0.2, 0, SingleRoundParams::default()).unwrap();
        assert!(out.is_certified());
        assert!(out.trace.flags.iter().any(|f| f == "no-biased-part"));
    }

    #[test]
    fn rejects_heavy_bias() {
        let f = RangedFunction::or(8).unwrap();
        let mu = ProductMeasure::uniform_bias(8, 0.9).unwrap();
        assert!(matches!(
            find_single_round(&f, &mu, 0.25, 0, SingleRoundParams::default()),
            Err(Error::Precondition(_))
        ));
    }
}
