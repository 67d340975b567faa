//! Coalitions for functions with a large range.
//!
//! The code of the target is forced one bit at a time: a coalition `S₁`
//! fixes the leading bit, every input is moved to the first point of its
//! block that realizes it, and the remaining bits are forced on the function
//! read off at that point.

use std::collections::BTreeMap;

use rand::RngCore;

use super::{candidate_values, scan_trials, stream, Attempt, SearchOutcome, Status, Trace};
use crate::bits;
use crate::error::{invalid, Error, Result};
use crate::functions::{bundle_range, Output, RangedFunction};
use crate::influence::{self, Coalition, InfluenceEstimate, Mode, EXACT_FREE_LIMIT};
use crate::measures::ProductMeasure;

/// `k(m, t, ε) = ⌈C t m³ ε⁻² ln(tm/ε)⌉`.
pub fn range_k(m: usize, t: usize, eps: f64, c: f64) -> usize {
    let (m, t) = (m as f64, t as f64);
    (c * t * m.powi(3) / (eps * eps) * (t * m / eps).ln()).ceil().max(1.0) as usize
}

/// Largest †-mass tolerated under any boost up to `2t`: `ε⁴ / 2¹⁶`.
pub fn dagger_threshold(eps: f64) -> f64 {
    eps.powi(4) / 65536.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeParams {
    /// The constant `C` in `k(m, t, ε)`.
    pub c: f64,
    /// Supports sampled per base case.
    pub trials: u64,
    /// Full restarts when the final certificate misses.
    pub retries: u32,
}

impl Default for RangeParams {
    fn default() -> Self {
        RangeParams { c: 1.0, trials: 20, retries: 3 }
    }
}

/// Finds `S` and a code `b` with `I_S^{b,ℓ}(f) ≥ 1 - ε` for every `ℓ ≤ t`.
pub fn large_range_coalition(
    f: &RangedFunction,
    mu: &ProductMeasure,
    t: usize,
    eps: f64,
    seed: u64,
    params: RangeParams,
) -> Result<SearchOutcome> {
    check_args(f, mu, t, eps)?;
    let threshold = dagger_threshold(eps);
    for level in 1..=2 * t {
        let boosted = mu.boost(level)?;
        let mass = influence::value_probability(f, &boosted, None, mode_for(f.n(), seed))?;
        if mass.value + mass.radius >= threshold {
            return Err(Error::DaggerMass { level, mass: mass.value, threshold });
        }
    }
    search(f, mu, t, eps, seed, params)
}

/// The search without the †-mass check, for callers whose † marks inputs
/// they already tolerate losing.
pub(crate) fn large_range_unchecked(
    f: &RangedFunction,
    mu: &ProductMeasure,
    t: usize,
    eps: f64,
    seed: u64,
    params: RangeParams,
) -> Result<SearchOutcome> {
    check_args(f, mu, t, eps)?;
    search(f, mu, t, eps, seed, params)
}

fn check_args(f: &RangedFunction, mu: &ProductMeasure, t: usize, eps: f64) -> Result<()> {
    if f.n() != mu.n() {
        return Err(Error::ArityMismatch { expected: f.n(), got: mu.n() });
    }
    if t == 0 {
        return Err(invalid("t", "need at least one boost level"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("epsilon", format!("{eps} is outside (0, 1)")));
    }
    Ok(())
}

fn mode_for(n: usize, seed: u64) -> Mode {
    if n <= EXACT_FREE_LIMIT {
        Mode::Exact
    } else {
        Mode::monte_carlo(seed)
    }
}

fn search(
    f: &RangedFunction,
    mu: &ProductMeasure,
    t: usize,
    eps: f64,
    seed: u64,
    params: RangeParams,
) -> Result<SearchOutcome> {
    let m = f.code_length();
    let target_level = 1.0 - eps;
    let measures = (1..=t).map(|l| mu.boost(l)).collect::<Result<Vec<_>>>()?;
    let mut last: Option<SearchOutcome> = None;
    for attempt in 0..=params.retries {
        let mut trace = Trace::default();
        trace.param("m", m as f64);
        trace.param("t", t as f64);
        trace.param("epsilon", eps);
        trace.param("c", params.c);
        trace.count("attempts", 1);
        let attempt_seed = stream(seed, u64::from(attempt) << 32).next_u64();
        let (coalition, target) = match recurse(f, mu, m, t, eps, params, attempt_seed, 0, &mut trace)? {
            Some(found) => found,
            None => {
                trace.flag("base-case-exhausted");
                let outcome = failed(target_level, trace);
                last = Some(outcome);
                continue;
            }
        };
        let mut boosted_certificates = BTreeMap::new();
        for (i, nu) in measures.iter().enumerate() {
            let mode = mode_for(f.n() - coalition.len(), attempt_seed ^ i as u64);
            boosted_certificates.insert(i + 1, influence::coalition_influence(f, nu, &coalition, target, mode)?);
        }
        let all_met = boosted_certificates.values().all(|c| c.meets(target_level));
        let certificate = boosted_certificates[&1];
        let mut outcome = SearchOutcome::judge(coalition, target, target_level, certificate, trace);
        if !all_met {
            outcome.status = Status::Failed;
        }
        outcome.boosted_certificates = boosted_certificates;
        if outcome.is_certified() {
            return Ok(outcome);
        }
        last = Some(outcome);
    }
    let mut outcome = last.expect("at least one attempt");
    outcome.trace.flag("large-range-retries-exhausted");
    Ok(outcome)
}

fn failed(threshold: f64, trace: Trace) -> SearchOutcome {
    SearchOutcome::judge(Coalition::empty(), 0, threshold, InfluenceEstimate::exact(0.0), trace)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &RangedFunction,
    mu: &ProductMeasure,
    m: usize,
    t: usize,
    eps: f64,
    params: RangeParams,
    seed: u64,
    depth: usize,
    trace: &mut Trace,
) -> Result<Option<(Coalition, u32)>> {
    if m <= 1 {
        let found = base_case(f, mu, t, eps, params, seed, depth, trace)?;
        return Ok(found.map(|a| (a.coalition, a.target)));
    }
    let eps1 = (eps / 8.0).powi(2);
    let eps2 = eps - eps1;
    let shift = m - 1;
    let partition: Vec<u32> = (0..f.range_size()).map(|v| v >> shift).collect();
    let lead = bundle_range(f, &partition)?;
    let Some(first) = base_case(&lead, mu, 2 * t, eps1, params, seed, depth, trace)? else {
        return Ok(None);
    };
    let g = follow_up(f, &lead, &first.coalition, first.target, shift)?;
    let next_seed = stream(seed, 1).next_u64();
    let Some((rest, low)) = recurse(&g, mu, m - 1, t, eps2, params, next_seed, depth + 1, trace)? else {
        return Ok(None);
    };
    Ok(Some((first.coalition.union(&rest), (first.target << shift) | low)))
}

/// `g(x) = f₂(σ(x))`, where `σ(x)` is the first point of the block of `x`
/// that gives the leading bit `b₁`, and `†` when there is none.
fn follow_up(f: &RangedFunction, lead: &RangedFunction, s1: &Coalition, b1: u32, shift: usize) -> Result<RangedFunction> {
    let n = f.n();
    let mask = s1.mask();
    let free = s1.complement(n);
    let low = (1u32 << shift) - 1;
    f.ensure_table();
    lead.ensure_table();
    let values: Vec<Output> = (0..1u64 << free.len())
        .map(|code| {
            let base = bits::spread(code, &free);
            bits::submasks(mask)
                .map(|sub| base | sub)
                .find(|&y| lead.eval_bits(y) == b1)
                .map_or(Output::DAGGER, |y| match f.eval_bits(y) {
                    u32::MAX => Output::DAGGER,
                    v => Output::value(v & low),
                })
        })
        .collect();
    RangedFunction::from_fn(n, (1u32 << shift).max(2), |x| values[bits::gather(x.bits(), &free) as usize])
}

/// Samples `S ∼ μ^{(k)}` until some bit value is forced at every level
/// `ℓ ≤ levels`.
#[allow(clippy::too_many_arguments)]
fn base_case(
    f: &RangedFunction,
    mu: &ProductMeasure,
    levels: usize,
    eps: f64,
    params: RangeParams,
    seed: u64,
    depth: usize,
    trace: &mut Trace,
) -> Result<Option<Attempt>> {
    let k = range_k(1, levels, eps, params.c);
    let support = mu.boost(k)?;
    let measures = (1..=levels).map(|l| mu.boost(l)).collect::<Result<Vec<_>>>()?;
    let values = candidate_values(f, mu, seed)?;
    if values.is_empty() {
        trace.flag("only-dagger");
        return Ok(None);
    }
    let threshold = 1.0 - eps;
    f.ensure_table();
    let scan = scan_trials(params.trials, threshold, |j| {
        let mut rng = stream(seed, j);
        let s = Coalition::new(support.sample(&mut rng).support(), f.n())?;
        let mut pick: Option<Attempt> = None;
        for &b in &values {
            let mut weakest: Option<InfluenceEstimate> = None;
            for (i, nu) in measures.iter().enumerate() {
                let mode = mode_for(f.n() - s.len(), seed ^ j ^ ((i as u64) << 40));
                let est = influence::coalition_influence(f, nu, &s, b, mode)?;
                if weakest.map_or(true, |w| est.value < w.value) {
                    weakest = Some(est);
                }
                if !est.meets(threshold) {
                    break;
                }
            }
            let certificate = weakest.expect("at least one level");
            let success = certificate.meets(threshold);
            if success || pick.as_ref().map_or(true, |p| certificate.value > p.certificate.value) {
                pick = Some(Attempt { coalition: s.clone(), target: b, certificate });
            }
            if success {
                break;
            }
        }
        Ok(pick.expect("at least one candidate value"))
    })?;
    trace.param(&format!("k.{depth}"), k as f64);
    trace.count(&format!("trials.{depth}"), scan.trials_used);
    let a = scan.attempt;
    trace.stage(&format!("bit.{depth}"), &a.coalition, Some(a.target), Some(a.certificate.value));
    Ok(scan.success.then_some(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::boosted_coalition;

    #[test]
    fn schedule_values() {
        assert_eq!(range_k(1, 1, 0.25, 1.0), 23);
        assert!((dagger_threshold(0.3) - 0.0081 / 65536.0).abs() < 1e-18);
    }

    #[test]
    fn single_bit_matches_boosted_checker() {
        let f = RangedFunction::or(16).unwrap();
        let mu = ProductMeasure::uniform_bias(16, 1.0 / 16.0).unwrap();
        let out = large_range_coalition(&f, &mu, 1, 0.25, 3, RangeParams::default()).unwrap();
        assert!(out.is_certified());
        assert_eq!(out.target, 1);
        let other = crate::search::certify(&f, &mu, &out.coalition, out.target, 0).unwrap();
        assert!(other.meets(0.75));
        assert!(boosted_coalition(&f, &mu, 0.25, 5, 3).unwrap().is_certified());
    }

    #[test]
    fn or_pair_forces_both_bits() {
        let or = RangedFunction::or(16).unwrap();
        let f = RangedFunction::tuple(vec![or.clone(), or]).unwrap();
        let mu = ProductMeasure::uniform_bias(16, 1.0 / 16.0).unwrap();
        let out = large_range_coalition(&f, &mu, 2, 0.3, 1, RangeParams::default()).unwrap();
        assert!(out.is_certified());
        assert_eq!(out.target, 3);
        assert!(out.boosted_certificates.values().all(|c| c.value >= 0.7));
    }

    #[test]
    fn random_two_bit_certifies_at_both_levels() {
        let mu = ProductMeasure::uniform_bias(12, 1.0 / 12.0).unwrap();
        for seed in 0..2 {
            let f = RangedFunction::random(12, seed, vec![0.25; 4]).unwrap();
            let out = large_range_coalition(&f, &mu, 2, 0.3, seed, RangeParams::default()).unwrap();
            assert!(out.is_certified());
            for l in 1..=2 {
                let exact = influence::boosted_influence(&f, &mu, &out.coalition, out.target, l, Mode::Exact).unwrap();
                assert!(exact.value >= 0.7);
            }
        }
    }

    #[test]
    fn planted_dagger_is_rejected() {
        let mu = ProductMeasure::uniform_bias(12, 1.0 / 12.0).unwrap();
        let f = RangedFunction::random_with_dagger(12, 7, vec![0.25; 4], 0.01).unwrap();
        let err = large_range_coalition(&f, &mu, 2, 0.3, 0, RangeParams::default()).unwrap_err();
        assert!(matches!(err, Error::DaggerMass { .. }));
    }
}
