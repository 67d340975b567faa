//! Coalitions over coordinates of small bias.

use rand::seq::index::sample as sample_indices;

use super::{certify, scan_trials, stream, Attempt, SearchOutcome, Trace};
use crate::error::{invalid, Error, Result};
use crate::functions::{RangedFunction, Source};
use crate::influence::{self, Coalition, Mode, EXACT_FREE_LIMIT};
use crate::measures::ProductMeasure;

/// Writes `p = c^t` with `c ∈ (1/4, 3/4)` and `t` minimal.
pub fn decompose_bias(p: f64, alpha: f64) -> Result<(f64, u32)> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1/2)")));
    }
    if !(p > alpha && p <= 0.5) {
        return Err(invalid("p", format!("{p} is outside ({alpha}, 1/2]")));
    }
    let mut t = 1u32;
    while !(0.25f64.powi(t as i32) < p && p < 0.75f64.powi(t as i32)) {
        t += 1;
    }
    Ok((p.powf(1.0 / f64::from(t)), t))
}

/// Each coordinate `i` replaced by the AND of `t_i` coordinates of bias `c_i`,
/// which leaves the law of the function unchanged.
#[derive(Debug, Clone)]
pub struct AndExpansion {
    pub function: RangedFunction,
    pub measure: ProductMeasure,
    /// `t_i` for every original coordinate.
    pub blocks: Vec<usize>,
}

impl AndExpansion {
    /// Original coordinate owning each expanded coordinate.
    pub fn owners(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, &t)| std::iter::repeat(i).take(t))
            .collect()
    }
}

pub fn and_expansion(f: &RangedFunction, mu: &ProductMeasure, alpha: f64) -> Result<AndExpansion> {
    if f.n() != mu.n() {
        return Err(Error::ArityMismatch { expected: f.n(), got: mu.n() });
    }
    let mut blocks = Vec::with_capacity(mu.n());
    let mut biases = Vec::new();
    for &p in mu.biases() {
        let (c, t) = decompose_bias(p, alpha)?;
        blocks.push(t as usize);
        biases.extend(std::iter::repeat(c).take(t as usize));
    }
    if biases.len() > 64 {
        return Err(Error::BudgetExceeded { what: format!("expansion to {} coordinates", biases.len()), limit: 64 });
    }
    Ok(AndExpansion {
        function: RangedFunction::and_blocks(f.clone(), blocks.clone())?,
        measure: ProductMeasure::new(biases)?,
        blocks,
    })
}

/// The original coordinates touched by an expanded coalition. Owning a
/// coordinate lets the coalition realize any value its block could produce.
pub fn project_expanded(expansion: &AndExpansion, s: &Coalition) -> Result<Coalition> {
    let owners = expansion.owners();
    s.check(owners.len())?;
    let mut members: Vec<usize> = s.members().iter().map(|&j| owners[j]).collect();
    members.dedup();
    Coalition::new(members, expansion.blocks.len())
}

/// `⌈n log₂(1/α) / (2γ log₂ n)⌉`.
pub fn min_subset_size(n: usize, alpha: f64, gamma: f64) -> Result<usize> {
    if n < 2 {
        return Err(invalid("n", "need at least two coordinates"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("gamma", format!("{gamma} is outside (0, 1]")));
    }
    let n_f = n as f64;
    Ok((n_f * (1.0 / alpha).log2() / (2.0 * gamma * n_f.log2())).ceil() as usize)
}

fn probability_mode(n: usize, seed: u64) -> Mode {
    if n <= EXACT_FREE_LIMIT {
        Mode::Exact
    } else {
        Mode::monte_carlo(seed)
    }
}

/// Samples uniform `m`-subsets until one certifies `I_S^1(h) ≥ 1 - γ`.
///
/// `alpha` defaults to just below the smallest bias, the value that makes
/// the size requirement on `m` weakest.
#[allow(clippy::too_many_arguments)]
pub fn random_small_bias(
    h: &RangedFunction,
    mu: &ProductMeasure,
    alpha: Option<f64>,
    gamma: f64,
    m: usize,
    trials: u64,
    seed: u64,
) -> Result<SearchOutcome> {
    let n = h.n();
    if n != mu.n() {
        return Err(Error::ArityMismatch { expected: n, got: mu.n() });
    }
    if !h.is_boolean() {
        return Err(invalid("h", "must be Boolean"));
    }
    let min_bias = mu.biases().iter().copied().fold(f64::INFINITY, f64::min);
    let alpha = alpha.unwrap_or(min_bias * (1.0 - 1e-12));
    if let Some(&p) = mu.biases().iter().find(|&&p| !(p > alpha && p <= 0.5)) {
        return Err(Error::Precondition(format!("bias {p} is outside ({alpha}, 1/2]")));
    }
    let mass = influence::value_probability(h, mu, Some(1), probability_mode(n, seed))?;
    if !mass.meets(gamma) {
        return Err(Error::Precondition(format!("E[h] = {:.6} is below gamma = {gamma}", mass.value)));
    }
    let need = min_subset_size(n, alpha, gamma)?;
    if m < need || m > n {
        return Err(Error::Precondition(format!("subset size {m} is outside [{need}, {n}]")));
    }

    let threshold = 1.0 - gamma;
    let mut trace = Trace::default();
    trace.param("alpha", alpha);
    trace.param("gamma", gamma);
    trace.param("m", m as f64);
    trace.param("expectation", mass.value);
    h.ensure_table();
    let scan = scan_trials(trials, threshold, |j| {
        let mut rng = stream(seed, j);
        let coalition = Coalition::new(sample_indices(&mut rng, n, m).into_iter(), n)?;
        let certificate = certify(h, mu, &coalition, 1, seed ^ j)?;
        Ok(Attempt { coalition, target: 1, certificate })
    })?;
    trace.count("trials", scan.trials_used);
    if !scan.success {
        trace.flag("random-small-bias-exhausted");
    }
    let a = scan.attempt;
    trace.stage("subset", &a.coalition, Some(1), Some(a.certificate.value));
    Ok(SearchOutcome::judge(a.coalition, 1, threshold, a.certificate, trace))
}

/// Fixes coordinates one at a time, each time taking the one whose
/// singleton influence toward `b` is largest on the current restriction.
pub fn greedy_small_bias(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    b: u32,
    budget: usize,
) -> Result<SearchOutcome> {
    let n = f.n();
    if n != mu.n() {
        return Err(Error::ArityMismatch { expected: n, got: mu.n() });
    }
    if b >= f.range_size() {
        return Err(invalid("b", format!("{b} is outside the range")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("epsilon", format!("{eps} is outside (0, 1)")));
    }
    let mode = probability_mode(n, 0);
    let start = influence::value_probability(f, mu, Some(b), mode)?;
    if !start.meets(eps) {
        return Err(Error::Precondition(format!("Pr[f = {b}] = {:.6} is below epsilon = {eps}", start.value)));
    }

    let threshold = 1.0 - eps;
    let mut trace = Trace::default();
    trace.param("epsilon", eps);
    trace.param("budget", budget as f64);
    let mut sources: Vec<Source> = (0..n).map(Source::Coord).collect();
    let mut fixed: Vec<usize> = Vec::new();
    let mut current = start.value;
    while current < threshold && fixed.len() < budget {
        let g = RangedFunction::embed(f.clone(), n, sources.clone())?;
        g.ensure_table();
        let mut pick: Option<(usize, f64)> = None;
        for k in (0..n).filter(|k| !fixed.contains(k)) {
            let single = Coalition::new([k], n)?;
            let v = influence::coalition_influence(&g, mu, &single, b, mode)?.value;
            if pick.map_or(true, |(_, best)| v > best + influence::FLOAT_SLACK) {
                pick = Some((k, v));
            }
        }
        let Some((k, _)) = pick else { break };
        let mut choice = (false, f64::NEG_INFINITY);
        for value in [false, true] {
            let mut trial = sources.clone();
            trial[k] = Source::Const(value);
            let h = RangedFunction::embed(f.clone(), n, trial)?;
            let p = influence::value_probability(&h, mu, Some(b), mode)?.value;
            if p > choice.1 + influence::FLOAT_SLACK {
                choice = (value, p);
            }
        }
        sources[k] = Source::Const(choice.0);
        fixed.push(k);
        current = choice.1;
        let so_far = Coalition::new(fixed.iter().copied(), n)?;
        trace.stage(&format!("fix {}={}", k + 1, u8::from(choice.0)), &so_far, Some(b), Some(current));
    }
    trace.count("steps", fixed.len() as u64);
    let coalition = Coalition::new(fixed, n)?;
    let certificate = certify(f, mu, &coalition, b, 0)?;
    let mut outcome = SearchOutcome::judge(coalition, b, threshold, certificate, trace);
    if !outcome.is_certified() {
        outcome.trace.flag("greedy-budget-exhausted");
    }
    Ok(outcome)
}
