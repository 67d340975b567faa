//! Coalitions drawn from a boosted measure.
//!
//! A support `S ∼ μ^{(k)}` with `k = ⌈10 ln(1/ε)/ε⌉` pushes the function to
//! some value with probability above `1 - ε`, for arbitrary `μ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{candidate_values, certify, scan_trials, stream, Attempt, SearchOutcome, Trace};
use crate::error::{invalid, Error, Result};
use crate::functions::RangedFunction;
use crate::influence::{hoeffding_radius, Coalition};
use crate::measures::ProductMeasure;

/// `k = ⌈10 ln(1/ε) / ε⌉`.
pub fn prop22_k(eps: f64) -> usize {
    (10.0 * (1.0 / eps).ln() / eps).ceil() as usize
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(invalid("epsilon", format!("{eps} is outside (0, 1/2]")));
    }
    Ok(())
}

fn check_pair(f: &RangedFunction, mu: &ProductMeasure) -> Result<()> {
    if f.n() != mu.n() {
        return Err(Error::ArityMismatch { expected: f.n(), got: mu.n() });
    }
    Ok(())
}

/// Samples up to `trials` supports of `μ^{(k)}` and returns the first whose
/// certified influence toward some value reaches `1 - ε`.
pub fn boosted_coalition(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<SearchOutcome> {
    check_eps(eps)?;
    check_pair(f, mu)?;
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let k = prop22_k(eps);
    let boosted = mu.boost(k)?;
    let values = candidate_values(f, mu, seed)?;
    if values.is_empty() {
        return Err(Error::Precondition("the function never takes a value other than †".into()));
    }
    let threshold = 1.0 - eps;
    f.ensure_table();

    let mut trace = Trace::default();
    trace.param("epsilon", eps);
    trace.param("k", k as f64);

    let scan = scan_trials(trials, threshold, |j| {
        let mut rng = stream(seed, j);
        let s = Coalition::new(boosted.sample(&mut rng).support(), f.n())?;
        let mut pick: Option<Attempt> = None;
        for &b in &values {
            let certificate = certify(f, mu, &s, b, seed ^ j)?;
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
    trace.count("trials", scan.trials_used);
    if !scan.success {
        trace.flag("boosted-search-exhausted");
    }
    let a = scan.attempt;
    trace.stage("support", &a.coalition, Some(a.target), Some(a.certificate.value));
    Ok(SearchOutcome::judge(a.coalition, a.target, threshold, a.certificate, trace))
}

/// For each value `b`, the fraction of `trials` supports of `μ^{(k)}` whose
/// certified influence toward `b` reaches `1 - ε`.
pub fn boosted_success_rates(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    check_pair(f, mu)?;
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let boosted = mu.boost(k.max(1))?;
    let range = f.range_size();
    f.ensure_table();
    let hits = (0..trials)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, j);
            let s = Coalition::new(boosted.sample(&mut rng).support(), f.n())?;
            (0..range)
                .map(|b| Ok(u64::from(certify(f, mu, &s, b, seed ^ j)?.meets(1.0 - eps))))
                .collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![0u64; range as usize];
    for row in hits {
        for (t, h) in totals.iter_mut().zip(row) {
            *t += h;
        }
    }
    Ok(totals.into_iter().map(|t| t as f64 / trials as f64).collect())
}

/// Which of the two sufficient conditions for a boosted coalition hold,
/// judged by nested sampling with both Hoeffding radii subtracted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// `Pr_x[Pr_y[f(x ∨ y) = b] ≥ 1 - ε] > ε/2`.
    pub condition_i: bool,
    /// `Pr_x[Pr_y[f(x ∨ y) = b] ≥ ε] ≥ 1 - ε/2`.
    pub condition_ii: bool,
    pub fraction_i: f64,
    pub fraction_ii: f64,
    pub outer_radius: f64,
    pub inner_radius: f64,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match (self.condition_i, self.condition_ii) {
            (true, true) => "both",
            (true, false) => "I",
            (false, true) => "II",
            (false, false) => "neither",
        }
    }
}

/// Diagnostic only; the searches do not depend on it.
pub fn classify_conditions(
    f: &RangedFunction,
    mu: &ProductMeasure,
    eps: f64,
    b: u32,
    outer_samples: u64,
    inner_samples: u64,
    seed: u64,
) -> Result<Classification> {
    check_pair(f, mu)?;
    if outer_samples == 0 || inner_samples == 0 {
        return Err(invalid("samples", "need at least one outer and one inner sample"));
    }
    f.ensure_table();
    let inner_radius = hoeffding_radius(inner_samples);
    let outer_radius = hoeffding_radius(outer_samples);
    let flags = (0..outer_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let x = mu.sample(&mut rng).bits();
            let hits = (0..inner_samples)
                .filter(|_| f.eval_bits(x | mu.sample(&mut rng).bits()) == b)
                .count();
            let q = hits as f64 / inner_samples as f64 - inner_radius;
            (q >= 1.0 - eps, q >= eps)
        })
        .collect::<Vec<_>>();
    let frac = |pick: fn(&(bool, bool)) -> bool| flags.iter().filter(|p| pick(p)).count() as f64 / outer_samples as f64;
    let fraction_i = frac(|p| p.0);
    let fraction_ii = frac(|p| p.1);
    Ok(Classification {
        condition_i: fraction_i - outer_radius > eps / 2.0,
        condition_ii: fraction_ii - outer_radius >= 1.0 - eps / 2.0,
        fraction_i,
        fraction_ii,
        outer_radius,
        inner_radius,
    })
}
