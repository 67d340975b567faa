//! Acceptance suite: one line per criterion, tolerances and runtime limits
//! pinned. Criteria whose literal statement disagrees with the exact values
//! are run as written and reported, alongside a line checking the exact value;
//! they do not fail the run.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use coinflip::adversary::optimal_influence;
use coinflip::cli::{self, Command, ExperimentConfig};
use coinflip::functions::{zoo, MultiRoundProtocol, RangedFunction};
use coinflip::influence::{
    boosted_influence, certify_resilience, coalition_influence, hoeffding_radius, Coalition, Mode, Resilience,
};
use coinflip::measures::{BitVector, OrBoosted, ProductMeasure, Sampler};
use coinflip::search::{
    boosted_success_rates, decompose_bias, find_single_round, greedy_small_bias, large_range_coalition,
    multi_round_coalition, MultiRoundParams, RangeParams, SingleRoundParams, Status,
};
use coinflip::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Suite {
    unexpected: Vec<String>,
}

impl Suite {
    /// Runs one check. `known` marks statements already recorded as not
    /// attainable as written; their failure is reported but tolerated.
    fn check(&mut self, id: &str, title: &str, limit: Duration, known: bool, body: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let v = body();
        let took = start.elapsed();
        let pass = v.pass && took < limit;
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id:<4} {tag:<12} {title}: {} [{:.2}s, limit {}s]",
            v.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if !pass && !known {
            self.unexpected.push(id.to_string());
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn sparse(n: usize) -> ProductMeasure {
    ProductMeasure::uniform_bias(n, 1.0 / n as f64).unwrap()
}

fn exact(f: &RangedFunction, mu: &ProductMeasure, s: &Coalition, b: u32) -> f64 {
    coalition_influence(f, mu, s, b, Mode::Exact).unwrap().value
}

// ---- 1 ----

fn or_one_every_nonempty_set() -> (bool, usize) {
    let f = RangedFunction::or(16).unwrap();
    let mu = sparse(16);
    let bad = (1u64..1 << 16)
        .into_par_iter()
        .filter(|&mask| {
            let s = Coalition::new((0..16).filter(|i| mask >> i & 1 == 1), 16).unwrap();
            (exact(&f, &mu, &s, 1) - 1.0).abs() > 1e-12
        })
        .count();
    (bad == 0, bad)
}

fn or_zero_deviation(closed: impl Fn(usize) -> f64) -> f64 {
    let f = RangedFunction::or(16).unwrap();
    let mu = sparse(16);
    (0..16)
        .map(|s| (exact(&f, &mu, &Coalition::new(0..s, 16).unwrap(), 0) - closed(s)).abs())
        .fold(0.0, f64::max)
}

fn criterion_1_as_stated() -> Verdict {
    let (ones, bad) = or_one_every_nonempty_set();
    let dev = or_zero_deviation(|s| 1.0 - (15.0f64 / 16.0).powi(16 - s as i32));
    verdict(
        ones && dev <= 1e-12,
        format!("I^1 = 1 on all 65535 nonempty S ({bad} misses); I^0 vs 1-(15/16)^(16-s): max deviation {dev:.3e}"),
    )
}

fn criterion_1_ones() -> Verdict {
    let (ones, bad) = or_one_every_nonempty_set();
    verdict(ones, format!("I^1 = 1 on all 65535 nonempty S ({bad} misses)"))
}

fn criterion_1_exact() -> Verdict {
    let dev = or_zero_deviation(|s| (15.0f64 / 16.0).powi(16 - s as i32));
    verdict(dev <= 1e-12, format!("I^0 vs (15/16)^(16-s): max deviation {dev:.3e}"))
}

// ---- 2 ----

fn criterion_2() -> Verdict {
    let mu = ProductMeasure::new((1..=6).map(|i| i as f64 / 13.0).collect()).unwrap();
    let identity = mu.boost(1).unwrap() == mu;
    let mut worst = 0.0f64;
    for pi in 1..=50 {
        let p = pi as f64 / 100.0;
        for t in 1..=8 {
            let b = ProductMeasure::uniform_bias(1, p).unwrap().boost(t).unwrap().bias(0);
            worst = worst.max((b - (1.0 - (1.0 - p).powi(t as i32))).abs());
        }
    }
    let draws = 100_000u64;
    let radius = hoeffding_radius(draws);
    let mut empirical_ok = true;
    let mut worst_emp = 0.0f64;
    for (i, &(p, t)) in [(0.01, 8), (0.05, 4), (0.2, 2), (0.5, 3)].iter().enumerate() {
        let base = ProductMeasure::new(vec![p, p / 2.0, (p * 1.5).min(1.0)]).unwrap();
        let boosted = base.boost(t).unwrap();
        let sampler = OrBoosted { inner: base, t };
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut counts = [0u64; 8];
        for _ in 0..draws {
            counts[sampler.draw(&mut rng).bits() as usize] += 1;
        }
        for (x, &c) in counts.iter().enumerate() {
            let gap = (c as f64 / draws as f64 - boosted.mass(&BitVector::new(3, x as u64)).unwrap()).abs();
            worst_emp = worst_emp.max(gap);
            empirical_ok &= gap <= radius;
        }
    }
    verdict(
        identity && worst <= 1e-12 && empirical_ok,
        format!(
            "boost(mu,1)=mu: {identity}; closed-form grid max error {worst:.1e}; empirical max gap {worst_emp:.4} (radius {radius:.4})"
        ),
    )
}

// ---- 3 ----

fn criterion_3() -> Verdict {
    let measures = [ProductMeasure::uniform(3), ProductMeasure::uniform_bias(3, 0.2).unwrap()];
    let mut worst = 0.0f64;
    let mut checks = 0;
    for table in 0..256u32 {
        let f = RangedFunction::from_fn(3, 2, |x| coinflip::functions::Output::value(table >> x.bits() & 1)).unwrap();
        for mu in &measures {
            let proto = MultiRoundProtocol::single(f.clone(), mu.clone()).unwrap();
            for mask in 0..8u64 {
                let s = Coalition::new((0..3).filter(|i| mask >> i & 1 == 1), 3).unwrap();
                for b in 0..2 {
                    let dp = optimal_influence(&proto, &s, b).unwrap().value;
                    worst = worst.max((dp - exact(&f, mu, &s, b)).abs());
                    checks += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-12, format!("{checks} cases, max |DP - block influence| = {worst:.1e}"))
}

// ---- 4 ----

fn criterion_4() -> Verdict {
    let mu = sparse(16);
    let functions = zoo(16, 2024).unwrap();
    let mut worst = (String::new(), f64::MAX);
    for (name, f) in &functions {
        let rates = boosted_success_rates(f, &mu, 0.25, 56, 400, 7).unwrap();
        let best = rates.iter().copied().fold(0.0, f64::max);
        if best < worst.1 {
            worst = (name.clone(), best);
        }
    }
    verdict(
        functions.len() >= 20 && worst.1 > 0.75 - 0.07,
        format!("{} functions, lowest best-b success fraction {:.4} ({}) vs 0.68", functions.len(), worst.1, worst.0),
    )
}

// ---- 5 ----

fn criterion_5(closed: impl Fn(usize) -> f64, tol: f64, label: &str) -> Verdict {
    let f = RangedFunction::or(16).unwrap();
    let out = greedy_small_bias(&f, &sparse(16), 0.25, 0, 4).unwrap();
    let s = out.coalition.len();
    let gap = (out.certificate.value - closed(s)).abs();
    verdict(
        out.status == Status::Failed && gap <= tol,
        format!(
            "status {:?}, |S| = {s}, certificate {:.4} vs {label} = {:.4} (gap {gap:.4}, tolerance {tol})",
            out.status,
            out.certificate.value,
            closed(s)
        ),
    )
}

// ---- 6 ----

fn mixed() -> (RangedFunction, ProductMeasure) {
    let f = RangedFunction::xor(vec![RangedFunction::majority(9).unwrap(), RangedFunction::or(7).unwrap()]).unwrap();
    let mut biases = vec![0.5; 9];
    biases.extend([1.0 / 16.0; 7]);
    (f, ProductMeasure::new(biases).unwrap())
}

fn criterion_6() -> Verdict {
    let (f, mu) = mixed();
    let mut good = 0;
    let mut sizes = Vec::new();
    for seed in 0..10 {
        let out = find_single_round(&f, &mu, 0.3, seed, SingleRoundParams::default()).unwrap();
        let again = exact(&f, &mu, &out.coalition, out.target);
        if out.is_certified() && out.certificate.is_exact() && again >= 0.7 && out.coalition.len() <= 12 {
            good += 1;
        }
        sizes.push(out.coalition.len());
    }
    verdict(good >= 8, format!("{good}/10 seeds certified with exact certificate >= 0.7, sizes {sizes:?}"))
}

// ---- 7 ----

fn two_bit(seed: u64) -> RangedFunction {
    RangedFunction::random(12, seed, vec![0.25; 4]).unwrap()
}

fn criterion_7() -> Verdict {
    let mu = sparse(12);
    let mut all_ok = true;
    let mut lows = Vec::new();
    let mut sizes = Vec::new();
    for seed in 0..5 {
        let f = two_bit(seed);
        let out = large_range_coalition(&f, &mu, 2, 0.3, seed, RangeParams::default()).unwrap();
        let low = (1..=2)
            .map(|l| boosted_influence(&f, &mu, &out.coalition, out.target, l, Mode::Exact).unwrap().value)
            .fold(1.0, f64::min);
        all_ok &= out.is_certified() && low >= 0.7;
        lows.push(format!("{low:.3}"));
        sizes.push(out.coalition.len());
    }
    let planted = RangedFunction::random_with_dagger(12, 99, vec![0.25; 4], 0.01).unwrap();
    let rejected = matches!(
        large_range_coalition(&planted, &mu, 2, 0.3, 0, RangeParams::default()),
        Err(Error::DaggerMass { .. })
    );
    verdict(
        all_ok && rejected,
        format!("min exact I^(b,l) over l=1,2 per seed {lows:?}, |S| {sizes:?}; planted dagger rejected: {rejected}"),
    )
}

// ---- 8 ----

fn multi_instances() -> Vec<(String, MultiRoundProtocol)> {
    let measures = vec![sparse(8), ProductMeasure::uniform(8)];
    let mut out = vec![(
        "or-xor-maj".to_string(),
        MultiRoundProtocol::new(
            RangedFunction::xor(vec![RangedFunction::or(8).unwrap(), RangedFunction::majority(8).unwrap()]).unwrap(),
            measures.clone(),
        )
        .unwrap(),
    )];
    for seed in 100..105 {
        out.push((
            format!("random{seed}"),
            MultiRoundProtocol::new(RangedFunction::random(16, seed, vec![0.5, 0.5]).unwrap(), measures.clone()).unwrap(),
        ));
    }
    out
}

fn criterion_8() -> Verdict {
    let mut passing = 0;
    let mut notes = Vec::new();
    for (name, proto) in multi_instances() {
        let wins = (0..5)
            .filter(|&seed| {
                let out = multi_round_coalition(&proto, 0.3, seed, MultiRoundParams::default()).unwrap();
                out.is_certified() && optimal_influence(&proto, &out.coalition, out.target).unwrap().value >= 0.7
            })
            .count();
        if wins == 5 {
            passing += 1;
        }
        notes.push(format!("{name} {wins}/5"));
    }
    let parity = MultiRoundProtocol::new(
        RangedFunction::parity(16).unwrap(),
        vec![ProductMeasure::uniform(8), ProductMeasure::uniform(8)],
    )
    .unwrap();
    let control = multi_round_coalition(&parity, 0.3, 0, MultiRoundParams::default()).unwrap();
    let control_ok = control.certificate.value == 1.0 && control.coalition.len() == 1;
    verdict(
        passing >= 4 && control_ok,
        format!("{passing}/6 instances certified on every seed ({}); parity control ok: {control_ok}", notes.join(", ")),
    )
}

// ---- 9 ----

fn criterion_9() -> Verdict {
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut points = 0;
    for alpha in [0.2, 0.05, 0.01] {
        let cap = (1.0f64 / alpha).log(4.0).ceil() as u32;
        for i in 1..=1000 {
            let p = alpha + (0.5 - alpha) * i as f64 / 1000.0;
            let (c, t) = decompose_bias(p, alpha).unwrap();
            worst = worst.max((c.powi(t as i32) - p).abs());
            ok &= c > 0.25 && c < 0.75 && t <= cap;
            points += 1;
        }
    }
    verdict(ok && worst <= 1e-12, format!("{points} grid points, max |c^t - p| = {worst:.1e}, ranges ok: {ok}"))
}

// ---- 10 ----

fn criterion_10() -> Verdict {
    let maj = certify_resilience(&RangedFunction::majority(5).unwrap(), &ProductMeasure::uniform(5), 0.1, 1).unwrap();
    let maj_ok = matches!(maj, Resilience::Resilient { .. });
    let or = certify_resilience(&RangedFunction::or(16).unwrap(), &sparse(16), 0.25, 1).unwrap();
    let or_ok = matches!(&or, Resilience::Witness { b: 1, coalition, .. } if coalition.len() <= 1);
    verdict(maj_ok && or_ok, format!("MAJ5: {maj:?}; OR16: {or:?}"))
}

// ---- 11 ----

fn config(command: Command) -> ExperimentConfig {
    ExperimentConfig { command: Some(command), ..ExperimentConfig::default() }
}

fn determinism_configs() -> Vec<ExperimentConfig> {
    let mut out = vec![ExperimentConfig {
        n: Some(16),
        epsilon: Some(0.25),
        k: Some(56),
        trials: Some(400),
        seed: Some(7),
        ..config(Command::Zoo)
    }];
    out.push(ExperimentConfig {
        function: Some("or".into()),
        measure: Some("p:1/16:16".into()),
        coalition: Some("1;2;3;4".into()),
        b: Some(0),
        ..config(Command::Influence)
    });
    for seed in 0..10 {
        out.push(ExperimentConfig {
            function: Some("xor:majority@9+or@7".into()),
            measure: Some("uniform:9+p:1/16:7".into()),
            epsilon: Some(0.3),
            seed: Some(seed),
            ..config(Command::SearchSingle)
        });
    }
    for seed in 0..5 {
        out.push(ExperimentConfig {
            function: Some(format!("random:{seed}:0.25,0.25,0.25,0.25")),
            measure: Some("p:1/12:12".into()),
            t: Some(2),
            epsilon: Some(0.3),
            seed: Some(seed),
            ..config(Command::SearchRange)
        });
    }
    let protocols = std::iter::once("or-xor-maj:8".to_string()).chain((100..105).map(|s| format!("random:{s}:8")));
    for p in protocols {
        for seed in 0..5 {
            out.push(ExperimentConfig {
                protocol: Some(p.clone()),
                epsilon: Some(0.3),
                seed: Some(seed),
                ..config(Command::SearchMulti)
            });
        }
    }
    out
}

fn digest_run(configs: &[ExperimentConfig]) -> String {
    let mut h = Sha256::new();
    for cfg in configs {
        let report = cli::run(cfg).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        for line in String::from_utf8(csv).unwrap().lines() {
            h.update(line.rsplit_once(',').unwrap().0.as_bytes());
            h.update(b"\n");
        }
        h.update(serde_json::to_vec(&report.sidecar()).unwrap());
    }
    hex::encode(h.finalize())
}

fn criterion_11() -> Verdict {
    let configs = determinism_configs();
    let digests: Vec<String> = (0..3).map(|_| digest_run(&configs)).collect();
    let same = digests.iter().all(|d| d == &digests[0]);
    verdict(same, format!("{} runs over 3 passes, sha256 {}", configs.len(), &digests[0][..16]))
}

fn main() -> ExitCode {
    let mut suite = Suite { unexpected: Vec::new() };
    suite.check("1", "OR closed forms as stated", secs(1), true, criterion_1_as_stated);
    suite.check("1a", "OR toward 1", secs(1), false, criterion_1_ones);
    suite.check("1x", "OR I^0 exact closed form", secs(1), false, criterion_1_exact);
    suite.check("2", "boost laws", secs(10), false, criterion_2);
    suite.check("3", "one-round game equals block influence", secs(30), false, criterion_3);
    suite.check("4", "boosted supports on the zoo", secs(300), false, criterion_4);
    suite.check("5", "greedy toward 0 on OR as stated", secs(30), true, || {
        criterion_5(|s| 1.0 - (15.0f64 / 16.0).powi(16 - s as i32), 0.05, "1-(15/16)^(16-|S|)")
    });
    suite.check("5x", "greedy toward 0 on OR, exact value", secs(30), false, || {
        criterion_5(|s| (15.0f64 / 16.0).powi(16 - s as i32), 1e-12, "(15/16)^(16-|S|)")
    });
    suite.check("6", "single-round combined search", secs(300), false, criterion_6);
    suite.check("7", "large-range recursion", secs(300), false, criterion_7);
    suite.check("8", "multi-round search", secs(600), false, criterion_8);
    suite.check("9", "bias decomposition grid", secs(1), false, criterion_9);
    suite.check("10", "resilience certification", secs(1), false, criterion_10);
    suite.check("11", "determinism", secs(1200), false, criterion_11);
    if suite.unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {}", suite.unexpected.join(", "));
        ExitCode::FAILURE
    }
}
