//! Rushing coalitions in multi-round protocols.
//!
//! In every round the honest players broadcast first; the coalition sees
//! those bits and then answers. A [`Strategy`] maps the honest history so far
//! (all rounds up to and including the current one) to the coalition's
//! answer. [`optimal_influence`] evaluates the game by backward induction.
//!
//! Histories are packed round-major: the honest bits of round 1 occupy the
//! low bits, in increasing player order. A coalition answer is a code whose
//! most significant bit belongs to the lowest-numbered coalition member, so
//! increasing codes enumerate answers lexicographically.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits;
use crate::error::{invalid, Error, Result};
use crate::functions::MultiRoundProtocol;
use crate::influence::{block_hit, InfluenceEstimate, Mode, Coalition};
use crate::measures::{ProductMeasure, SubcubeMasses};

/// Bound on `r * (n - |B|)` for exact evaluation.
pub const EXACT_GOOD_LIMIT: usize = 22;
/// Bound on `r * |B|`.
pub const EXACT_BAD_LIMIT: usize = 22;
/// Bound on `r * n`, the depth of the full game tree.
pub const EXACT_TREE_LIMIT: usize = 28;

/// A game value, exact unless estimated by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameValue {
    pub value: f64,
    pub certified: bool,
}

/// A deterministic coalition strategy. `tables[i][h]` is the answer code in
/// round `i` (0-based) after honest history `h` of rounds `0..=i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strategy {
    coalition: Coalition,
    n: usize,
    tables: Vec<Vec<u64>>,
}

impl Strategy {
    /// Validates table shapes against the protocol.
    pub fn new(proto: &MultiRoundProtocol, coalition: Coalition, tables: Vec<Vec<u64>>) -> Result<Self> {
        let (r, n) = (proto.rounds(), proto.players());
        coalition.check(n)?;
        let (g, s) = (n - coalition.len(), coalition.len());
        if tables.len() != r {
            return Err(Error::ArityMismatch { expected: r, got: tables.len() });
        }
        if r * g > EXACT_GOOD_LIMIT {
            return Err(Error::BudgetExceeded {
                what: format!("strategy tables over {} honest bits", r * g),
                limit: EXACT_GOOD_LIMIT,
            });
        }
        for (i, t) in tables.iter().enumerate() {
            if t.len() != 1usize << ((i + 1) * g) {
                return Err(invalid("tables", format!("round {} table has {} entries", i + 1, t.len())));
            }
            if t.iter().any(|&beta| beta >> s != 0) {
                return Err(invalid("tables", format!("round {} answer wider than the coalition", i + 1)));
            }
        }
        Ok(Strategy { coalition, n, tables })
    }

    /// Always answers `beta` (a lexicographic code).
    pub fn constant(proto: &MultiRoundProtocol, coalition: Coalition, beta: u64) -> Result<Self> {
        let g = proto.players().saturating_sub(coalition.len());
        let tables = (0..proto.rounds())
            .map(|i| vec![beta; 1usize << ((i + 1) * g).min(EXACT_GOOD_LIMIT + 1)])
            .collect();
        Self::new(proto, coalition, tables)
    }

    /// Builds the tables from `answer(round, history)`.
    pub fn from_fn(
        proto: &MultiRoundProtocol,
        coalition: Coalition,
        answer: impl Fn(usize, u64) -> u64,
    ) -> Result<Self> {
        let g = proto.players().saturating_sub(coalition.len());
        if proto.rounds() * g > EXACT_GOOD_LIMIT {
            return Err(Error::BudgetExceeded {
                what: format!("strategy tables over {} honest bits", proto.rounds() * g),
                limit: EXACT_GOOD_LIMIT,
            });
        }
        let tables = (0..proto.rounds())
            .map(|i| (0..1u64 << ((i + 1) * g)).map(|h| answer(i, h)).collect())
            .collect();
        Self::new(proto, coalition, tables)
    }

    pub fn coalition(&self) -> &Coalition {
        &self.coalition
    }

    pub fn rounds(&self) -> usize {
        self.tables.len()
    }

    /// Answer code in `round` after honest history `history`.
    pub fn answer(&self, round: usize, history: u64) -> u64 {
        self.tables[round][history as usize]
    }

    pub fn tables(&self) -> &[Vec<u64>] {
        &self.tables
    }
}

#[derive(Serialize, Deserialize)]
struct StrategyRepr {
    n: usize,
    coalition: Coalition,
    /// Per round: hex history -> answer bits in coalition order.
    tables: Vec<BTreeMap<String, String>>,
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let g = self.n - self.coalition.len();
        let w = self.coalition.len();
        let tables = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let digits = ((i + 1) * g).div_ceil(4).max(1);
                t.iter()
                    .enumerate()
                    .map(|(h, &beta)| {
                        let bits: String = (0..w)
                            .map(|j| if beta >> (w - 1 - j) & 1 == 1 { '1' } else { '0' })
                            .collect();
                        (format!("{h:0digits$x}"), bits)
                    })
                    .collect()
            })
            .collect();
        StrategyRepr { n: self.n, coalition: self.coalition.clone(), tables }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = StrategyRepr::deserialize(d)?;
        repr.coalition.check(repr.n).map_err(D::Error::custom)?;
        let g = repr.n - repr.coalition.len();
        let mut tables = Vec::with_capacity(repr.tables.len());
        for (i, map) in repr.tables.into_iter().enumerate() {
            let len = 1usize
                .checked_shl(((i + 1) * g) as u32)
                .filter(|_| (i + 1) * g <= EXACT_GOOD_LIMIT)
                .ok_or_else(|| D::Error::custom("strategy table too large"))?;
            let mut t = vec![0u64; len];
            for (h, bits) in map {
                let h = usize::from_str_radix(&h, 16).map_err(D::Error::custom)?;
                let beta = u64::from_str_radix(&bits, 2).map_err(D::Error::custom)?;
                *t.get_mut(h).ok_or_else(|| D::Error::custom("history out of range"))? = beta;
            }
            tables.push(t);
        }
        Ok(Strategy { coalition: repr.coalition, n: repr.n, tables })
    }
}

/// The game tree for one protocol, coalition and target.
struct Game<'a> {
    proto: &'a MultiRoundProtocol,
    b: u32,
    /// Honest coordinates of each round, in global numbering.
    good: Vec<Vec<usize>>,
    /// Coalition coordinates of each round, in global numbering.
    bad: Vec<Vec<usize>>,
    masses: Vec<SubcubeMasses>,
}

impl<'a> Game<'a> {
    fn new(proto: &'a MultiRoundProtocol, coalition: &Coalition, b: u32) -> Result<Self> {
        let (r, n) = (proto.rounds(), proto.players());
        coalition.check(n)?;
        if b >= 2 {
            return Err(invalid("b", "protocol outcomes are Boolean"));
        }
        let g = n - coalition.len();
        let s = coalition.len();
        for (what, used, limit) in [
            ("honest bits", r * g, EXACT_GOOD_LIMIT),
            ("coalition bits", r * s, EXACT_BAD_LIMIT),
            ("game tree depth", r * n, EXACT_TREE_LIMIT),
        ] {
            if used > limit {
                return Err(Error::BudgetExceeded { what: format!("{what} = {used}"), limit });
            }
        }
        let joint = proto.joint_measure();
        let honest = coalition.complement(n);
        let good: Vec<Vec<usize>> = (0..r).map(|i| honest.iter().map(|&c| i * n + c).collect()).collect();
        let bad = (0..r)
            .map(|i| coalition.members().iter().map(|&c| i * n + c).collect())
            .collect();
        let masses = good.iter().map(|coords| SubcubeMasses::new(&joint, coords)).collect();
        proto.outcome().ensure_table();
        Ok(Game { proto, b, good, bad, masses })
    }

    fn rounds(&self) -> usize {
        self.good.len()
    }

    fn bad_mask(&self, i: usize) -> u64 {
        bits::mask_of(&self.bad[i])
    }

    fn child(&self, i: usize, bits: u64, beta: u64) -> u64 {
        bits | bits::spread_lex(beta, &self.bad[i])
    }

    /// Value once round `i` honest bits are in `bits` and the coalition
    /// answers optimally from here on.
    fn after_honest(&self, i: usize, bits: u64) -> f64 {
        if i + 1 == self.rounds() {
            return f64::from(u8::from(block_hit(self.proto.outcome(), bits, self.bad_mask(i), self.b)));
        }
        let mut best = f64::NEG_INFINITY;
        for beta in 0..1u64 << self.bad[i].len() {
            let v = self.before_honest(i + 1, self.child(i, bits, beta));
            if v > best {
                best = v;
                if best >= 1.0 {
                    break;
                }
            }
        }
        best
    }

    /// Optimal value at the start of round `i`.
    fn before_honest(&self, i: usize, bits: u64) -> f64 {
        self.masses[i].expectation(|a| self.after_honest(i, bits | a))
    }

    fn value(&self) -> f64 {
        self.masses[0].expectation_par(|a| self.after_honest(0, a))
    }

    /// The lexicographically smallest optimal answer.
    fn best_answer(&self, i: usize, bits: u64) -> u64 {
        let mut best = (f64::NEG_INFINITY, 0);
        for beta in 0..1u64 << self.bad[i].len() {
            let child = self.child(i, bits, beta);
            let v = if i + 1 == self.rounds() {
                f64::from(u8::from(self.proto.outcome().eval_bits(child) == self.b))
            } else {
                self.before_honest(i + 1, child)
            };
            if v > best.0 {
                best = (v, beta);
                if v >= 1.0 {
                    break;
                }
            }
        }
        best.1
    }

    /// Fills strategy tables along every honest history.
    fn extract(&self, i: usize, bits: u64, history: u64, tables: &mut [Vec<u64>]) {
        let g = self.good[i].len();
        for a in 0..1u64 << g {
            let honest = bits::spread(a, &self.good[i]);
            let h = history | a << (i * g);
            let beta = self.best_answer(i, bits | honest);
            tables[i][h as usize] = beta;
            if i + 1 < self.rounds() {
                self.extract(i + 1, self.child(i, bits | honest, beta), h, tables);
            }
        }
    }

    /// Exact value of following `pi`.
    fn follow(&self, pi: &Strategy, i: usize, bits: u64, history: u64) -> f64 {
        let g = self.good[i].len();
        self.masses[i].expectation(|a| {
            let h = history | bits::gather(a, &self.good[i]) << (i * g);
            let next = self.child(i, bits | a, pi.answer(i, h));
            if i + 1 == self.rounds() {
                f64::from(u8::from(self.proto.outcome().eval_bits(next) == self.b))
            } else {
                self.follow(pi, i + 1, next, h)
            }
        })
    }
}

/// `I_B^b`: the best any coalition strategy achieves, by backward induction.
pub fn optimal_influence(proto: &MultiRoundProtocol, coalition: &Coalition, b: u32) -> Result<GameValue> {
    let game = Game::new(proto, coalition, b)?;
    Ok(GameValue { value: game.value().clamp(0.0, 1.0), certified: true })
}

/// An optimal strategy, breaking ties toward the lexicographically smallest
/// answer. Zero-probability histories get the answer computed as if reachable.
pub fn extract_optimal_strategy(proto: &MultiRoundProtocol, coalition: &Coalition, b: u32) -> Result<Strategy> {
    let game = Game::new(proto, coalition, b)?;
    let g = proto.players() - coalition.len();
    let mut tables: Vec<Vec<u64>> = (0..proto.rounds()).map(|i| vec![0; 1usize << ((i + 1) * g)]).collect();
    game.extract(0, 0, 0, &mut tables);
    Strategy::new(proto, coalition.clone(), tables)
}

/// `I_{π,B}^b`: probability of outcome `b` when the coalition follows `pi`.
pub fn strategy_influence(
    proto: &MultiRoundProtocol,
    pi: &Strategy,
    b: u32,
    mode: Mode,
) -> Result<InfluenceEstimate> {
    if pi.n != proto.players() || pi.rounds() != proto.rounds() {
        return Err(invalid("strategy", "strategy shape does not match the protocol"));
    }
    match mode {
        Mode::Exact => {
            let game = Game::new(proto, &pi.coalition, b)?;
            Ok(InfluenceEstimate::exact(game.follow(pi, 0, 0, 0)))
        }
        Mode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(invalid("samples", "Monte-Carlo needs at least one sample"));
            }
            let (r, n) = (proto.rounds(), proto.players());
            let honest = pi.coalition.complement(n);
            let g = honest.len();
            let honest_measures: Vec<ProductMeasure> = (0..r)
                .map(|i| proto.round_measure(i).restrict(&honest))
                .collect::<Result<_>>()?;
            proto.outcome().ensure_table();
            let hits = crate::influence::mc_count(samples, seed, |rng: &mut ChaCha8Rng| {
                let (mut bits, mut history) = (0u64, 0u64);
                for (i, m) in honest_measures.iter().enumerate() {
                    let a = m.sample(rng).bits();
                    history |= a << (i * g);
                    let global: Vec<usize> = honest.iter().map(|&c| i * n + c).collect();
                    let bad: Vec<usize> = pi.coalition.members().iter().map(|&c| i * n + c).collect();
                    bits |= bits::spread(a, &global) | bits::spread_lex(pi.answer(i, history), &bad);
                }
                proto.outcome().eval_bits(bits) == b
            });
            Ok(InfluenceEstimate::monte_carlo(hits, samples))
        }
    }
}

/// Optimal influence for every coalition member count up to `max_size`,
/// scanning coalitions in lexicographic order. Returns the first coalition
/// of the smallest size reaching `threshold`.
pub fn smallest_winning_coalition(
    proto: &MultiRoundProtocol,
    b: u32,
    threshold: f64,
    max_size: usize,
) -> Result<Option<(Coalition, GameValue)>> {
    for size in 0..=max_size.min(proto.players()) {
        let found = bits::combinations(proto.players(), size)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|members| {
                let c = Coalition::new(members, proto.players())?;
                let v = optimal_influence(proto, &c, b)?;
                Ok((c, v))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(hit) = found.into_iter().find(|(_, v)| v.value >= threshold) {
            return Ok(Some(hit));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{RangedFunction, Source};
    use crate::influence::coalition_influence;

    fn proto(f: RangedFunction, n: usize, r: usize) -> MultiRoundProtocol {
        MultiRoundProtocol::new(f, vec![ProductMeasure::uniform(n); r]).unwrap()
    }

    fn co(m: &[usize], n: usize) -> Coalition {
        Coalition::new(m.iter().copied(), n).unwrap()
    }

    #[test]
    fn single_round_matches_block_influence() {
        let f = RangedFunction::random(4, 11, vec![0.5, 0.5]).unwrap();
        let mu = ProductMeasure::uniform_bias(4, 0.2).unwrap();
        let p = MultiRoundProtocol::single(f.clone(), mu.clone()).unwrap();
        for mask in 0..16u64 {
            let c = Coalition::from_mask(mask);
            for b in 0..2 {
                let dp = optimal_influence(&p, &c, b).unwrap().value;
                let block = coalition_influence(&f, &mu, &c, b, Mode::Exact).unwrap().value;
                assert!((dp - block).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parity_last_mover() {
        let p = proto(RangedFunction::parity(4).unwrap(), 2, 2);
        for b in 0..2 {
            assert!((optimal_influence(&p, &co(&[1], 2), b).unwrap().value - 1.0).abs() < 1e-12);
            let pi = Strategy::constant(&p, co(&[1], 2), 0).unwrap();
            assert!((strategy_influence(&p, &pi, b, Mode::Exact).unwrap().value - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_coalition_is_honest_play() {
        let f = RangedFunction::random(6, 2, vec![0.6, 0.4]).unwrap();
        let p = proto(f.clone(), 3, 2);
        let joint = p.joint_measure();
        for b in 0..2 {
            let dp = optimal_influence(&p, &Coalition::empty(), b).unwrap().value;
            let honest = crate::influence::value_probability(&f, &joint, Some(b), Mode::Exact).unwrap().value;
            assert!((dp - honest).abs() < 1e-12);
        }
    }

    #[test]
    fn or_round_one_answers_one() {
        let p = MultiRoundProtocol::single(RangedFunction::or(3).unwrap(), ProductMeasure::uniform(3)).unwrap();
        let c = co(&[0], 3);
        let pi = extract_optimal_strategy(&p, &c, 1).unwrap();
        // forced to answer 1 when the honest bits are zero; otherwise the
        // tie goes to the smaller answer
        assert_eq!(pi.tables()[0], vec![1, 0, 0, 0]);
        assert_eq!(strategy_influence(&p, &pi, 1, Mode::Exact).unwrap().value, 1.0);
    }

    #[test]
    fn constant_protocol_extracts_zeros() {
        let p = proto(RangedFunction::constant(6, 1).unwrap(), 3, 2);
        let pi = extract_optimal_strategy(&p, &co(&[0, 2], 3), 1).unwrap();
        assert!(pi.tables().iter().flatten().all(|&beta| beta == 0));
        assert_eq!(optimal_influence(&p, &co(&[0, 2], 3), 1).unwrap().value, 1.0);
    }

    #[test]
    fn extraction_is_self_consistent() {
        for seed in 0..4 {
            let p = proto(RangedFunction::random(6, seed, vec![0.5, 0.5]).unwrap(), 3, 2);
            for b in 0..2 {
                let c = co(&[1], 3);
                let pi = extract_optimal_strategy(&p, &c, b).unwrap();
                let v = strategy_influence(&p, &pi, b, Mode::Exact).unwrap().value;
                let opt = optimal_influence(&p, &c, b).unwrap().value;
                assert!((v - opt).abs() < 1e-12, "{v} vs {opt}");
            }
        }
    }

    /// Brute force over the four honest bits of a two-round, two-player game.
    #[test]
    fn explicit_strategy_against_history_oracle() {
        let f = RangedFunction::random(4, 77, vec![0.5, 0.5]).unwrap();
        let p = MultiRoundProtocol::new(
            f.clone(),
            vec![ProductMeasure::new(vec![0.3, 0.6]).unwrap(), ProductMeasure::new(vec![0.8, 0.1]).unwrap()],
        )
        .unwrap();
        let c = co(&[0], 2);
        // round 1: copy the honest bit; round 2: xor of the two honest bits
        let pi = Strategy::from_fn(&p, c.clone(), |i, h| if i == 0 { h & 1 } else { (h ^ h >> 1) & 1 }).unwrap();
        for b in 0..2 {
            let mut oracle = 0.0;
            for a1 in 0..2u64 {
                for a2 in 0..2u64 {
                    let m = (if a1 == 1 { 0.6 } else { 0.4 }) * (if a2 == 1 { 0.1 } else { 0.9 });
                    let x = a1 << 1 | a1;
                    let y = a2 << 1 | (a1 ^ a2);
                    if f.eval_bits(x | y << 2) == b {
                        oracle += m;
                    }
                }
            }
            let v = strategy_influence(&p, &pi, b, Mode::Exact).unwrap().value;
            assert!((v - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_rollout_agrees() {
        let p = proto(RangedFunction::random(8, 5, vec![0.5, 0.5]).unwrap(), 4, 2);
        let c = co(&[2], 4);
        let pi = extract_optimal_strategy(&p, &c, 1).unwrap();
        let exact = strategy_influence(&p, &pi, 1, Mode::Exact).unwrap();
        let mc = strategy_influence(&p, &pi, 1, Mode::MonteCarlo { samples: 100_000, seed: 3 }).unwrap();
        assert!((exact.value - mc.value).abs() <= mc.radius);
    }

    #[test]
    fn rushing_within_round_only() {
        // f = (round 2, player 0) XOR (round 1, player 1). Player 1 moves in
        // round 1 without seeing round 2.
        let f = RangedFunction::embed(
            RangedFunction::parity(2).unwrap(),
            4,
            vec![Source::Coord(2), Source::Coord(1)],
        )
        .unwrap();
        let p = proto(f, 2, 2);
        let v = optimal_influence(&p, &co(&[1], 2), 1).unwrap().value;
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn strategy_json_round_trip() {
        let p = proto(RangedFunction::random(4, 1, vec![0.5, 0.5]).unwrap(), 2, 2);
        let pi = extract_optimal_strategy(&p, &co(&[1], 2), 0).unwrap();
        let s = serde_json::to_string(&pi).unwrap();
        let back: Strategy = serde_json::from_str(&s).unwrap();
        assert_eq!(back, pi);
        assert!(s.contains(r#""tables":[{"0":"#), "{s}");
    }

    #[test]
    fn budget_enforced() {
        let p = proto(RangedFunction::parity(30).unwrap(), 15, 2);
        assert!(matches!(optimal_influence(&p, &co(&[0], 15), 1), Err(Error::BudgetExceeded { .. })));
    }
}
