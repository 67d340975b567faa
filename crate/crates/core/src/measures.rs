//! Product probability measures on the Boolean cube.
//!
//! A [`ProductMeasure`] stores one bias `p_i = Pr[x_i = 1]` per coordinate.
//! Boosting replaces every bias by `1 - (1 - p_i)^t`, the law of the
//! coordinatewise OR of `t` independent samples. Measures that are not
//! product measures are only reachable through the [`Sampler`] trait, where
//! boosting is realized by literally OR-ing samples ([`OrBoosted`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits;
use crate::error::{invalid, Error, Result};

/// Largest supported arity; points are packed into a `u64`.
pub const MAX_ARITY: usize = 64;

/// A point of `{0,1}^n`. Coordinate `i` is bit `i` of `bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitVector {
    n: usize,
    bits: u64,
}

impl BitVector {
    /// Panics if `n > 64`; stray high bits are masked off.
    pub fn new(n: usize, bits: u64) -> Self {
        assert!(n <= MAX_ARITY, "arity {n} exceeds {MAX_ARITY}");
        BitVector {
            n,
            bits: bits & bits::low_mask(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(n, 0)
    }

    pub fn ones(n: usize) -> Self {
        Self::new(n, u64::MAX)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn with(mut self, i: usize, value: bool) -> Self {
        if value {
            self.bits |= 1 << i;
        } else {
            self.bits &= !(1 << i);
        }
        self
    }

    pub fn weight(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Coordinatewise OR.
    pub fn or(&self, other: &BitVector) -> BitVector {
        debug_assert_eq!(self.n, other.n);
        BitVector::new(self.n, self.bits | other.bits)
    }

    /// Indices of the coordinates equal to one.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.get(i)).collect()
    }

    pub(crate) fn check_arity(&self, n: usize) -> Result<()> {
        if self.n != n {
            return Err(Error::ArityMismatch {
                expected: n,
                got: self.n,
            });
        }
        Ok(())
    }
}

impl fmt::Display for BitVector {
    /// Coordinate 0 first, e.g. `0110`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() > MAX_ARITY {
            return Err(Error::Parse(format!("bit string longer than {MAX_ARITY}")));
        }
        let mut bits = 0u64;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << i,
                other => return Err(Error::Parse(format!("unexpected `{other}` in bit string"))),
            }
        }
        Ok(BitVector::new(s.len(), bits))
    }
}

/// Anything that can draw points of `{0,1}^n`.
pub trait Sampler {
    fn arity(&self) -> usize;
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector;
}

/// The law of the OR of `t` independent draws from `inner`.
///
/// For product measures this coincides with [`ProductMeasure::boost`]; for
/// any other sampler it is the only available boosting.
#[derive(Debug, Clone)]
pub struct OrBoosted<S> {
    pub inner: S,
    pub t: usize,
}

impl<S: Sampler> Sampler for OrBoosted<S> {
    fn arity(&self) -> usize {
        self.inner.arity()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector {
        let mut acc = BitVector::zeros(self.inner.arity());
        for _ in 0..self.t {
            acc = acc.or(&self.inner.draw(rng));
        }
        acc
    }
}

/// A product measure on `{0,1}^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct ProductMeasure {
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    n: usize,
    biases: Vec<f64>,
}

impl TryFrom<MeasureRepr> for ProductMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        if r.n != r.biases.len() {
            return Err(Error::ArityMismatch {
                expected: r.n,
                got: r.biases.len(),
            });
        }
        ProductMeasure::new(r.biases)
    }
}

impl From<ProductMeasure> for MeasureRepr {
    fn from(m: ProductMeasure) -> Self {
        MeasureRepr {
            n: m.biases.len(),
            biases: m.biases,
        }
    }
}

impl ProductMeasure {
    pub fn new(biases: Vec<f64>) -> Result<Self> {
        if biases.len() > MAX_ARITY {
            return Err(invalid("n", format!("at most {MAX_ARITY} coordinates supported")));
        }
        for (index, &value) in biases.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidBias { index, value });
            }
        }
        Ok(ProductMeasure { biases })
    }

    /// Every coordinate has bias `p` (the measure usually written `mu_p`).
    pub fn uniform_bias(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    /// The uniform measure on `{0,1}^n`.
    pub fn uniform(n: usize) -> Self {
        ProductMeasure {
            biases: vec![0.5; n],
        }
    }

    pub fn n(&self) -> usize {
        self.biases.len()
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn bias(&self, i: usize) -> f64 {
        self.biases[i]
    }

    /// `prod_i p_i^{x_i} (1 - p_i)^{1 - x_i}`.
    pub fn mass(&self, x: &BitVector) -> Result<f64> {
        x.check_arity(self.n())?;
        Ok(self.mass_bits(x.bits()))
    }

    pub(crate) fn mass_bits(&self, bits: u64) -> f64 {
        self.biases
            .iter()
            .enumerate()
            .map(|(i, &p)| if bits >> i & 1 == 1 { p } else { 1.0 - p })
            .product()
    }

    /// Biases become `1 - (1 - p_i)^t`.
    pub fn boost(&self, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(invalid("t", "boost exponent must be at least 1"));
        }
        if t == 1 {
            return Ok(self.clone());
        }
        let exp = i32::try_from(t).ok();
        let biases = self
            .biases
            .iter()
            .map(|&p| {
                let q = 1.0 - p;
                let qt = match exp {
                    Some(e) => q.powi(e),
                    None => q.powf(t as f64),
                };
                1.0 - qt
            })
            .collect();
        Ok(ProductMeasure { biases })
    }

    /// Draws one point; coordinates are independent.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector {
        let mut bits = 0u64;
        for (i, &p) in self.biases.iter().enumerate() {
            // gen::<f64>() is in [0, 1): bias 0 never fires, bias 1 always does.
            if rng.gen::<f64>() < p {
                bits |= 1 << i;
            }
        }
        BitVector::new(self.n(), bits)
    }

    /// The marginal on `coords`, in the given order.
    pub fn restrict(&self, coords: &[usize]) -> Result<Self> {
        let mut biases = Vec::with_capacity(coords.len());
        for &c in coords {
            if c >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    n: self.n(),
                });
            }
            biases.push(self.biases[c]);
        }
        Ok(ProductMeasure { biases })
    }

    /// Swaps the roles of 0 and 1 on `coords`: `p_i -> 1 - p_i`.
    pub fn flip(&self, coords: &[usize]) -> Result<Self> {
        let mut biases = self.biases.clone();
        for &c in coords {
            if c >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    n: self.n(),
                });
            }
            biases[c] = 1.0 - biases[c];
        }
        Ok(ProductMeasure { biases })
    }

    /// Coordinates whose bias exceeds 1/2.
    pub fn heavy_coordinates(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.biases[i] > 0.5).collect()
    }
}

impl Sampler for ProductMeasure {
    fn arity(&self) -> usize {
        self.n()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BitVector {
        self.sample(rng)
    }
}

/// Enumerates every assignment of a coordinate set together with its
/// marginal mass, without materializing a `2^k` table: the coordinates are
/// split in two halves whose tables are combined on the fly.
pub(crate) struct SubcubeMasses {
    lo: Vec<(u64, f64)>,
    hi: Vec<(u64, f64)>,
}

impl SubcubeMasses {
    pub(crate) fn new(measure: &ProductMeasure, coords: &[usize]) -> Self {
        let (a, b) = coords.split_at(coords.len() / 2);
        SubcubeMasses {
            lo: Self::table(measure, a),
            hi: Self::table(measure, b),
        }
    }

    fn table(measure: &ProductMeasure, coords: &[usize]) -> Vec<(u64, f64)> {
        let mut out = vec![(0u64, 1.0f64)];
        for &c in coords {
            let p = measure.bias(c);
            let len = out.len();
            for j in 0..len {
                let (bits, m) = out[j];
                out.push((bits | 1 << c, m * p));
                out[j] = (bits, m * (1.0 - p));
            }
        }
        out
    }

    /// Sum over assignments of `mass * weight(bits)`, accumulated in a fixed
    /// order so results are reproducible.
    pub(crate) fn expectation(&self, mut weight: impl FnMut(u64) -> f64) -> f64 {
        let mut total = 0.0;
        for &(hb, hm) in &self.hi {
            if hm == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for &(lb, lm) in &self.lo {
                if lm > 0.0 {
                    inner += lm * weight(hb | lb);
                }
            }
            total += hm * inner;
        }
        total
    }

    /// Parallel [`expectation`](Self::expectation). Partial sums are combined
    /// in the same fixed order, so the result does not depend on scheduling.
    pub(crate) fn expectation_par(&self, weight: impl Fn(u64) -> f64 + Sync) -> f64 {
        use rayon::prelude::*;
        let partial: Vec<f64> = self
            .hi
            .par_iter()
            .map(|&(hb, hm)| {
                if hm == 0.0 {
                    return 0.0;
                }
                let mut inner = 0.0;
                for &(lb, lm) in &self.lo {
                    if lm > 0.0 {
                        inner += lm * weight(hb | lb);
                    }
                }
                hm * inner
            })
            .collect();
        partial.into_iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bv(s: &str) -> BitVector {
        s.parse().unwrap()
    }

    #[test]
    fn mass_examples() {
        let u = ProductMeasure::uniform(2);
        assert_eq!(u.mass(&bv("11")).unwrap(), 0.25);
        let det = ProductMeasure::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(det.mass(&bv("10")).unwrap(), 1.0);
        let m = ProductMeasure::new(vec![0.1, 0.1]).unwrap();
        assert!((m.mass(&bv("00")).unwrap() - 0.81).abs() < 1e-15);
    }

    #[test]
    fn mass_rejects_wrong_arity() {
        let u = ProductMeasure::uniform(3);
        assert!(matches!(
            u.mass(&bv("11")),
            Err(Error::ArityMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn invalid_biases_rejected() {
        assert!(ProductMeasure::new(vec![0.2, 1.5]).is_err());
        assert!(ProductMeasure::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn masses_sum_to_one() {
        let m = ProductMeasure::new((0..20).map(|i| (i as f64 + 0.5) / 21.0).collect()).unwrap();
        let coords: Vec<usize> = (0..20).collect();
        let total = SubcubeMasses::new(&m, &coords).expectation(|_| 1.0);
        assert!((total - 1.0).abs() < 1e-12);
        let direct: f64 = (0..1u64 << 12)
            .map(|b| ProductMeasure::new(m.biases()[..12].to_vec()).unwrap().mass_bits(b))
            .sum();
        assert!((direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boost_examples() {
        let m = ProductMeasure::new(vec![0.3, 0.01, 1.0, 0.0]).unwrap();
        assert_eq!(m.boost(1).unwrap(), m);
        let half = ProductMeasure::uniform(3).boost(2).unwrap();
        assert!(half.biases().iter().all(|&p| (p - 0.75).abs() < 1e-15));
        let b = ProductMeasure::uniform_bias(2, 1.0 / 16.0).unwrap().boost(4).unwrap();
        let expect = 1.0 - (15.0f64 / 16.0).powi(4);
        assert!((b.bias(0) - expect).abs() < 1e-15);
        assert!((b.bias(0) - 0.2275).abs() < 1e-4);
        assert!(m.boost(0).is_err());
    }

    #[test]
    fn boosted_sixteenth_matches_or_of_samples() {
        let m = ProductMeasure::uniform_bias(4, 1.0 / 16.0).unwrap();
        let sampler = OrBoosted { inner: m.clone(), t: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let ones: usize = (0..trials).map(|_| sampler.draw(&mut rng).get(2) as usize).sum();
        let radius = ((2.0f64 / 0.05).ln() / (2.0 * trials as f64)).sqrt();
        let expect = m.boost(4).unwrap().bias(2);
        assert!((ones as f64 / trials as f64 - expect).abs() <= radius);
    }

    #[test]
    fn sample_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = ProductMeasure::uniform_bias(7, 0.0).unwrap();
        let one = ProductMeasure::uniform_bias(7, 1.0).unwrap();
        for _ in 0..200 {
            assert_eq!(zero.sample(&mut rng), BitVector::zeros(7));
            assert_eq!(one.sample(&mut rng), BitVector::ones(7));
        }
    }

    #[test]
    fn sample_uniform_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = ProductMeasure::uniform(6);
        let trials = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..trials {
            let x = m.sample(&mut rng);
            for (i, c) in counts.iter_mut().enumerate() {
                *c += x.get(i) as usize;
            }
        }
        for c in counts {
            let mean = c as f64 / trials as f64;
            assert!((0.49..=0.51).contains(&mean), "{mean}");
        }
    }

    #[test]
    fn restrict_examples() {
        let m = ProductMeasure::new(vec![0.1, 0.5, 0.9]).unwrap();
        assert_eq!(m.restrict(&[0, 1, 2]).unwrap(), m);
        assert_eq!(m.restrict(&[0, 2]).unwrap().biases(), &[0.1, 0.9]);
        assert!(matches!(
            m.restrict(&[3]),
            Err(Error::IndexOutOfRange { index: 3, n: 3 })
        ));
    }

    #[test]
    fn json_shape() {
        let m = ProductMeasure::new(vec![0.25, 0.5]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"n":2,"biases":[0.25,0.5]}"#);
        let back: ProductMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ProductMeasure>(r#"{"n":3,"biases":[0.5]}"#).is_err());
    }

    #[test]
    fn bit_strings() {
        let x = bv("0110");
        assert_eq!(x.len(), 4);
        assert!(!x.get(0) && x.get(1) && x.get(2) && !x.get(3));
        assert_eq!(x.to_string(), "0110");
        assert!("01a".parse::<BitVector>().is_err());
    }
}
