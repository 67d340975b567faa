//! Ranged functions `{0,1}^n -> R ∪ {†}` and multi-round protocols.
//!
//! A [`RangedFunction`] is either an explicit truth table or one of a handful
//! of structured forms (OR, AND, MAJORITY, TRIBES, ...) and wrappers that
//! compose them. Every form evaluates on packed points; functions of small
//! arity cache their full table on first use so repeated enumeration is a
//! lookup.
//!
//! Range values are the integers `0..range_size`. When the range is viewed as
//! `{0,1}^m` the first bit is the most significant one, so the value
//! `(b1, b2)` with `b1` a single bit is `b1 << (m - 1) | b2`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bits;
use crate::error::{invalid, Error, Result};
use crate::measures::{BitVector, ProductMeasure, MAX_ARITY};

/// Explicit truth tables are limited to this arity.
pub const MAX_TABLE_ARITY: usize = 26;

/// Structured functions up to this arity cache their table on demand.
pub const CACHE_ARITY: usize = 20;

const DAGGER_RAW: u32 = u32::MAX;

/// A function value: an element of the range, or the sentinel †.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Output(u32);

impl Output {
    pub const DAGGER: Output = Output(DAGGER_RAW);

    pub fn value(v: u32) -> Self {
        assert!(v != DAGGER_RAW, "value collides with the dagger sentinel");
        Output(v)
    }

    pub fn is_dagger(self) -> bool {
        self.0 == DAGGER_RAW
    }

    /// `None` for †.
    pub fn get(self) -> Option<u32> {
        (!self.is_dagger()).then_some(self.0)
    }

    pub(crate) fn raw(self) -> u32 {
        self.0
    }

    /// Table encoding: −1 for †.
    pub fn to_i64(self) -> i64 {
        self.get().map_or(-1, i64::from)
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(Output::DAGGER),
            v if (0..i64::from(DAGGER_RAW)).contains(&v) => Ok(Output(v as u32)),
            v => Err(Error::Parse(format!("table entry {v} is neither a value nor -1"))),
        }
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.get() {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("†"),
        }
    }
}

/// Number of bits needed to encode `range_size` values.
pub fn code_length(range_size: u32) -> usize {
    let mut m = 0;
    while (1u64 << m) < u64::from(range_size) {
        m += 1;
    }
    m.max(1)
}

/// Where an embedded coordinate takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Const(bool),
    Coord(usize),
}

impl Source {
    /// `-1` is constant 0, `-2` constant 1, anything else a coordinate.
    fn to_i64(self) -> i64 {
        match self {
            Source::Const(false) => -1,
            Source::Const(true) => -2,
            Source::Coord(c) => c as i64,
        }
    }

    fn from_i64(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(Source::Const(false)),
            -2 => Ok(Source::Const(true)),
            c if c >= 0 => Ok(Source::Coord(c as usize)),
            c => Err(Error::Parse(format!("bad embedding source {c}"))),
        }
    }
}

/// The structured forms. Serialized as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Structure {
    Constant { value: u32 },
    Dictator { coord: usize },
    Or,
    And,
    /// Strict majority: one iff more than `n/2` coordinates are one.
    Majority,
    Parity,
    /// OR of ANDs over consecutive blocks of `width` coordinates.
    Tribes { width: usize },
    /// Recursive majority of three, `n = 3^depth`.
    IteratedMajority { depth: u32 },
    /// Independent table entries drawn from `probs` (and † with `dagger`).
    Random {
        seed: u64,
        probs: Vec<f64>,
        #[serde(default)]
        dagger: f64,
    },
    /// `f'(x) = f(x ⊕ e_coords)`.
    Negated {
        inner: Box<RangedFunction>,
        coords: Vec<usize>,
    },
    /// Range map; † stays †.
    Bundle {
        inner: Box<RangedFunction>,
        map: Vec<u32>,
    },
    /// XOR of Boolean parts reading consecutive coordinate blocks.
    Xor { parts: Vec<RangedFunction> },
    /// Concatenated codes of parts reading the whole input, first part most
    /// significant.
    Tuple { parts: Vec<RangedFunction> },
    /// Inner coordinate `j` reads `sources[j]` (−1 = constant 0, −2 = constant 1).
    Embed {
        inner: Box<RangedFunction>,
        #[serde(
            serialize_with = "ser_sources",
            deserialize_with = "de_sources"
        )]
        sources: Vec<Source>,
    },
    /// Inner coordinate `i` is the AND of the `i`-th consecutive block.
    AndBlocks {
        inner: Box<RangedFunction>,
        blocks: Vec<usize>,
    },
}

fn ser_sources<S: Serializer>(v: &[Source], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_i64()))
}

fn de_sources<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Source>, D::Error> {
    let raw = Vec::<i64>::deserialize(d)?;
    raw.into_iter()
        .map(|v| Source::from_i64(v).map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Debug, Clone)]
enum Repr {
    Table(Arc<[u32]>),
    Structured(Structure),
}

/// A function `{0,1}^n -> {0, .., range_size-1} ∪ {†}`.
#[derive(Clone)]
pub struct RangedFunction {
    n: usize,
    range_size: u32,
    repr: Repr,
    cache: OnceLock<Arc<[u32]>>,
}

impl fmt::Debug for RangedFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("RangedFunction");
        d.field("n", &self.n).field("range_size", &self.range_size);
        match &self.repr {
            Repr::Table(_) => d.field("repr", &"table"),
            Repr::Structured(s) => d.field("repr", s),
        };
        d.finish()
    }
}

impl RangedFunction {
    fn structured(n: usize, range_size: u32, s: Structure) -> Result<Self> {
        if n > MAX_ARITY {
            return Err(invalid("n", format!("at most {MAX_ARITY} coordinates supported")));
        }
        if range_size < 2 {
            return Err(invalid("range_size", "range must have at least two values"));
        }
        Ok(RangedFunction {
            n,
            range_size,
            repr: Repr::Structured(s),
            cache: OnceLock::new(),
        })
    }

    /// Explicit truth table indexed by the packed point (coordinate `i` is bit `i`).
    pub fn from_table(n: usize, range_size: u32, table: Vec<Output>) -> Result<Self> {
        if n > MAX_TABLE_ARITY {
            return Err(Error::BudgetExceeded {
                what: format!("truth table of arity {n}"),
                limit: MAX_TABLE_ARITY,
            });
        }
        if range_size < 2 {
            return Err(invalid("range_size", "range must have at least two values"));
        }
        if table.len() != 1usize << n {
            return Err(invalid(
                "table",
                format!("expected {} entries, got {}", 1usize << n, table.len()),
            ));
        }
        if let Some(bad) = table.iter().find(|o| !o.is_dagger() && o.0 >= range_size) {
            return Err(invalid("table", format!("value {bad} outside range {range_size}")));
        }
        let raw: Arc<[u32]> = table.into_iter().map(Output::raw).collect();
        Ok(RangedFunction {
            n,
            range_size,
            repr: Repr::Table(raw),
            cache: OnceLock::new(),
        })
    }

    /// Tabulates `g` over the whole cube.
    pub fn from_fn(n: usize, range_size: u32, g: impl Fn(BitVector) -> Output) -> Result<Self> {
        if n > MAX_TABLE_ARITY {
            return Err(Error::BudgetExceeded {
                what: format!("truth table of arity {n}"),
                limit: MAX_TABLE_ARITY,
            });
        }
        let table = (0..1u64 << n).map(|b| g(BitVector::new(n, b))).collect();
        Self::from_table(n, range_size, table)
    }

    pub fn constant(n: usize, value: u32) -> Result<Self> {
        Self::structured(n, (value + 1).max(2), Structure::Constant { value })
    }

    pub fn dictator(n: usize, coord: usize) -> Result<Self> {
        if coord >= n {
            return Err(Error::IndexOutOfRange { index: coord, n });
        }
        Self::structured(n, 2, Structure::Dictator { coord })
    }

    pub fn or(n: usize) -> Result<Self> {
        Self::structured(n, 2, Structure::Or)
    }

    pub fn and(n: usize) -> Result<Self> {
        Self::structured(n, 2, Structure::And)
    }

    pub fn majority(n: usize) -> Result<Self> {
        Self::structured(n, 2, Structure::Majority)
    }

    pub fn parity(n: usize) -> Result<Self> {
        Self::structured(n, 2, Structure::Parity)
    }

    pub fn tribes(n: usize, width: usize) -> Result<Self> {
        if width == 0 || n % width != 0 {
            return Err(invalid("width", format!("tribe width {width} must divide n = {n}")));
        }
        Self::structured(n, 2, Structure::Tribes { width })
    }

    pub fn iterated_majority(depth: u32) -> Result<Self> {
        let n = 3usize.pow(depth);
        Self::structured(n, 2, Structure::IteratedMajority { depth })
    }

    /// Random table over `probs.len()` values.
    pub fn random(n: usize, seed: u64, probs: Vec<f64>) -> Result<Self> {
        Self::random_with_dagger(n, seed, probs, 0.0)
    }

    /// Random table where each entry is † with probability `dagger` and
    /// otherwise drawn from `probs` (normalized).
    pub fn random_with_dagger(n: usize, seed: u64, probs: Vec<f64>, dagger: f64) -> Result<Self> {
        if n > MAX_TABLE_ARITY {
            return Err(Error::BudgetExceeded {
                what: format!("random table of arity {n}"),
                limit: MAX_TABLE_ARITY,
            });
        }
        if probs.len() < 2 || probs.iter().any(|p| !(*p >= 0.0)) || probs.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("probs", "need at least two nonnegative weights with positive sum"));
        }
        if !(0.0..1.0).contains(&dagger) {
            return Err(invalid("dagger", "must lie in [0, 1)"));
        }
        let f = Self::structured(
            n,
            probs.len() as u32,
            Structure::Random { seed, probs, dagger },
        )?;
        f.ensure_table();
        Ok(f)
    }

    /// `x ↦ f(x ⊕ e_coords)`.
    pub fn negated(inner: RangedFunction, coords: Vec<usize>) -> Result<Self> {
        for &c in &coords {
            if c >= inner.n {
                return Err(Error::IndexOutOfRange { index: c, n: inner.n });
            }
        }
        let (n, r) = (inner.n, inner.range_size);
        Self::structured(n, r, Structure::Negated { inner: Box::new(inner), coords })
    }

    /// XOR of Boolean parts on consecutive coordinate blocks.
    pub fn xor(parts: Vec<RangedFunction>) -> Result<Self> {
        if parts.iter().any(|p| !p.is_boolean()) {
            return Err(invalid("parts", "xor parts must be Boolean"));
        }
        let n = parts.iter().map(|p| p.n).sum();
        Self::structured(n, 2, Structure::Xor { parts })
    }

    /// Concatenation of the parts' codes, all parts reading the same input.
    pub fn tuple(parts: Vec<RangedFunction>) -> Result<Self> {
        let Some(n) = parts.first().map(|p| p.n) else {
            return Err(invalid("parts", "tuple needs at least one part"));
        };
        if parts.iter().any(|p| p.n != n) {
            return Err(invalid("parts", "tuple parts must share their arity"));
        }
        let m: usize = parts.iter().map(|p| code_length(p.range_size)).sum();
        if m > 31 {
            return Err(invalid("parts", "combined code longer than 31 bits"));
        }
        Self::structured(n, 1 << m, Structure::Tuple { parts })
    }

    /// Function of arity `n` feeding `inner` from `sources`.
    pub fn embed(inner: RangedFunction, n: usize, sources: Vec<Source>) -> Result<Self> {
        if sources.len() != inner.n {
            return Err(Error::ArityMismatch { expected: inner.n, got: sources.len() });
        }
        for s in &sources {
            if let Source::Coord(c) = *s {
                if c >= n {
                    return Err(Error::IndexOutOfRange { index: c, n });
                }
            }
        }
        // Collapse nested embeddings.
        if let Repr::Structured(Structure::Embed { inner: deeper, sources: inner_sources }) = &inner.repr {
            let composed = inner_sources
                .iter()
                .map(|s| match *s {
                    Source::Const(v) => Source::Const(v),
                    Source::Coord(c) => sources[c],
                })
                .collect();
            return Self::embed((**deeper).clone(), n, composed);
        }
        let r = inner.range_size;
        Self::structured(n, r, Structure::Embed { inner: Box::new(inner), sources })
    }

    /// Replaces inner coordinate `i` by the AND of a block of `blocks[i]`
    /// fresh coordinates.
    pub fn and_blocks(inner: RangedFunction, blocks: Vec<usize>) -> Result<Self> {
        if blocks.len() != inner.n {
            return Err(Error::ArityMismatch { expected: inner.n, got: blocks.len() });
        }
        if blocks.iter().any(|&b| b == 0) {
            return Err(invalid("blocks", "blocks must be nonempty"));
        }
        let n = blocks.iter().sum();
        let r = inner.range_size;
        Self::structured(n, r, Structure::AndBlocks { inner: Box::new(inner), blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn range_size(&self) -> u32 {
        self.range_size
    }

    /// `m = ceil(log2 |R|)`, at least 1.
    pub fn code_length(&self) -> usize {
        code_length(self.range_size)
    }

    pub fn is_boolean(&self) -> bool {
        self.range_size == 2
    }

    pub fn structure(&self) -> Option<&Structure> {
        match &self.repr {
            Repr::Structured(s) => Some(s),
            Repr::Table(_) => None,
        }
    }

    pub fn evaluate(&self, x: &BitVector) -> Result<Output> {
        x.check_arity(self.n)?;
        Ok(Output(self.eval_bits(x.bits())))
    }

    /// Evaluates a packed point; caller guarantees the arity.
    pub(crate) fn eval_bits(&self, bits: u64) -> u32 {
        if let Repr::Table(t) = &self.repr {
            return t[bits as usize];
        }
        if let Some(t) = self.cache.get() {
            return t[bits as usize];
        }
        self.eval_structured(bits)
    }

    /// Builds the cached table if the arity allows it.
    pub(crate) fn ensure_table(&self) {
        if matches!(self.repr, Repr::Table(_)) || self.n > CACHE_ARITY {
            return;
        }
        self.cache.get_or_init(|| {
            if let Repr::Structured(Structure::Random { seed, probs, dagger }) = &self.repr {
                return random_table(self.n, *seed, probs, *dagger).into();
            }
            (0..1u64 << self.n).map(|b| self.eval_structured(b)).collect()
        });
    }

    /// The full table, if the function is small enough to have one.
    pub fn truth_table(&self) -> Option<Vec<Output>> {
        if self.n > MAX_TABLE_ARITY {
            return None;
        }
        self.ensure_table();
        Some((0..1u64 << self.n).map(|b| Output(self.eval_bits(b))).collect())
    }

    /// Structured evaluation, bypassing the cache.
    fn eval_structured(&self, bits: u64) -> u32 {
        let n = self.n;
        let s = match &self.repr {
            Repr::Table(t) => return t[bits as usize],
            Repr::Structured(s) => s,
        };
        match s {
            Structure::Constant { value } => *value,
            Structure::Dictator { coord } => (bits >> coord & 1) as u32,
            Structure::Or => (bits != 0) as u32,
            Structure::And => (bits == bits::low_mask(n)) as u32,
            Structure::Majority => (bits.count_ones() as usize * 2 > n) as u32,
            Structure::Parity => bits.count_ones() & 1,
            Structure::Tribes { width } => {
                let block = bits::low_mask(*width);
                (0..n / width).any(|k| bits >> (k * width) & block == block) as u32
            }
            Structure::IteratedMajority { .. } => {
                let (mut cur, mut len) = (bits, n);
                while len > 1 {
                    let mut next = 0u64;
                    for j in 0..len / 3 {
                        let w = (cur >> (3 * j) & 0b111).count_ones();
                        if w >= 2 {
                            next |= 1 << j;
                        }
                    }
                    cur = next;
                    len /= 3;
                }
                (cur & 1) as u32
            }
            Structure::Random { seed, probs, dagger } => {
                // Only reached when the table cannot be cached.
                random_table(n, *seed, probs, *dagger)[bits as usize]
            }
            Structure::Negated { inner, coords } => inner.eval_bits(bits ^ bits::mask_of(coords)),
            Structure::Bundle { inner, map } => match inner.eval_bits(bits) {
                DAGGER_RAW => DAGGER_RAW,
                v => map[v as usize],
            },
            Structure::Xor { parts } => {
                let mut off = 0;
                let mut acc = 0;
                for p in parts {
                    let v = p.eval_bits(bits >> off & bits::low_mask(p.n));
                    if v == DAGGER_RAW {
                        return DAGGER_RAW;
                    }
                    acc ^= v;
                    off += p.n;
                }
                acc
            }
            Structure::Tuple { parts } => {
                let mut code = 0u32;
                for p in parts {
                    let v = p.eval_bits(bits);
                    if v == DAGGER_RAW {
                        return DAGGER_RAW;
                    }
                    code = code << code_length(p.range_size) | v;
                }
                code
            }
            Structure::Embed { inner, sources } => {
                let mut y = 0u64;
                for (j, s) in sources.iter().enumerate() {
                    let v = match *s {
                        Source::Const(v) => v,
                        Source::Coord(c) => bits >> c & 1 == 1,
                    };
                    if v {
                        y |= 1 << j;
                    }
                }
                inner.eval_bits(y)
            }
            Structure::AndBlocks { inner, blocks } => {
                let mut y = 0u64;
                let mut off = 0;
                for (i, &len) in blocks.iter().enumerate() {
                    let m = bits::low_mask(len);
                    if bits >> off & m == m {
                        y |= 1 << i;
                    }
                    off += len;
                }
                inner.eval_bits(y)
            }
        }
    }

    /// Values that the function actually attains (excluding †), for tabulable arities.
    pub fn attained_values(&self) -> Option<Vec<u32>> {
        if self.n > MAX_TABLE_ARITY {
            return None;
        }
        self.ensure_table();
        let mut seen = vec![false; self.range_size as usize];
        for b in 0..1u64 << self.n {
            let v = self.eval_bits(b);
            if v != DAGGER_RAW {
                seen[v as usize] = true;
            }
        }
        Some((0..self.range_size).filter(|&v| seen[v as usize]).collect())
    }
}

fn random_table(n: usize, seed: u64, probs: &[f64], dagger: f64) -> Vec<u32> {
    let total: f64 = probs.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..1u64 << n)
        .map(|_| {
            if dagger > 0.0 && rng.gen::<f64>() < dagger {
                return DAGGER_RAW;
            }
            let mut u = rng.gen::<f64>() * total;
            for (v, &p) in probs.iter().enumerate() {
                if u < p {
                    return v as u32;
                }
                u -= p;
            }
            (probs.len() - 1) as u32
        })
        .collect()
}

/// Negates `coords` in both the function and the measure, so that the law of
/// the function's value is unchanged.
pub fn negate_coordinates(
    f: &RangedFunction,
    measure: &ProductMeasure,
    coords: &[usize],
) -> Result<(RangedFunction, ProductMeasure)> {
    if f.n() != measure.n() {
        return Err(Error::ArityMismatch { expected: f.n(), got: measure.n() });
    }
    let flipped = measure.flip(coords)?;
    if coords.is_empty() {
        return Ok((f.clone(), flipped));
    }
    Ok((RangedFunction::negated(f.clone(), coords.to_vec())?, flipped))
}

/// Composes `f` with a map on its range. `partition[v]` is the new value of `v`.
pub fn bundle_range(f: &RangedFunction, partition: &[u32]) -> Result<RangedFunction> {
    if partition.len() != f.range_size() as usize {
        return Err(Error::Precondition(format!(
            "partition covers {} of {} range values",
            partition.len(),
            f.range_size()
        )));
    }
    let new_size = partition.iter().copied().max().unwrap_or(0) + 1;
    RangedFunction::structured(
        f.n(),
        new_size.max(2),
        Structure::Bundle {
            inner: Box::new(f.clone()),
            map: partition.to_vec(),
        },
    )
}

// ---- serialization ----

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FunctionRepr {
    Table {
        n: usize,
        range_size: u32,
        table: Vec<i64>,
    },
    Structured {
        n: usize,
        range_size: u32,
        #[serde(flatten)]
        structure: Structure,
    },
}

impl Serialize for RangedFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match &self.repr {
            Repr::Table(t) => FunctionRepr::Table {
                n: self.n,
                range_size: self.range_size,
                table: t.iter().map(|&v| Output(v).to_i64()).collect(),
            },
            Repr::Structured(st) => FunctionRepr::Structured {
                n: self.n,
                range_size: self.range_size,
                structure: st.clone(),
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RangedFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = FunctionRepr::deserialize(d)?;
        let f = match repr {
            FunctionRepr::Table { n, range_size, table } => {
                let table = table
                    .into_iter()
                    .map(Output::from_i64)
                    .collect::<Result<Vec<_>>>()
                    .map_err(D::Error::custom)?;
                RangedFunction::from_table(n, range_size, table)
            }
            FunctionRepr::Structured { n, range_size, structure } => {
                rebuild(n, range_size, structure)
            }
        };
        f.map_err(D::Error::custom)
    }
}

/// Re-runs the validating constructors on deserialized parameters.
fn rebuild(n: usize, range_size: u32, s: Structure) -> Result<RangedFunction> {
    let f = match s {
        Structure::Constant { value } => {
            let mut f = RangedFunction::constant(n, value)?;
            f.range_size = range_size.max(f.range_size);
            f
        }
        Structure::Dictator { coord } => RangedFunction::dictator(n, coord)?,
        Structure::Or => RangedFunction::or(n)?,
        Structure::And => RangedFunction::and(n)?,
        Structure::Majority => RangedFunction::majority(n)?,
        Structure::Parity => RangedFunction::parity(n)?,
        Structure::Tribes { width } => RangedFunction::tribes(n, width)?,
        Structure::IteratedMajority { depth } => RangedFunction::iterated_majority(depth)?,
        Structure::Random { seed, probs, dagger } => {
            RangedFunction::random_with_dagger(n, seed, probs, dagger)?
        }
        Structure::Negated { inner, coords } => RangedFunction::negated(*inner, coords)?,
        Structure::Bundle { inner, map } => bundle_range(&inner, &map)?,
        Structure::Xor { parts } => RangedFunction::xor(parts)?,
        Structure::Tuple { parts } => RangedFunction::tuple(parts)?,
        Structure::Embed { inner, sources } => RangedFunction::embed(*inner, n, sources)?,
        Structure::AndBlocks { inner, blocks } => RangedFunction::and_blocks(*inner, blocks)?,
    };
    if f.n != n {
        return Err(Error::ArityMismatch { expected: f.n, got: n });
    }
    Ok(f)
}

// ---- multi-round protocols ----

/// An `r`-round protocol on `n` players: a Boolean outcome on `r * n`
/// coordinates, round `i` (0-based) owning coordinates `i*n .. (i+1)*n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ProtocolRepr", into = "ProtocolRepr")]
pub struct MultiRoundProtocol {
    r: usize,
    n: usize,
    outcome: RangedFunction,
    round_measures: Vec<ProductMeasure>,
}

#[derive(Serialize, Deserialize)]
struct ProtocolRepr {
    rounds: usize,
    n: usize,
    outcome: RangedFunction,
    round_measures: Vec<ProductMeasure>,
}

impl TryFrom<ProtocolRepr> for MultiRoundProtocol {
    type Error = Error;
    fn try_from(p: ProtocolRepr) -> Result<Self> {
        let proto = MultiRoundProtocol::new(p.outcome, p.round_measures)?;
        if proto.r != p.rounds || proto.n != p.n {
            return Err(invalid("rounds", "declared shape disagrees with measures"));
        }
        Ok(proto)
    }
}

impl From<MultiRoundProtocol> for ProtocolRepr {
    fn from(p: MultiRoundProtocol) -> Self {
        ProtocolRepr {
            rounds: p.r,
            n: p.n,
            outcome: p.outcome,
            round_measures: p.round_measures,
        }
    }
}

impl MultiRoundProtocol {
    pub fn new(outcome: RangedFunction, round_measures: Vec<ProductMeasure>) -> Result<Self> {
        let r = round_measures.len();
        if r == 0 {
            return Err(invalid("round_measures", "need at least one round"));
        }
        let n = round_measures[0].n();
        if round_measures.iter().any(|m| m.n() != n) {
            return Err(invalid("round_measures", "every round must have the same player count"));
        }
        if outcome.n() != r * n {
            return Err(Error::ArityMismatch { expected: r * n, got: outcome.n() });
        }
        if !outcome.is_boolean() {
            return Err(invalid("outcome", "protocol outcome must be Boolean"));
        }
        Ok(MultiRoundProtocol { r, n, outcome, round_measures })
    }

    /// Single-round view of a function and measure.
    pub fn single(f: RangedFunction, measure: ProductMeasure) -> Result<Self> {
        Self::new(f, vec![measure])
    }

    pub fn rounds(&self) -> usize {
        self.r
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn outcome(&self) -> &RangedFunction {
        &self.outcome
    }

    pub fn round_measure(&self, i: usize) -> &ProductMeasure {
        &self.round_measures[i]
    }

    pub fn round_measures(&self) -> &[ProductMeasure] {
        &self.round_measures
    }

    /// The product of all round measures, on `r * n` coordinates.
    pub fn joint_measure(&self) -> ProductMeasure {
        let biases = self
            .round_measures
            .iter()
            .flat_map(|m| m.biases().iter().copied())
            .collect();
        ProductMeasure::new(biases).expect("round measures are valid")
    }

    /// Evaluates on the concatenation of the rounds' broadcasts.
    pub fn evaluate(&self, rounds: &[BitVector]) -> Result<Output> {
        if rounds.len() != self.r {
            return Err(Error::ArityMismatch { expected: self.r, got: rounds.len() });
        }
        let mut bits = 0u64;
        for (i, x) in rounds.iter().enumerate() {
            x.check_arity(self.n)?;
            bits |= x.bits() << (i * self.n);
        }
        Ok(Output(self.outcome.eval_bits(bits)))
    }

    /// Fixes the first round to `x`, leaving an `(r-1)`-round protocol.
    pub fn restrict_first_round(&self, x: &BitVector) -> Result<Self> {
        if self.r < 2 {
            return Err(Error::Precondition(
                "cannot restrict the only round; evaluate instead".into(),
            ));
        }
        x.check_arity(self.n)?;
        let n = self.n;
        let sources = (0..self.r * n)
            .map(|j| {
                if j < n {
                    Source::Const(x.get(j))
                } else {
                    Source::Coord(j - n)
                }
            })
            .collect();
        let outcome = RangedFunction::embed(self.outcome.clone(), (self.r - 1) * n, sources)?;
        MultiRoundProtocol::new(outcome, self.round_measures[1..].to_vec())
    }
}

/// The standard benchmark set on `n` coordinates: ten structured functions
/// followed by ten random tables.
pub fn zoo(n: usize, seed: u64) -> Result<Vec<(String, RangedFunction)>> {
    let mut out: Vec<(String, RangedFunction)> = vec![
        ("or".into(), RangedFunction::or(n)?),
        ("and".into(), RangedFunction::and(n)?),
        ("majority".into(), RangedFunction::majority(n)?),
        ("majority-negated".into(), RangedFunction::negated(RangedFunction::majority(n)?, (0..n).collect())?),
        ("parity".into(), RangedFunction::parity(n)?),
        ("dictator".into(), RangedFunction::dictator(n, 0)?),
    ];
    for w in [2usize, 4] {
        if n % w == 0 {
            out.push((format!("tribes{w}"), RangedFunction::tribes(n, w)?));
        }
    }
    let half = n / 2;
    if half >= 1 {
        out.push((
            "majority-xor-or".into(),
            RangedFunction::xor(vec![RangedFunction::majority(half)?, RangedFunction::or(n - half)?])?,
        ));
        out.push((
            "and-xor-majority".into(),
            RangedFunction::xor(vec![RangedFunction::and(half)?, RangedFunction::majority(n - half)?])?,
        ));
    }
    let weights = [[0.5, 0.5], [0.9, 0.1], [0.1, 0.9], [0.7, 0.3], [0.3, 0.7]];
    for i in 0..10u64 {
        let w = weights[i as usize % weights.len()];
        out.push((
            format!("random{i}"),
            RangedFunction::random(n, seed.wrapping_add(i), w.to_vec())?,
        ));
    }
    Ok(out)
}
