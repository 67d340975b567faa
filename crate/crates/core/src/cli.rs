//! Experiment harness behind the `coinflip` binary.
//!
//! One invocation runs one subcommand. Parameters come from a JSON config
//! file, overridden field by field by command-line flags. Results are CSV rows
//! in a fixed column order (see [`ResultRow`]); full outcomes with traces go
//! to an optional JSON sidecar.
//!
//! Exit codes: 0 success, 2 a search or check FAILED, 3 configuration error,
//! 4 budget error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adversary::optimal_influence;
use crate::error::Error;
use crate::functions::{zoo, MultiRoundProtocol, RangedFunction};
use crate::influence::{
    boosted_influence, certify_resilience, coalition_influence, Coalition, InfluenceEstimate, Mode, Resilience,
    DEFAULT_MC_SAMPLES,
};
use crate::measures::ProductMeasure;
use crate::search::{
    boosted_success_rates, find_single_round, large_range_coalition, multi_round_coalition, prop22_k,
    MultiRoundParams, RangeParams, SearchOutcome, SingleRoundParams, Status,
};

/// Version of the CSV columns and the JSON sidecar layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Influence,
    BoostedInfluence,
    Resilience,
    SearchSingle,
    SearchRange,
    SearchMulti,
    AdversaryDp,
    VerifyProp22,
    VerifyOrExample,
    Zoo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Influence => "influence",
            Command::BoostedInfluence => "boosted-influence",
            Command::Resilience => "resilience",
            Command::SearchSingle => "search-single",
            Command::SearchRange => "search-range",
            Command::SearchMulti => "search-multi",
            Command::AdversaryDp => "adversary-dp",
            Command::VerifyProp22 => "verify-prop22",
            Command::VerifyOrExample => "verify-or-example",
            Command::Zoo => "zoo",
        }
    }

    /// Whether the subcommand draws random samples regardless of mode.
    pub fn is_randomized(self) -> bool {
        matches!(
            self,
            Command::SearchSingle
                | Command::SearchRange
                | Command::SearchMulti
                | Command::VerifyProp22
                | Command::Zoo
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Exact,
    Mc,
}

/// Everything a subcommand reads. Unset fields take per-subcommand defaults,
/// except `seed`, which randomized runs must always supply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    /// Subcommand to run.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// Free-form experiment id copied into every row.
    #[arg(long)]
    pub id: Option<String>,
    /// Function spec: `or`, `tribes:4`, `xor:majority@9+or@7`, inline JSON or `@file.json`.
    #[arg(long)]
    pub function: Option<String>,
    /// Measure spec: `uniform:16`, `p:1/16:16`, `biases:0.1,0.5`, joined with `+`.
    #[arg(long)]
    pub measure: Option<String>,
    /// Protocol spec: `or-xor-maj:8`, `parity:8`, `random:SEED:8`, inline JSON or `@file.json`.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Per-round measure specs separated by `;`.
    #[arg(long)]
    pub round_measures: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub mc_samples: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coalition as 1-based members separated by `;` or `,`.
    #[arg(long = "S", visible_alias = "coalition", allow_hyphen_values = true)]
    pub coalition: Option<String>,
    /// Target value.
    #[arg(long)]
    pub b: Option<u32>,
    /// Boost level.
    #[arg(long)]
    pub t: Option<usize>,
    /// Rounds of a built-in protocol.
    #[arg(long)]
    pub r: Option<usize>,
    /// Coalition size bound for resilience checks.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Arity when no measure is given.
    #[arg(long)]
    pub n: Option<usize>,
    /// Boost level for supports in prop22 checks.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub y_samples: Option<u64>,
    /// The constant in the large-range boost schedule.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub c_delta: Option<f64>,
    #[arg(long)]
    pub c_k: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub pool_scan: Option<bool>,
    /// Estimate by Monte-Carlo when an exact request exceeds its budget.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_mc: Option<bool>,
}

impl ExperimentConfig {
    /// Fields set in `self` win over `base`.
    pub fn overlay(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut merged = serde_json::to_value(base).expect("config serializes");
        let top = serde_json::to_value(self).expect("config serializes");
        if let (Value::Object(m), Value::Object(t)) = (&mut merged, top) {
            for (k, v) in t {
                if !v.is_null() {
                    m.insert(k, v);
                }
            }
        }
        serde_json::from_value(merged).expect("merged config deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }
}

/// Command line of the `coinflip` binary.
#[derive(Debug, Parser)]
#[command(name = "coinflip", version, about = "Coalition influence experiments")]
pub struct Cli {
    #[command(flatten)]
    pub config: ExperimentConfig,
    /// JSON config file; flags override its fields.
    #[arg(long = "config")]
    pub config_file: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON sidecar with the merged config and full outcomes.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Succeed only if some row FAILED.
    #[arg(long)]
    pub expect_failed: bool,
    /// Worker threads, 0 = automatic.
    #[arg(long, env = "COINFLIP_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("budget error: {0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Budget(_) => EXIT_BUDGET,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn missing(field: &str, cmd: Command) -> CliError {
    CliError::Config(format!("missing field `{field}`: required by {}", cmd.name()))
}

/// One CSV row. Field order is the column order; unset cells are empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: String,
    pub command: String,
    pub function: String,
    pub measure: String,
    pub n: usize,
    pub mode: String,
    pub mc_samples: Option<u64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub t: Option<usize>,
    pub r: Option<usize>,
    pub ell: Option<usize>,
    pub k: Option<usize>,
    pub trials: Option<u64>,
    pub b: Option<u32>,
    /// Sub-case within the run: a zoo entry, `s=3`, `boost=2`.
    pub label: String,
    /// 1-based, `;`-joined.
    pub coalition: String,
    pub size: Option<usize>,
    pub value: Option<f64>,
    pub radius: Option<f64>,
    /// 1 when `value` is exact.
    pub exact: Option<u8>,
    pub expected: Option<f64>,
    pub target: Option<u32>,
    /// `certified`, `failed`, `pass`, `fail`, `resilient`, `witness`, or empty.
    pub status: String,
    /// `;`-joined trace flags.
    pub flags: String,
    pub runtime_ms: u64,
}

impl ResultRow {
    fn is_failure(&self) -> bool {
        self.status == "failed" || self.status == "fail"
    }

    fn estimate(mut self, e: &InfluenceEstimate) -> Self {
        self.value = Some(e.value);
        self.radius = Some(e.radius);
        self.exact = Some(u8::from(e.is_exact()));
        self
    }

    fn coalition(mut self, s: &Coalition) -> Self {
        self.coalition = s.to_one_based();
        self.size = Some(s.len());
        self
    }

    fn outcome(self, o: &SearchOutcome) -> Self {
        let mut row = self.coalition(&o.coalition).estimate(&o.certificate);
        row.target = Some(o.target);
        row.status = status_name(o.status).into();
        row.flags = o.trace.flags.join(";");
        row
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Certified => "certified",
        Status::Failed => "failed",
    }
}

/// Rows plus the JSON artifacts behind them.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub artifacts: Vec<Value>,
}

impl Report {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(ResultRow::is_failure)
    }

    pub fn exit_code(&self, expect_failed: bool) -> i32 {
        match (self.any_failed(), expect_failed) {
            (false, false) | (true, true) => EXIT_OK,
            _ => EXIT_FAILED,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(csv_header())?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()
    }

    /// Sidecar contents. Timings are left out so reruns compare equal.
    pub fn sidecar(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("row serializes");
                if let Value::Object(m) = &mut v {
                    m.remove("runtime_ms");
                }
                v
            })
            .collect();
        json!({
            "schema": SCHEMA_VERSION,
            "config": self.config,
            "rows": rows,
            "artifacts": self.artifacts,
        })
    }
}

/// Column names in order.
pub fn csv_header() -> Vec<&'static str> {
    vec![
        "id", "command", "function", "measure", "n", "mode", "mc_samples", "epsilon", "seed", "t", "r", "ell", "k",
        "trials", "b", "label", "coalition", "size", "value", "radius", "exact", "expected", "target", "status",
        "flags", "runtime_ms",
    ]
}

// ---- spec parsing ----

fn parse_f64(s: &str) -> crate::Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("`{s}` is not a number"));
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            Ok(a / b)
        }
        None => s.parse().map_err(|_| bad()),
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str) -> crate::Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: `{s}` is not a non-negative integer")))
}

fn json_source(spec: &str) -> crate::Result<Option<String>> {
    let spec = spec.trim();
    if spec.starts_with('{') {
        return Ok(Some(spec.to_string()));
    }
    if let Some(path) = spec.strip_prefix('@') {
        return fs::read_to_string(path)
            .map(Some)
            .map_err(|e| Error::Parse(format!("cannot read `{path}`: {e}")));
    }
    Ok(None)
}

/// Parses a measure spec; see [`ExperimentConfig::measure`].
pub fn parse_measure(spec: &str) -> crate::Result<ProductMeasure> {
    if let Some(text) = json_source(spec)? {
        return serde_json::from_str(&text).map_err(|e| Error::Parse(format!("measure: {e}")));
    }
    let mut biases = Vec::new();
    for part in spec.split('+') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        match fields.as_slice() {
            ["uniform", n] => biases.extend(std::iter::repeat(0.5).take(parse_int(n, "uniform arity")?)),
            ["p", p, n] => {
                let p = parse_f64(p)?;
                biases.extend(std::iter::repeat(p).take(parse_int(n, "arity")?));
            }
            ["biases", list] => {
                for v in list.split(',') {
                    biases.push(parse_f64(v)?);
                }
            }
            _ => return Err(Error::Parse(format!("unknown measure spec `{part}`"))),
        }
    }
    ProductMeasure::new(biases)
}

/// Parses a function spec on `n` coordinates; see [`ExperimentConfig::function`].
/// Dictator coordinates are 1-based.
pub fn parse_function(spec: &str, n: usize) -> crate::Result<RangedFunction> {
    if let Some(text) = json_source(spec)? {
        let f: RangedFunction = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("function: {e}")))?;
        if f.n() != n {
            return Err(Error::ArityMismatch { expected: n, got: f.n() });
        }
        return Ok(f);
    }
    let spec = spec.trim();
    let (name, arg) = match spec.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (spec, None),
    };
    let need = |what: &str| arg.ok_or_else(|| Error::Parse(format!("`{name}` needs {what}")));
    match name {
        "or" => RangedFunction::or(n),
        "and" => RangedFunction::and(n),
        "majority" | "maj" => RangedFunction::majority(n),
        "parity" => RangedFunction::parity(n),
        "constant" => RangedFunction::constant(n, parse_int(need("a value")?, "constant value")?),
        "dictator" => {
            let i: usize = parse_int(need("a coordinate")?, "dictator coordinate")?;
            if i == 0 {
                return Err(Error::Parse("dictator coordinates are 1-based".into()));
            }
            RangedFunction::dictator(n, i - 1)
        }
        "tribes" => RangedFunction::tribes(n, parse_int(need("a width")?, "tribes width")?),
        "itmaj" => {
            let f = RangedFunction::iterated_majority(parse_int(need("a depth")?, "depth")?)?;
            if f.n() != n {
                return Err(Error::ArityMismatch { expected: n, got: f.n() });
            }
            Ok(f)
        }
        "random" => {
            let arg = need("a seed")?;
            let (seed, probs) = match arg.split_once(':') {
                Some((s, p)) => (s, p.split(',').map(parse_f64).collect::<crate::Result<Vec<_>>>()?),
                None => (arg, vec![0.5, 0.5]),
            };
            RangedFunction::random(n, parse_int(seed, "random seed")?, probs)
        }
        "xor" => {
            let parts = need("parts")?
                .split('+')
                .map(|p| {
                    let (inner, arity) = p
                        .rsplit_once('@')
                        .ok_or_else(|| Error::Parse(format!("xor part `{p}` needs an `@arity`")))?;
                    parse_function(inner, parse_int(arity, "xor part arity")?)
                })
                .collect::<crate::Result<Vec<_>>>()?;
            let f = RangedFunction::xor(parts)?;
            if f.n() != n {
                return Err(Error::ArityMismatch { expected: n, got: f.n() });
            }
            Ok(f)
        }
        "tuple" => {
            let parts = need("parts")?
                .split('+')
                .map(|p| parse_function(p, n))
                .collect::<crate::Result<Vec<_>>>()?;
            RangedFunction::tuple(parts)
        }
        _ => Err(Error::Parse(format!("unknown function spec `{spec}`"))),
    }
}

/// Parses a protocol spec. Built-ins default to `μ_{1/n}` in the first
/// round and uniform afterwards unless `round_measures` is given.
pub fn parse_protocol(spec: &str, rounds: usize, round_measures: Option<&str>) -> crate::Result<MultiRoundProtocol> {
    if let Some(text) = json_source(spec)? {
        return serde_json::from_str(&text).map_err(|e| Error::Parse(format!("protocol: {e}")));
    }
    let fields: Vec<&str> = spec.trim().split(':').collect();
    let (n, outcome) = match fields.as_slice() {
        ["or-xor-maj", n] => {
            let n = parse_int(n, "players")?;
            if rounds != 2 {
                return Err(Error::Parse("or-xor-maj is a two-round protocol".into()));
            }
            (n, RangedFunction::xor(vec![RangedFunction::or(n)?, RangedFunction::majority(n)?])?)
        }
        ["parity", n] => {
            let n: usize = parse_int(n, "players")?;
            (n, RangedFunction::parity(rounds * n)?)
        }
        ["random", seed, n] => {
            let n: usize = parse_int(n, "players")?;
            (n, RangedFunction::random(rounds * n, parse_int(seed, "random seed")?, vec![0.5, 0.5])?)
        }
        _ => return Err(Error::Parse(format!("unknown protocol spec `{spec}`"))),
    };
    let measures = match round_measures {
        Some(list) => list.split(';').map(parse_measure).collect::<crate::Result<Vec<_>>>()?,
        None => (0..rounds)
            .map(|i| if i == 0 { ProductMeasure::uniform_bias(n, 1.0 / n as f64) } else { Ok(ProductMeasure::uniform(n)) })
            .collect::<crate::Result<Vec<_>>>()?,
    };
    MultiRoundProtocol::new(outcome, measures)
}

// ---- running ----

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    cmd: Command,
}

impl Ctx<'_> {
    fn seed(&self) -> CliResult<u64> {
        self.cfg.seed.ok_or_else(|| missing("seed", self.cmd))
    }

    fn epsilon(&self) -> CliResult<f64> {
        self.cfg.epsilon.ok_or_else(|| missing("epsilon", self.cmd))
    }

    fn measure_spec(&self) -> String {
        self.cfg
            .measure
            .clone()
            .unwrap_or_else(|| format!("uniform:{}", self.cfg.n.unwrap_or(16)))
    }

    fn measure(&self) -> CliResult<ProductMeasure> {
        Ok(parse_measure(&self.measure_spec())?)
    }

    fn function(&self, n: usize) -> CliResult<RangedFunction> {
        let spec = self.cfg.function.as_deref().ok_or_else(|| missing("function", self.cmd))?;
        Ok(parse_function(spec, n)?)
    }

    fn coalition(&self, n: usize) -> CliResult<Coalition> {
        Ok(Coalition::from_one_based(self.cfg.coalition.as_deref().unwrap_or(""), n)?)
    }

    fn mode(&self) -> CliResult<Mode> {
        match self.cfg.mode.unwrap_or(ModeName::Exact) {
            ModeName::Exact => Ok(Mode::Exact),
            ModeName::Mc => Ok(Mode::MonteCarlo { samples: self.mc_samples(), seed: self.seed()? }),
        }
    }

    fn mc_samples(&self) -> u64 {
        self.cfg.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES)
    }

    /// Runs `op` in the configured mode; an exact request over budget is
    /// retried by Monte-Carlo only when `allow-mc` is set.
    fn with_downgrade<T>(&self, op: impl Fn(Mode) -> crate::Result<T>) -> CliResult<(T, bool)> {
        let mode = self.mode()?;
        match op(mode) {
            Err(Error::BudgetExceeded { .. }) if mode == Mode::Exact && self.cfg.allow_mc == Some(true) => {
                let mc = Mode::MonteCarlo { samples: self.mc_samples(), seed: self.seed()? };
                Ok((op(mc)?, true))
            }
            other => Ok((other?, false)),
        }
    }

    fn base_row(&self) -> ResultRow {
        let c = self.cfg;
        ResultRow {
            id: c.id.clone().unwrap_or_default(),
            command: self.cmd.name().into(),
            function: c.function.clone().unwrap_or_default(),
            measure: c.measure.clone().unwrap_or_default(),
            mode: match c.mode.unwrap_or(ModeName::Exact) {
                ModeName::Exact => "exact".into(),
                ModeName::Mc => "mc".into(),
            },
            mc_samples: (c.mode == Some(ModeName::Mc)).then(|| self.mc_samples()),
            epsilon: c.epsilon,
            seed: c.seed,
            t: c.t,
            r: c.r,
            ell: c.ell,
            k: c.k,
            trials: c.trials,
            b: c.b,
            ..ResultRow::default()
        }
    }

    fn single_params(&self) -> SingleRoundParams {
        let d = SingleRoundParams::default();
        SingleRoundParams {
            y_samples: self.cfg.y_samples.unwrap_or(d.y_samples),
            trials: self.cfg.trials.unwrap_or(d.trials),
            range: self.range_params(),
            ..d
        }
    }

    fn range_params(&self) -> RangeParams {
        let d = RangeParams::default();
        RangeParams {
            c: self.cfg.c.unwrap_or(d.c),
            trials: self.cfg.trials.unwrap_or(d.trials),
            retries: self.cfg.retries.unwrap_or(d.retries),
        }
    }

    fn multi_params(&self) -> MultiRoundParams {
        let d = MultiRoundParams::default();
        MultiRoundParams {
            c_delta: self.cfg.c_delta.unwrap_or(d.c_delta),
            c_k: self.cfg.c_k.unwrap_or(d.c_k),
            pool_size: self.cfg.pool_size.unwrap_or(d.pool_size),
            scan_pool: self.cfg.pool_scan.unwrap_or(d.scan_pool),
            retries: self.cfg.retries.unwrap_or(d.retries),
            single: self.single_params(),
            ..d
        }
    }

    fn protocol(&self) -> CliResult<MultiRoundProtocol> {
        match &self.cfg.protocol {
            Some(spec) => Ok(parse_protocol(spec, self.cfg.r.unwrap_or(2), self.cfg.round_measures.as_deref())?),
            None => {
                let mu = self.measure()?;
                let f = self.function(mu.n())?;
                Ok(MultiRoundProtocol::single(f, mu)?)
            }
        }
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// 3σ binomial slack around `1 - ε` for a success fraction over `trials`.
pub fn prop22_slack(eps: f64, trials: u64) -> f64 {
    3.0 * (eps * (1.0 - eps) / trials as f64).sqrt()
}

/// Runs the configured subcommand.
pub fn run(cfg: &ExperimentConfig) -> CliResult<Report> {
    let cmd = cfg.command.ok_or_else(|| CliError::Config("missing field `command`".into()))?;
    let ctx = Ctx { cfg, cmd };
    if cmd.is_randomized() {
        ctx.seed()?;
    }
    let mut report = Report { config: cfg.clone(), ..Report::default() };
    let start = Instant::now();
    match cmd {
        Command::Influence | Command::BoostedInfluence => {
            let mu = ctx.measure()?;
            let f = ctx.function(mu.n())?;
            let s = ctx.coalition(mu.n())?;
            let t = match cmd {
                Command::BoostedInfluence => Some(cfg.t.ok_or_else(|| missing("t", cmd))?),
                _ => None,
            };
            let values: Vec<u32> = match cfg.b {
                Some(b) => vec![b],
                None => (0..f.range_size()).collect(),
            };
            for b in values {
                let (est, down) = ctx.with_downgrade(|mode| match t {
                    Some(t) => boosted_influence(&f, &mu, &s, b, t, mode),
                    None => coalition_influence(&f, &mu, &s, b, mode),
                })?;
                let mut row = ctx.base_row().coalition(&s).estimate(&est);
                row.n = mu.n();
                row.b = Some(b);
                if down {
                    row.flags = "downgraded-to-mc".into();
                }
                row.runtime_ms = elapsed_ms(start);
                report.artifacts.push(json!({ "b": b, "estimate": est }));
                report.rows.push(row);
            }
        }
        Command::Resilience => {
            let mu = ctx.measure()?;
            let f = ctx.function(mu.n())?;
            let eps = ctx.epsilon()?;
            let ell = cfg.ell.ok_or_else(|| missing("ell", cmd))?;
            let verdict = certify_resilience(&f, &mu, eps, ell)?;
            let mut row = ctx.base_row();
            row.n = mu.n();
            match &verdict {
                Resilience::Resilient { max_influence } => {
                    row.status = "resilient".into();
                    row.value = Some(*max_influence);
                }
                Resilience::Witness { coalition, b, influence } => {
                    row = row.coalition(coalition);
                    row.status = "witness".into();
                    row.target = Some(*b);
                    row.value = Some(*influence);
                }
            }
            row.exact = Some(1);
            row.runtime_ms = elapsed_ms(start);
            report.artifacts.push(serde_json::to_value(&verdict).expect("verdict serializes"));
            report.rows.push(row);
        }
        Command::SearchSingle => {
            let mu = ctx.measure()?;
            let f = ctx.function(mu.n())?;
            let out = find_single_round(&f, &mu, ctx.epsilon()?, ctx.seed()?, ctx.single_params())?;
            let mut row = ctx.base_row().outcome(&out);
            row.n = mu.n();
            row.runtime_ms = elapsed_ms(start);
            report.rows.push(row);
            report.artifacts.push(serde_json::to_value(&out).expect("outcome serializes"));
        }
        Command::SearchRange => {
            let mu = ctx.measure()?;
            let f = ctx.function(mu.n())?;
            let t = cfg.t.unwrap_or(1);
            let out = large_range_coalition(&f, &mu, t, ctx.epsilon()?, ctx.seed()?, ctx.range_params())?;
            let runtime = elapsed_ms(start);
            let base = ctx.base_row().outcome(&out);
            if out.boosted_certificates.is_empty() {
                report.rows.push(ResultRow { n: mu.n(), runtime_ms: runtime, ..base.clone() });
            }
            for (level, est) in &out.boosted_certificates {
                let mut row = base.clone().estimate(est);
                row.n = mu.n();
                row.label = format!("boost={level}");
                row.runtime_ms = runtime;
                report.rows.push(row);
            }
            report.artifacts.push(serde_json::to_value(&out).expect("outcome serializes"));
        }
        Command::SearchMulti => {
            let proto = ctx.protocol()?;
            let out = multi_round_coalition(&proto, ctx.epsilon()?, ctx.seed()?, ctx.multi_params())?;
            let mut row = ctx.base_row().outcome(&out);
            row.n = proto.players();
            row.r = Some(proto.rounds());
            row.runtime_ms = elapsed_ms(start);
            report.rows.push(row);
            report.artifacts.push(serde_json::to_value(&out).expect("outcome serializes"));
        }
        Command::AdversaryDp => {
            let proto = ctx.protocol()?;
            let s = ctx.coalition(proto.players())?;
            if cfg.mode == Some(ModeName::Mc) {
                return Err(CliError::Config("field `mode`: adversary-dp is exact; use allow-mc for a fallback".into()));
            }
            let values: Vec<u32> = match cfg.b {
                Some(b) => vec![b],
                None => vec![0, 1],
            };
            for b in values {
                let (est, down) = match optimal_influence(&proto, &s, b) {
                    Ok(v) => (InfluenceEstimate::exact(v.value), false),
                    Err(Error::BudgetExceeded { .. }) if cfg.allow_mc == Some(true) => (
                        crate::search::certify_protocol(&proto, &s, b, ctx.mc_samples(), ctx.seed()?)?,
                        true,
                    ),
                    Err(e) => return Err(e.into()),
                };
                let mut row = ctx.base_row().coalition(&s).estimate(&est);
                row.n = proto.players();
                row.r = Some(proto.rounds());
                row.b = Some(b);
                if down {
                    row.flags = "downgraded-to-mc".into();
                }
                row.runtime_ms = elapsed_ms(start);
                report.artifacts.push(json!({ "b": b, "estimate": est }));
                report.rows.push(row);
            }
        }
        Command::VerifyProp22 => {
            let mu = ctx.measure()?;
            let f = ctx.function(mu.n())?;
            let row = prop22_row(&ctx, &f, &mu, "", start, &mut report.artifacts)?;
            report.rows.push(row);
        }
        Command::Zoo => {
            let n = cfg.n.unwrap_or(16);
            let mu = match &cfg.measure {
                Some(spec) => parse_measure(spec)?,
                None => ProductMeasure::uniform_bias(n, 1.0 / n as f64)?,
            };
            for (name, f) in zoo(mu.n(), ctx.seed()?)? {
                let unit = Instant::now();
                let row = prop22_row(&ctx, &f, &mu, &name, unit, &mut report.artifacts)?;
                report.rows.push(row);
            }
        }
        Command::VerifyOrExample => {
            let n = cfg.n.unwrap_or(16);
            let p = 1.0 / n as f64;
            let f = RangedFunction::or(n)?;
            let mu = ProductMeasure::uniform_bias(n, p)?;
            for s in 0..n {
                let coalition = Coalition::new(0..s, n)?;
                for b in [0u32, 1] {
                    let est = coalition_influence(&f, &mu, &coalition, b, Mode::Exact)?;
                    let expected = match (b, s) {
                        (0, _) => (1.0 - p).powi((n - s) as i32),
                        (_, 0) => 1.0 - (1.0 - p).powi(n as i32),
                        _ => 1.0,
                    };
                    let mut row = ctx.base_row().coalition(&coalition).estimate(&est);
                    row.n = n;
                    row.function = format!("or:{n}");
                    row.measure = format!("p:1/{n}:{n}");
                    row.b = Some(b);
                    row.label = format!("s={s}");
                    row.expected = Some(expected);
                    row.status = if (est.value - expected).abs() <= 1e-12 { "pass" } else { "fail" }.into();
                    row.runtime_ms = elapsed_ms(start);
                    report.rows.push(row);
                }
            }
        }
    }
    Ok(report)
}

fn prop22_row(
    ctx: &Ctx<'_>,
    f: &RangedFunction,
    mu: &ProductMeasure,
    label: &str,
    start: Instant,
    artifacts: &mut Vec<Value>,
) -> CliResult<ResultRow> {
    let eps = ctx.epsilon()?;
    let k = ctx.cfg.k.unwrap_or_else(|| prop22_k(eps));
    let trials = ctx.cfg.trials.unwrap_or(400);
    let rates = boosted_success_rates(f, mu, eps, k, trials, ctx.seed()?)?;
    let (best_b, best) = rates
        .iter()
        .enumerate()
        .fold((0usize, f64::MIN), |acc, (b, &r)| if r > acc.1 { (b, r) } else { acc });
    let floor = 1.0 - eps - prop22_slack(eps, trials);
    let mut row = ctx.base_row();
    row.n = mu.n();
    row.k = Some(k);
    row.trials = Some(trials);
    row.label = label.into();
    row.target = Some(best_b as u32);
    row.value = Some(best);
    row.expected = Some(1.0 - eps);
    row.status = if best >= floor { "pass" } else { "fail" }.into();
    row.runtime_ms = elapsed_ms(start);
    artifacts.push(json!({ "label": label, "k": k, "rates": rates }));
    Ok(row)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("coinflip: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    if cli.threads > 0 {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let base = match &cli.config_file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let cfg = cli.config.overlay(&base);
    let report = run(&cfg)?;
    let io = |e: std::io::Error| CliError::Config(format!("cannot write output: {e}"));
    match &cli.out {
        Some(path) => report.write_csv(fs::File::create(path).map_err(io)?).map_err(io)?,
        None => report.write_csv(std::io::stdout().lock()).map_err(io)?,
    }
    if let Some(path) = &cli.json {
        let text = serde_json::to_string_pretty(&report.sidecar()).expect("sidecar serializes");
        fs::write(path, text + "\n").map_err(io)?;
    }
    Ok(report.exit_code(cli.expect_failed))
}
