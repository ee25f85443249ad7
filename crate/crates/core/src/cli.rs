//! Command-line surface: configuration resolution, the seven subcommands,
//! and CSV / JSON / SVG emitters.
//!
//! Configuration is layered: per-command defaults, then an optional preset,
//! then a config file of dotted `key = value` lines, then flags. Unknown
//! keys and out-of-range values are rejected with the offending line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use toml::{Table, Value};

use crate::analysis::{
    alpha_fixed_points, beta_fixed_points, mo_crash_threshold_analytic, AnalysisConstants,
    FixedPointReport,
};
use crate::engine::{ImpactFunction, RunResult, Settlement};
use crate::error::{Error, Result};
use crate::experiments::{
    commitment_grid, impact_comparison, linspace, multival_run, simulate, ternary_sweep,
    CommitmentGrid, ExperimentConfig, ImpactReport, TernaryGrid,
};
use crate::metrics::{estimator_mc, Histogram, ValuationDistribution};
use crate::seed::{RNG_ALGORITHM, SEED_MIXER};
use crate::traders::{RandTemplate, ValuationSource};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "VTRACK_OUT";
pub const DEFAULT_OUT_DIR: &str = "vtrack-out";

#[derive(Debug, Parser)]
#[command(name = "vtrack", version, about = "Value-tracking market simulator and analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate one market and write its price, momentum and wealth series.
    Run(CommonArgs),
    /// Sweep initial Val/Mo/Rand compositions over the simplex.
    Sweep(CommonArgs),
    /// Analytic and simulated Mo thresholds over a commitment grid.
    Grid(CommonArgs),
    /// Mo thresholds under the alternative price-impact functions.
    Impact(CommonArgs),
    /// Long run with many gamma-distributed valuations.
    Multival(CommonArgs),
    /// Monte-Carlo check of the tracking-error estimator.
    Estimate(CommonArgs),
    /// Fixed points and the analytic Mo threshold.
    Analyze(CommonArgs),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Run(_) => CommandKind::Run,
            Command::Sweep(_) => CommandKind::Sweep,
            Command::Grid(_) => CommandKind::Grid,
            Command::Impact(_) => CommandKind::Impact,
            Command::Multival(_) => CommandKind::Multival,
            Command::Estimate(_) => CommandKind::Estimate,
            Command::Analyze(_) => CommandKind::Analyze,
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Run(a)
            | Command::Sweep(a)
            | Command::Grid(a)
            | Command::Impact(a)
            | Command::Multival(a)
            | Command::Estimate(a)
            | Command::Analyze(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Run,
    Sweep,
    Grid,
    Impact,
    Multival,
    Estimate,
    Analyze,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Run => "run",
            CommandKind::Sweep => "sweep",
            CommandKind::Grid => "grid",
            CommandKind::Impact => "impact",
            CommandKind::Multival => "multival",
            CommandKind::Estimate => "estimate",
            CommandKind::Analyze => "analyze",
        }
    }

    /// Defaults each command starts from before the file and flags apply.
    pub fn base_config(self) -> ExperimentConfig {
        match self {
            CommandKind::Run | CommandKind::Impact => ExperimentConfig::val_mo_threshold(),
            CommandKind::Grid => ExperimentConfig::commitment_grid(),
            CommandKind::Sweep => ExperimentConfig::ternary(),
            CommandKind::Multival => ExperimentConfig::multival(0.5, 0.0, 0.5),
            CommandKind::Estimate | CommandKind::Analyze => ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 20 subdivisions, 20 replicates.
    Desk,
    /// 99 subdivisions, 100 replicates.
    #[value(alias = "paper")]
    Full,
}

impl Preset {
    pub fn resolution_and_replicates(self) -> (usize, usize) {
        match self {
            Preset::Desk => (20, 20),
            Preset::Full => (99, 100),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Config file of dotted `key = value` lines.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Worker threads (0 or absent: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Initial Mo wealth fraction.
    #[arg(long)]
    pub mo: Option<f64>,
    /// Initial Val wealth fraction.
    #[arg(long)]
    pub val: Option<f64>,
    /// Initial Rand wealth fraction.
    #[arg(long)]
    pub rand: Option<f64>,
    /// Initial momentum.
    #[arg(long, allow_hyphen_values = true)]
    pub m0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Valuations per estimator panel.
    #[arg(long)]
    pub n: Option<usize>,
    /// Estimator Monte-Carlo repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Price at which the estimator is evaluated.
    #[arg(long)]
    pub p: Option<f64>,
    /// Any config key, e.g. `--set market.settlement=current-price`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

// ---------------------------------------------------------------------------
// Config layering

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Default,
    File(usize),
    Flag(String),
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn to_table(config: &ExperimentConfig) -> Result<Table> {
    Table::try_from(config).map_err(|e| Error::Config(e.to_string()))
}

/// Every leaf key any config can carry, including variant-specific ones.
pub fn known_keys() -> BTreeSet<String> {
    let mut exemplars = vec![ExperimentConfig::default()];
    let mut c = ExperimentConfig::default();
    c.market.impact = ImpactFunction::PowerLaw { zeta: 1.0, liquidity: 1.0 };
    c.population.valuation = ValuationSource::Gamma { shape: 8.0, rate: 8.0 };
    c.population.rand_mode = RandTemplate::Refined { critical_fraction: 0.2 };
    exemplars.push(c);
    let mut keys = BTreeSet::new();
    for e in exemplars {
        let mut flat = BTreeMap::new();
        flatten("", &to_table(&e).expect("config serializes"), &mut flat);
        keys.extend(flat.into_keys());
    }
    keys
}

/// Render a config as dotted `key = value` lines.
pub fn serialize_config(config: &ExperimentConfig) -> Result<String> {
    let mut flat = BTreeMap::new();
    flatten("", &to_table(config)?, &mut flat);
    let mut s = String::new();
    for (k, v) in flat {
        writeln!(s, "{k} = {v}").expect("write to string");
    }
    Ok(s)
}

/// Map each dotted key in a TOML document to the line defining it.
fn key_lines(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut header = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[') {
            header = h.trim_end_matches(']').trim().to_string();
        } else if let Some((k, _)) = line.split_once('=') {
            let k: String = k.trim().split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
            let full = if header.is_empty() { k } else { format!("{header}.{k}") };
            out.insert(full, i + 1);
        }
    }
    out
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_document(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
        Error::ConfigLine { line, msg: e.message().trim().to_string() }
    })
}

/// Merge `src` into `dst`. A table whose `kind` changes is replaced whole so
/// fields of the previous variant do not linger.
fn merge(dst: &mut Table, src: &Table) {
    for (k, v) in src {
        match (dst.get_mut(k), v) {
            (Some(Value::Table(d)), Value::Table(s)) if d.get("kind").is_none_or(|dk| s.get("kind").is_none_or(|sk| sk == dk)) => {
                merge(d, s)
            }
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        cur = entry.as_table_mut().expect("table");
    }
    if last == "kind" && cur.get("kind").is_some_and(|k| *k != value) {
        cur.clear();
    }
    cur.insert(last.to_string(), value);
}

fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Open(f64),
    Closed(f64),
    None,
}

/// Per-key ranges checked before deserialization so errors can point at lines.
const RANGES: &[(&str, Bound, Bound)] = &[
    ("market.lambda", Bound::Open(0.0), Bound::None),
    ("market.eta", Bound::Open(0.0), Bound::None),
    ("market.mu", Bound::Open(0.0), Bound::Open(1.0)),
    ("market.horizon", Bound::Closed(1.0), Bound::None),
    ("market.impact.zeta", Bound::Open(0.0), Bound::None),
    ("market.impact.liquidity", Bound::Open(0.0), Bound::None),
    ("commitments.kv_buy", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("commitments.kv_sell", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("commitments.km_buy", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("commitments.km_sell", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("commitments.kr_buy", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("commitments.kr_sell", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("population.val_frac", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("population.mo_frac", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("population.rand_frac", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("population.n_vals", Bound::Closed(1.0), Bound::None),
    ("population.valuation.u", Bound::Open(0.0), Bound::None),
    ("population.valuation.shape", Bound::Open(0.0), Bound::None),
    ("population.valuation.rate", Bound::Open(0.0), Bound::None),
    ("population.rand_mode.critical_fraction", Bound::Closed(0.0), Bound::Closed(1.0)),
    ("population.total_cash", Bound::Open(0.0), Bound::None),
    ("population.initial_price", Bound::Open(0.0), Bound::None),
    ("population.rho", Bound::Open(0.0), Bound::None),
    ("crash.value", Bound::Open(0.0), Bound::None),
    ("replicates", Bound::Closed(1.0), Bound::None),
    ("resolution", Bound::Closed(1.0), Bound::None),
    ("grid.k_min", Bound::Open(0.0), Bound::Closed(1.0)),
    ("grid.k_max", Bound::Open(0.0), Bound::Closed(1.0)),
    ("grid.cells", Bound::Closed(1.0), Bound::None),
    ("estimate.n", Bound::Closed(2.0), Bound::None),
    ("estimate.reps", Bound::Closed(1000.0), Bound::None),
    ("estimate.p", Bound::Open(0.0), Bound::None),
    ("estimate.shape", Bound::Open(0.0), Bound::None),
    ("estimate.rate", Bound::Open(0.0), Bound::None),
];

fn in_range(x: f64, lo: Bound, hi: Bound) -> bool {
    let lo_ok = match lo {
        Bound::Open(b) => x > b,
        Bound::Closed(b) => x >= b,
        Bound::None => true,
    };
    let hi_ok = match hi {
        Bound::Open(b) => x < b,
        Bound::Closed(b) => x <= b,
        Bound::None => true,
    };
    x.is_finite() && lo_ok && hi_ok
}

fn describe(lo: Bound, hi: Bound) -> String {
    let l = match lo {
        Bound::Open(b) => format!("> {b}"),
        Bound::Closed(b) => format!(">= {b}"),
        Bound::None => String::new(),
    };
    let h = match hi {
        Bound::Open(b) => format!("< {b}"),
        Bound::Closed(b) => format!("<= {b}"),
        Bound::None => String::new(),
    };
    [l, h].into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" and ")
}

fn located(source: &Source, msg: String) -> Error {
    match source {
        Source::File(line) => Error::ConfigLine { line: *line, msg },
        Source::Flag(flag) => Error::Config(format!("{flag}: {msg}")),
        Source::Default => Error::Config(msg),
    }
}

/// Resolve the effective configuration for a command.
pub fn resolve_config(kind: CommandKind, args: &CommonArgs) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(path) => Some(
            fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        ),
        None => None,
    };
    parse_config(kind, text.as_deref(), args)
}

/// Layer defaults, preset, config text and flags into a validated config.
pub fn parse_config(kind: CommandKind, text: Option<&str>, args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut base = kind.base_config();
    if let Some(preset) = args.preset {
        (base.resolution, base.replicates) = preset.resolution_and_replicates();
    }
    let mut doc = to_table(&base)?;
    let mut sources: BTreeMap<String, Source> = BTreeMap::new();
    let known = known_keys();

    if let Some(text) = text {
        let file = parse_document(text)?;
        let lines = key_lines(text);
        let mut flat = BTreeMap::new();
        flatten("", &file, &mut flat);
        for key in flat.keys() {
            let line = lines.get(key).copied().unwrap_or(1);
            if !known.contains(key) {
                return Err(Error::ConfigLine { line, msg: format!("unknown key `{key}`") });
            }
            sources.insert(key.clone(), Source::File(line));
        }
        merge(&mut doc, &file);
    }

    let mut flags: Vec<(&str, &str, Value)> = Vec::new();
    let mut num = |key: &'static str, flag: &'static str, v: Option<f64>| {
        if let Some(v) = v {
            flags.push((key, flag, Value::Float(v)));
        }
    };
    num("market.lambda", "--lambda", args.lambda);
    num("market.eta", "--eta", args.eta);
    num("market.mu", "--mu", args.mu);
    num("population.rho", "--rho", args.rho);
    num("population.mo_frac", "--mo", args.mo);
    num("population.val_frac", "--val", args.val);
    num("population.rand_frac", "--rand", args.rand);
    num("population.initial_momentum", "--m0", args.m0);
    num("estimate.p", "--p", args.p);
    let mut int = |key: &'static str, flag: &'static str, v: Option<u64>| {
        if let Some(v) = v {
            let v = i64::try_from(v).map_err(|_| Error::Config(format!("{flag}: value too large")))?;
            flags.push((key, flag, Value::Integer(v)));
        }
        Ok::<(), Error>(())
    };
    int("seed", "--seed", args.seed)?;
    int("market.horizon", "--horizon", args.horizon.map(|v| v as u64))?;
    int("replicates", "--replicates", args.replicates.map(|v| v as u64))?;
    int("resolution", "--resolution", args.resolution.map(|v| v as u64))?;
    int("estimate.n", "--n", args.n.map(|v| v as u64))?;
    int("estimate.reps", "--reps", args.reps.map(|v| v as u64))?;

    let mut owned: Vec<(String, String, Value)> = flags
        .into_iter()
        .map(|(k, f, v)| (k.to_string(), f.to_string(), v))
        .collect();
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let k = k.trim();
        if !known.contains(k) {
            return Err(Error::Config(format!("--set: unknown key `{k}`")));
        }
        owned.push((k.to_string(), format!("--set {k}"), parse_scalar(v.trim())));
    }
    for (key, flag, value) in owned {
        insert_dotted(&mut doc, &key, value);
        sources.insert(key, Source::Flag(flag));
    }

    // A partial composition from flags is completed with the remainder.
    let given = |k: &str| matches!(sources.get(k), Some(Source::Flag(_)));
    let comp = ["population.val_frac", "population.mo_frac", "population.rand_frac"];
    let n_given = comp.iter().filter(|k| given(k)).count();
    if (1..3).contains(&n_given) {
        let pop = doc.get("population").and_then(Value::as_table).cloned().unwrap_or_default();
        let get = |f: &str| pop.get(f).and_then(Value::as_float).unwrap_or(0.0);
        let (v, m, r) = (get("val_frac"), get("mo_frac"), get("rand_frac"));
        let fill = if !given(comp[0]) {
            ("population.val_frac", 1.0 - m - r)
        } else if !given(comp[1]) {
            ("population.mo_frac", 1.0 - v - r)
        } else {
            ("population.rand_frac", 1.0 - v - m)
        };
        insert_dotted(&mut doc, fill.0, Value::Float(fill.1));
        sources.insert(fill.0.to_string(), Source::Flag("--mo/--val/--rand".into()));
    }

    let mut flat = BTreeMap::new();
    flatten("", &doc, &mut flat);
    for &(key, lo, hi) in RANGES {
        let Some(value) = flat.get(key) else { continue };
        let source = sources.get(key).cloned().unwrap_or(Source::Default);
        let x = match value {
            Value::Float(f) => *f,
            Value::Integer(i) => *i as f64,
            other => {
                return Err(located(&source, format!("`{key}` must be numeric, got {other}")));
            }
        };
        if !in_range(x, lo, hi) {
            return Err(located(&source, format!("`{key}` = {x} out of range (must be {})", describe(lo, hi))));
        }
    }

    let config: ExperimentConfig = Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
    config.validate().map_err(|e| match e {
        Error::InvalidInput(m) | Error::Config(m) => Error::Config(m),
        other => other,
    })?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Writers

#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub output: &'a str,
    pub seed: u64,
    pub rng_algorithm: &'static str,
    pub seed_mixer: &'static str,
    pub config: &'a ExperimentConfig,
    pub config_text: String,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_run_series<W: Write>(w: W, run: &RunResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n_traders = run.wealth.len();
    let mut header: Vec<String> =
        ["time", "price", "momentum", "q_p", "q_s", "executed", "cap_hit"].map(String::from).to_vec();
    header.extend((0..n_traders).map(|i| format!("wealth_{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for t in 0..run.prices.len() {
        let mut row = vec![t.to_string(), run.prices[t].to_string(), run.momenta[t].to_string()];
        match t.checked_sub(1).and_then(|i| run.records.get(i)) {
            Some(r) => row.extend([
                r.q_p.to_string(),
                r.q_s.to_string(),
                r.executed.to_string(),
                r.cap_hit.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        row.extend(run.wealth.iter().map(|w| w[t].to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ternary<W: Write>(w: W, grid: &TernaryGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in &grid.points {
        out.serialize(p).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn settlement_name(s: Settlement) -> &'static str {
    match s {
        Settlement::UpdatedPrice => "updated-price",
        Settlement::CurrentPrice => "current-price",
    }
}

pub fn write_grid<W: Write>(w: W, grid: &CommitmentGrid) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k_buy", "k_sell", "theta_analytic", "theta_sim", "settlement"]).map_err(csv_err)?;
    for c in &grid.cells {
        out.write_record([
            c.k_buy.to_string(),
            c.k_sell.to_string(),
            c.theta_analytic.to_string(),
            c.theta_sim.to_string(),
            settlement_name(c.settlement).to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_analysis<W: Write>(w: W, rows: &[(f64, f64, &FixedPointReport, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kV_buy", "kM_sell", "alpha_minus", "exists", "theta"]).map_err(csv_err)?;
    for (kv, km, fp, theta) in rows {
        out.write_record([
            kv.to_string(),
            km.to_string(),
            fp.selected.to_string(),
            fp.exists.to_string(),
            theta.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(w: W, h: &Histogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_center_sd", "relative_frequency"]).map_err(csv_err)?;
    for (c, f) in h.centers.iter().zip(&h.frequencies) {
        out.write_record([c.to_string(), f.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn impact_name(f: ImpactFunction) -> String {
    match f {
        ImpactFunction::RatioPower => "ratio-power".into(),
        ImpactFunction::PowerLaw { zeta, liquidity } => format!("power-law(zeta={zeta},liquidity={liquidity})"),
    }
}

pub fn write_impact<W: Write>(w: W, report: &ImpactReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["impact", "theta", "bracketed"]).map_err(csv_err)?;
    for e in &report.entries {
        out.write_record([impact_name(e.impact), e.threshold.theta.to_string(), e.threshold.bracketed.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SVG

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 50.0;

/// Log-price line with valuation reference lines and the 5-deciblack marker.
pub fn render_series_svg(run: &RunResult) -> Result<String> {
    let prices = &run.prices;
    if prices.is_empty() || prices.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidInput("series must be non-empty and positive".into()));
    }
    let mut valuations: Vec<f64> = run.final_state.traders.iter().filter_map(|t| t.valuation()).collect();
    if valuations.is_empty() {
        valuations.push(run.final_state.reference_value);
    }
    let marker = prices[0] * 2f64.powf(-0.5);
    let logs: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
    let extras = valuations.iter().chain(std::iter::once(&marker)).map(|v| v.ln());
    let (mut lo, mut hi) = logs
        .iter()
        .copied()
        .chain(extras)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let y = |l: f64| MARGIN + (hi - l) / (hi - lo) * plot_h;
    let x = |i: usize| {
        if prices.len() == 1 {
            MARGIN + plot_w / 2.0
        } else {
            MARGIN + i as f64 / (prices.len() - 1) as f64 * plot_w
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="gray"/>"#
    );
    for u in &valuations {
        let yu = y(u.ln());
        let _ = writeln!(
            s,
            r#"<line class="valuation" x1="{MARGIN}" y1="{yu:.3}" x2="{:.3}" y2="{yu:.3}" stroke="black" stroke-dasharray="2,3"/>"#,
            MARGIN + plot_w
        );
    }
    let ym = y(marker.ln());
    let _ = writeln!(
        s,
        r#"<line class="deciblack-marker" x1="{MARGIN}" y1="{ym:.3}" x2="{:.3}" y2="{ym:.3}" stroke="red" stroke-dasharray="6,4"/>"#,
        MARGIN + plot_w
    );
    if prices.len() == 1 {
        let _ = writeln!(s, r#"<circle class="price" cx="{:.3}" cy="{:.3}" r="3" fill="black"/>"#, x(0), y(logs[0]));
    } else {
        let pts: Vec<String> = logs.iter().enumerate().map(|(i, l)| format!("{:.3},{:.3}", x(i), y(*l))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="price" fill="none" stroke="black" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">log price (max {:.3}, min {:.3})</text>"#, MARGIN - 10.0, hi, lo);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">time steps: {}</text>"#, SVG_H - 15.0, prices.len() - 1);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Blue (0) to red (1).
fn heat(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * v).round() as u8;
    let b = (255.0 - 215.0 * v).round() as u8;
    format!("#{r:02x}30{b:02x}")
}

/// One coloured cell per simplex point; Val top, Mo right, Rand left.
pub fn render_ternary_svg(grid: &TernaryGrid) -> Result<String> {
    if grid.points.is_empty() {
        return Err(Error::InvalidInput("ternary grid has no points".into()));
    }
    let side = SVG_W - 2.0 * MARGIN;
    let height = side * 3f64.sqrt() / 2.0;
    let svg_h = height + 2.0 * MARGIN;
    let top = (MARGIN + side / 2.0, MARGIN);
    let right = (MARGIN + side, MARGIN + height);
    let left = (MARGIN, MARGIN + height);
    let pos = |v: f64, m: f64, r: f64| (v * top.0 + m * right.0 + r * left.0, v * top.1 + m * right.1 + r * left.1);
    let radius = side / grid.resolution.max(1) as f64 / 3f64.sqrt();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{svg_h:.1}" viewBox="0 0 {SVG_W} {svg_h:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for p in &grid.points {
        let (cx, cy) = pos(p.val_frac, p.mo_frac, p.rand_frac);
        let pts: Vec<String> = (0..6)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_3 * k as f64 + std::f64::consts::FRAC_PI_6;
                format!("{:.2},{:.2}", cx + radius * a.cos(), cy + radius * a.sin())
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon class="cell" points="{}" fill="{}"><title>val {:.3} mo {:.3} rand {:.3}: crash {:.3}, mean drop {:.3}</title></polygon>"#,
            pts.join(" "),
            heat(p.crash_freq),
            p.val_frac,
            p.mo_frac,
            p.rand_frac,
            p.crash_freq,
            p.mean_drop
        );
    }
    let _ = writeln!(
        s,
        r#"<polygon class="frame" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black"/>"#,
        top.0, top.1, right.0, right.1, left.0, left.1
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">Val</text>"#, top.0, top.1 - 12.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="14">Mo</text>"#, right.0 - 10.0, right.1 + 24.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="14">Rand</text>"#, left.0 - 10.0, left.1 + 24.0);
    s.push_str("</svg>\n");
    Ok(s)
}

// ---------------------------------------------------------------------------
// Commands

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config: ExperimentConfig,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str, config: ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), command, config })
    }

    /// Write `name` and its `name.meta.json` sidecar.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        let sidecar = Sidecar {
            tool: "vtrack",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            output: name,
            seed: self.config.seed,
            rng_algorithm: RNG_ALGORITHM,
            seed_mixer: SEED_MIXER,
            config: &self.config,
            config_text: serialize_config(&self.config)?,
        };
        fs::write(self.dir.join(format!("{name}.meta.json")), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(path)
    }

    pub fn csv(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

fn out_dir(args: &CommonArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn cmd_run(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let run = simulate(config, &[0])?;
    out.csv("run_series.csv", |b| write_run_series(b, &run))?;
    out.write("run_series.svg", render_series_svg(&run)?.as_bytes())?;
    let last = *run.prices.last().expect("non-empty series");
    println!("steps: {}", run.prices.len() - 1);
    println!("final price: {last}");
    println!("max relative drop: {:.6}", run.max_relative_drop());
    match (run.crash_step(&config.crash), run.aborted) {
        (Some(t), _) => println!("crash: yes, at step {t}"),
        (None, true) => println!("crash: yes, price fell below the floor"),
        (None, false) => println!("crash: no"),
    }
    Ok(())
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let grid = ternary_sweep(config, config.resolution, config.replicates)?;
    out.csv("ternary.csv", |b| write_ternary(b, &grid))?;
    out.write("ternary.svg", render_ternary_svg(&grid)?.as_bytes())?;
    let crashes = grid.points.iter().filter(|p| p.crash_freq >= 0.5).count();
    println!(
        "{} points x {} replicates; {} points crash in at least half the replicates",
        grid.points.len(),
        grid.replicates,
        crashes
    );
    Ok(())
}

pub fn cmd_grid(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let ks = linspace(config.grid.k_min, config.grid.k_max, config.grid.cells);
    let grid = commitment_grid(config, &ks, &ks, &[Settlement::CurrentPrice, Settlement::UpdatedPrice])?;
    out.csv("grid.csv", |b| write_grid(b, &grid))?;
    for s in [Settlement::CurrentPrice, Settlement::UpdatedPrice] {
        let gaps: Vec<f64> = grid.cells_for(s).map(|c| c.theta_sim - c.theta_analytic).collect();
        let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{}: {} cells, max(simulated - analytic) = {worst:.4}", settlement_name(s), gaps.len());
    }
    Ok(())
}

pub fn cmd_impact(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let report = impact_comparison(config)?;
    out.csv("impact.csv", |b| write_impact(b, &report))?;
    for e in &report.entries {
        println!("{}: theta = {:.4}{}", impact_name(e.impact), e.threshold.theta, if e.threshold.bracketed { "" } else { " (unbracketed)" });
    }
    Ok(())
}

pub fn cmd_multival(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let res = multival_run(config, config.population.n_vals, config.market.horizon, 0)?;
    out.csv("multival_series.csv", |b| write_run_series(b, &res.run))?;
    out.csv("multival_histogram.csv", |b| write_histogram(b, &res.histogram))?;
    out.write("multival_series.svg", render_series_svg(&res.run)?.as_bytes())?;
    let end = res.run.prices.len() - 1;
    println!("valuations: mean {:.4}", res.mean_valuation());
    println!("max relative drop: {:.4}", res.run.max_relative_drop());
    println!(
        "val wealth variance: {:.6} -> {:.6}",
        res.val_wealth_variance(0),
        res.val_wealth_variance(end)
    );
    Ok(())
}

pub fn cmd_estimate(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let e = config.estimate;
    let report = estimator_mc(
        ValuationDistribution::Gamma { shape: e.shape, rate: e.rate },
        e.p,
        e.n,
        e.reps,
        config.seed,
    )?;
    out.write("estimate.json", &serde_json::to_vec_pretty(&report)?)?;
    println!("tau = {:.6}", report.tau_true);
    println!("predicted std = {:.5}", report.predicted_std);
    println!("empirical std = {:.5}", report.empirical_std);
    println!("bias = {:.3e} (se {:.1e})", report.bias, report.bias_se);
    println!("skewness = {:.4}", report.skewness);
    Ok(())
}

pub fn cmd_analyze(config: &ExperimentConfig, out: &Output) -> Result<()> {
    let c = AnalysisConstants::from_rho(&config.market, &config.commitments, config.population.rho)?;
    let alpha = alpha_fixed_points(&c)?;
    let beta = beta_fixed_points(&c)?;
    let theta = mo_crash_threshold_analytic(&c, config.population.rho)?;
    println!("alpha fixed points: {:?}", alpha.roots.iter().map(|r| r.value).collect::<Vec<_>>());
    println!("alpha_- = {} (exists: {})", alpha.selected, alpha.exists);
    println!("beta fixed points: {:?}", beta.roots.iter().map(|r| r.value).collect::<Vec<_>>());
    println!("beta_+ = {} (exists: {})", beta.selected, beta.exists);
    println!("theta = {theta:.5}");
    let k = config.commitments;
    out.csv("analysis.csv", |b| write_analysis(b, &[(k.kv_buy, k.km_sell, &alpha, theta)]))?;
    out.write("analysis.json", &serde_json::to_vec_pretty(&serde_json::json!({
        "alpha": alpha,
        "beta": beta,
        "theta": theta,
    }))?)?;
    Ok(())
}

/// Execute a parsed command.
pub fn execute(command: &Command) -> Result<()> {
    let kind = command.kind();
    let args = command.args();
    let config = resolve_config(kind, args)?;
    let out = Output::new(&out_dir(args), kind.name(), config)?;
    let go = || match kind {
        CommandKind::Run => cmd_run(&config, &out),
        CommandKind::Sweep => cmd_sweep(&config, &out),
        CommandKind::Grid => cmd_grid(&config, &out),
        CommandKind::Impact => cmd_impact(&config, &out),
        CommandKind::Multival => cmd_multival(&config, &out),
        CommandKind::Estimate => cmd_estimate(&config, &out),
        CommandKind::Analyze => cmd_analyze(&config, &out),
    };
    match args.workers {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("--workers: {e}")))?
            .install(go),
        _ => go(),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
