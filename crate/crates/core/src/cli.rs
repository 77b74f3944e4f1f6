//! Command-line front end.
//!
//! Every setting can come from a flat `key = value` config file (`--config`)
//! or from the flag of the same name; flags win. The fully resolved settings
//! are embedded into every artifact written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use chrono::{NaiveDate, NaiveTime};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, OutputFormat, Scenario, Tabular};
use crate::data::{self, Consumption, PriceSeries, PriceUnit, TimeRange};
use crate::error::Error;
use crate::milp::{self, ModelFormat};
use crate::model::{simulate, Discretization, Instance, LossFunction, Solution, Violation};
use crate::oracle::{self, DynamicsMode};
use crate::rbdp::{self, ErrorBudget};

/// Exit code for infeasible instances and failed checks.
pub const EXIT_INFEASIBLE: i32 = 1;
/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "storctl",
    version,
    about = "Cost-optimal storage control by rounding-based dynamic programming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance and write the control trajectory.
    Solve(Common),
    /// Compare the dynamic program against exhaustive enumeration (small horizons only).
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Enumeration budget (complete control sequences).
        #[arg(long)]
        max_nodes: Option<String>,
        /// `exact` checks the cost sandwich, `rounded` checks exactness on the rounded system.
        #[arg(long)]
        dynamics: Option<String>,
    },
    /// Solve for a range of capacities.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `from:to:step`, or a comma separated list.
        #[arg(long)]
        capacities: Option<String>,
    },
    /// Optimize the days of the range one by one and jointly.
    JointCompare {
        #[command(flatten)]
        common: Common,
        /// Fill level fixed between separately optimized days (kWh).
        #[arg(long)]
        boundary: Option<String>,
    },
    /// Write the LP or MILP model for an external solver.
    ExportMilp {
        #[command(flatten)]
        common: Common,
        /// Drop integrality of the purchases.
        #[arg(long)]
        relaxed: bool,
        #[arg(long)]
        instance_id: Option<String>,
    },
    /// Measure solve time against horizon length.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma separated horizon lengths in hours.
        #[arg(long)]
        horizons: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prices: Option<String>,
    /// eur_per_mwh | eur_per_kwh | eur_per_100kwh
    #[arg(long)]
    price_unit: Option<String>,
    #[arg(long, conflicts_with = "consumption_csv")]
    consumption_const: Option<String>,
    #[arg(long)]
    consumption_csv: Option<String>,
    /// First day (YYYY-MM-DD).
    #[arg(long)]
    from: Option<String>,
    /// Last day, inclusive (YYYY-MM-DD).
    #[arg(long)]
    to: Option<String>,
    /// Horizon in hours from the start of `--from`; overrides `--to`.
    #[arg(long)]
    hours: Option<String>,
    /// Upper capacity bound C (kWh).
    #[arg(long)]
    capacity: Option<String>,
    /// Lower capacity bound c (kWh).
    #[arg(long)]
    cap_min: Option<String>,
    #[arg(long)]
    buy_min: Option<String>,
    /// Defaults to peak consumption plus the charge limit, rounded up to h_x.
    #[arg(long)]
    buy_max: Option<String>,
    #[arg(long)]
    eta_in: Option<String>,
    #[arg(long)]
    eta_out: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// Per-step charge limit; defaults to half the capacity.
    #[arg(long)]
    y_max: Option<String>,
    #[arg(long)]
    hx: Option<String>,
    #[arg(long)]
    hv: Option<String>,
    #[arg(long)]
    v_init: Option<String>,
    #[arg(long)]
    v_final: Option<String>,
    /// Shrink C by the rounding budget so exact fill levels stay below it.
    #[arg(long)]
    safe_capacity: bool,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    format: Option<String>,
}

const KNOWN_KEYS: &[&str] = &[
    "prices",
    "price-unit",
    "consumption-const",
    "consumption-csv",
    "from",
    "to",
    "hours",
    "capacity",
    "cap-min",
    "buy-min",
    "buy-max",
    "eta-in",
    "eta-out",
    "beta",
    "y-max",
    "hx",
    "hv",
    "v-init",
    "v-final",
    "safe-capacity",
    "out",
    "format",
    "max-nodes",
    "dynamics",
    "capacities",
    "boundary",
    "relaxed",
    "instance-id",
    "horizons",
];

/// Parses a flat `key = value` config file. `#` starts a comment line.
pub fn parse_config_text(text: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let key = k.trim().trim_start_matches("--").to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key `{key}`", n + 1);
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl Common {
    fn settings(
        &self,
        extra: &[(&str, Option<&String>)],
    ) -> anyhow::Result<BTreeMap<String, String>> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let flags: [(&str, &Option<String>); 20] = [
            ("prices", &self.prices),
            ("price-unit", &self.price_unit),
            ("consumption-const", &self.consumption_const),
            ("consumption-csv", &self.consumption_csv),
            ("from", &self.from),
            ("to", &self.to),
            ("hours", &self.hours),
            ("capacity", &self.capacity),
            ("cap-min", &self.cap_min),
            ("buy-min", &self.buy_min),
            ("buy-max", &self.buy_max),
            ("eta-in", &self.eta_in),
            ("eta-out", &self.eta_out),
            ("beta", &self.beta),
            ("y-max", &self.y_max),
            ("hx", &self.hx),
            ("hv", &self.hv),
            ("v-init", &self.v_init),
            ("v-final", &self.v_final),
            ("out", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        if let Some(f) = &self.format {
            map.insert("format".into(), f.clone());
        }
        if self.safe_capacity {
            map.insert("safe-capacity".into(), "true".into());
        }
        for (k, v) in extra {
            if let Some(v) = v {
                map.insert(k.to_string(), (*v).clone());
            }
        }
        // One consumption source: a flag beats the config file's other kind.
        if self.consumption_csv.is_some() {
            map.remove("consumption-const");
        } else if self.consumption_const.is_some() {
            map.remove("consumption-csv");
        }
        Ok(map)
    }
}

/// Settings after merging, with every default filled in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub prices: Option<PathBuf>,
    pub price_unit: PriceUnit,
    pub consumption: Consumption,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub hours: Option<usize>,
    pub capacity: f64,
    pub scenario: Scenario,
    pub out: PathBuf,
    pub format: Option<String>,
    extra: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> anyhow::Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| anyhow!("invalid value `{v}` for {key}"))
        })
        .transpose()
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str) -> anyhow::Result<bool> {
    match map.get(key).map(String::as_str) {
        None | Some("false") | Some("0") | Some("no") => Ok(false),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some(other) => bail!("invalid value `{other}` for {key}"),
    }
}

fn parse_day(map: &BTreeMap<String, String>, key: &str) -> anyhow::Result<Option<NaiveDate>> {
    map.get(key)
        .map(|v| {
            NaiveDate::parse_from_str(v, "%Y-%m-%d")
                .map_err(|_| anyhow!("invalid date `{v}` for {key} (YYYY-MM-DD)"))
        })
        .transpose()
}

impl RunConfig {
    pub fn resolve(map: &BTreeMap<String, String>) -> anyhow::Result<Self> {
        let defaults = Scenario::default();
        let consumption = match (
            map.get("consumption-csv"),
            get::<f64>(map, "consumption-const")?,
        ) {
            (Some(path), _) => Consumption::Csv(PathBuf::from(path)),
            (None, Some(z)) => Consumption::Constant(z),
            (None, None) => Consumption::Constant(200.0),
        };
        let beta = get(map, "beta")?.unwrap_or(0.1);
        let scenario = Scenario {
            cap_min: get(map, "cap-min")?.unwrap_or(defaults.cap_min),
            buy_min: get(map, "buy-min")?.unwrap_or(defaults.buy_min),
            buy_max: match map.get("buy-max").map(String::as_str) {
                None | Some("auto") => None,
                Some(_) => get(map, "buy-max")?,
            },
            eta_in: get(map, "eta-in")?.unwrap_or(defaults.eta_in),
            eta_out: get(map, "eta-out")?.unwrap_or(defaults.eta_out),
            loss: LossFunction::linear(beta).map_err(|e| anyhow!(e))?,
            charge_max: match map.get("y-max").map(String::as_str) {
                None | Some("half-capacity") => None,
                Some(_) => get(map, "y-max")?,
            },
            disc: Discretization {
                h_x: get(map, "hx")?.unwrap_or(defaults.disc.h_x),
                h_v: get(map, "hv")?.unwrap_or(defaults.disc.h_v),
            },
            v_init: get(map, "v-init")?.unwrap_or(defaults.v_init),
            v_final: get(map, "v-final")?.unwrap_or(defaults.v_final),
            safe_capacity: parse_bool(map, "safe-capacity")?,
        };
        let cfg = RunConfig {
            prices: map.get("prices").map(PathBuf::from),
            price_unit: get(map, "price-unit")?.unwrap_or_default(),
            consumption,
            from: parse_day(map, "from")?,
            to: parse_day(map, "to")?,
            hours: get(map, "hours")?,
            capacity: get(map, "capacity")?.unwrap_or(1000.0),
            scenario,
            out: PathBuf::from(map.get("out").map_or("out", String::as_str)),
            format: map.get("format").cloned(),
            extra: map.clone(),
            echo: BTreeMap::new(),
        };
        Ok(cfg.with_echo())
    }

    fn with_echo(mut self) -> Self {
        let s = &self.scenario;
        let mut e = self.extra.clone();
        let mut put = |k: &str, v: String| {
            e.insert(k.to_string(), v);
        };
        put("price-unit", self.price_unit.to_string());
        match &self.consumption {
            Consumption::Constant(z) => put("consumption-const", z.to_string()),
            Consumption::Csv(p) => put("consumption-csv", p.display().to_string()),
            Consumption::Profile(_) => {}
        }
        put("capacity", self.capacity.to_string());
        put("cap-min", s.cap_min.to_string());
        put("buy-min", s.buy_min.to_string());
        put(
            "buy-max",
            s.buy_max.map_or("auto".into(), |u| u.to_string()),
        );
        put("eta-in", s.eta_in.to_string());
        put("eta-out", s.eta_out.to_string());
        let LossFunction::Linear { beta } = s.loss;
        put("beta", beta.to_string());
        put(
            "y-max",
            s.charge_max
                .map_or("half-capacity".into(), |y| y.to_string()),
        );
        put("hx", s.disc.h_x.to_string());
        put("hv", s.disc.h_v.to_string());
        put("v-init", s.v_init.to_string());
        put("v-final", s.v_final.to_string());
        put("safe-capacity", s.safe_capacity.to_string());
        put("out", self.out.display().to_string());
        self.echo = e;
        self
    }

    /// Every resolved setting, for embedding into artifacts.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }

    fn extra<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>> {
        get(&self.extra, key)
    }

    fn range(&self) -> anyhow::Result<TimeRange> {
        let from = self.from.ok_or_else(|| anyhow!("--from is required"))?;
        if let Some(h) = self.hours {
            if h == 0 {
                bail!("--hours must be positive");
            }
            return Ok(TimeRange::hours(from.and_time(NaiveTime::MIN), h));
        }
        Ok(TimeRange::days(from, self.to.unwrap_or(from))?)
    }

    fn load_prices(&self) -> anyhow::Result<PriceSeries> {
        let path = self
            .prices
            .as_ref()
            .ok_or_else(|| anyhow!("--prices is required"))?;
        Ok(data::parse_price_csv(path, self.price_unit)?)
    }

    fn instance(&self, series: &PriceSeries) -> anyhow::Result<Instance> {
        Ok(self
            .scenario
            .instance(series, &self.range()?, &self.consumption, self.capacity)?)
    }

    fn output_format(&self, default: OutputFormat) -> anyhow::Result<OutputFormat> {
        match &self.format {
            None => Ok(default),
            Some(f) => Ok(f.parse()?),
        }
    }

    fn output_path(&self, stem: &str, format: OutputFormat) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        let ext = match format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        };
        Ok(self.out.join(format!("{stem}.{ext}")))
    }
}

/// Solution plus exact-replay audit, as written by `solve`.
#[derive(Debug, Serialize)]
pub struct SolveReport {
    #[serde(flatten)]
    pub solution: Solution,
    pub baseline: f64,
    pub error_budget: ErrorBudget,
    pub exact_levels: Vec<f64>,
    pub exact_feasible: bool,
    pub violations: Vec<Violation>,
}

impl Tabular for SolveReport {
    fn header(&self) -> Vec<&'static str> {
        let mut h = self.solution.header();
        h.push("V_exact");
        h
    }

    fn records(&self) -> Vec<Vec<String>> {
        let mut rows = self.solution.records();
        for (row, v) in rows.iter_mut().zip(&self.exact_levels) {
            row.push(v.to_string());
        }
        rows
    }
}

#[derive(Debug, Serialize)]
struct RoundedCheck {
    rbdp_final_costs: Vec<(f64, f64)>,
    oracle_final_costs: Vec<(f64, f64)>,
    matches: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CheckFailed(String);

impl Tabular for oracle::CrossCheckReport {
    fn header(&self) -> Vec<&'static str> {
        vec!["oracle_cost", "rbdp_cost", "cost_gap", "passed"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.oracle_cost.to_string(),
            self.rbdp_cost.to_string(),
            self.cost_gap.to_string(),
            self.passed().to_string(),
        ]]
    }
}

impl Tabular for RoundedCheck {
    fn header(&self) -> Vec<&'static str> {
        vec!["level", "rbdp_cost", "oracle_cost"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rbdp_final_costs
            .iter()
            .zip(&self.oracle_final_costs)
            .map(|((l, a), (_, b))| vec![l.to_string(), a.to_string(), b.to_string()])
            .collect()
    }
}

fn cmd_solve(cfg: &RunConfig) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let inst = cfg.instance(&series)?;
    let solution = cfg.scenario.solve(&inst)?;
    let sim = simulate(&inst, &solution.x)?;
    let report = SolveReport {
        baseline: analysis::baseline_cost(&inst),
        error_budget: rbdp::error_budget(&inst)?,
        exact_levels: sim.trajectory.clone(),
        exact_feasible: sim.feasible(),
        violations: sim.violations,
        solution,
    };
    let format = cfg.output_format(OutputFormat::Json)?;
    let path = cfg.output_path("solution", format)?;
    analysis::emit_results(&report, &path, format, cfg.echo())?;
    println!(
        "m={} cost={:.2} EUR baseline={:.2} EUR bound_gap={:.2} EUR exact_feasible={} -> {}",
        inst.horizon(),
        report.solution.cost,
        report.baseline,
        report.solution.bound_gap,
        report.exact_feasible,
        path.display()
    );
    Ok(())
}

fn cmd_oracle_check(cfg: &RunConfig) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let inst = cfg.instance(&series)?;
    let max_nodes = cfg
        .extra::<u64>("max-nodes")?
        .unwrap_or(oracle::OracleConfig::default().max_nodes);
    let mode = match cfg.extra.get("dynamics").map(String::as_str) {
        None | Some("exact") => DynamicsMode::Exact,
        Some("rounded") => DynamicsMode::Rounded,
        Some(other) => bail!("invalid value `{other}` for dynamics (exact or rounded)"),
    };
    let format = cfg.output_format(OutputFormat::Json)?;
    let path = cfg.output_path("oracle_check", format)?;
    match mode {
        DynamicsMode::Exact => {
            let report = oracle::cross_check(&inst, max_nodes)?;
            analysis::emit_results(&report, &path, format, cfg.echo())?;
            println!(
                "oracle={:.4} rbdp={:.4} gap={:.4} passed={} -> {}",
                report.oracle_cost,
                report.rbdp_cost,
                report.cost_gap,
                report.passed(),
                path.display()
            );
            if !report.passed() {
                return Err(CheckFailed(report.counterexample(&inst)).into());
            }
        }
        DynamicsMode::Rounded => {
            let (_, tables) = rbdp::solve(&inst)?;
            let rbdp_final_costs = tables.final_costs();
            let oracle_final_costs = oracle::level_costs(&inst, max_nodes)?;
            let matches = rbdp_final_costs.len() == oracle_final_costs.len()
                && rbdp_final_costs
                    .iter()
                    .zip(&oracle_final_costs)
                    .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-9 * a.1.abs().max(1.0));
            let check = RoundedCheck {
                rbdp_final_costs,
                oracle_final_costs,
                matches,
            };
            analysis::emit_results(&check, &path, format, cfg.echo())?;
            println!(
                "rounded-system levels match={matches} -> {}",
                path.display()
            );
            if !matches {
                return Err(CheckFailed(
                    "rounded-system costs differ between RBDP and enumeration".into(),
                )
                .into());
            }
        }
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let caps = analysis::parse_capacities(
        cfg.extra
            .get("capacities")
            .map_or("0:5000:10", String::as_str),
    )?;
    let result = analysis::sweep_capacity(
        &series,
        &cfg.range()?,
        &cfg.consumption,
        &cfg.scenario,
        &caps,
    )?;
    let format = cfg.output_format(OutputFormat::Csv)?;
    let path = cfg.output_path("sweep", format)?;
    analysis::emit_results(&result, &path, format, cfg.echo())?;
    let failed = result.rows.iter().filter(|r| r.cost.is_none()).count();
    println!(
        "{} capacities, baseline={:.2} EUR, {failed} unsolved -> {}",
        result.rows.len(),
        result.baseline,
        path.display()
    );
    Ok(())
}

fn cmd_joint(cfg: &RunConfig) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let from = cfg.from.ok_or_else(|| anyhow!("--from is required"))?;
    let to = cfg.to.unwrap_or(from);
    if to < from {
        bail!("--to precedes --from");
    }
    let days: Vec<NaiveDate> = from.iter_days().take_while(|d| *d <= to).collect();
    let boundary = cfg.extra::<f64>("boundary")?.unwrap_or(100.0);
    let cmp = analysis::compare_joint_vs_separate(
        &series,
        &days,
        &cfg.consumption,
        &cfg.scenario,
        cfg.capacity,
        boundary,
    )?;
    let format = cfg.output_format(OutputFormat::Json)?;
    let path = cfg.output_path("joint", format)?;
    analysis::emit_results(&cmp, &path, format, cfg.echo())?;
    println!(
        "separate={:.2} EUR joint={:.2} EUR dominance={} -> {}",
        cmp.separate_total,
        cmp.joint_cost,
        cmp.dominance_holds,
        path.display()
    );
    Ok(())
}

fn cmd_export(cfg: &RunConfig, relaxed: bool) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let inst = cfg.instance(&series)?;
    let doc = milp::build_model(&inst, relaxed)?;
    let format: ModelFormat = cfg.format.as_deref().unwrap_or("lp").parse()?;
    let id = match cfg.extra.get("instance-id") {
        Some(id) => id.clone(),
        None => {
            let range = cfg.range()?;
            let kind = if relaxed { "lp" } else { "milp" };
            format!(
                "{}_m{}_C{}_{kind}",
                range.start.date(),
                range.hours,
                cfg.capacity
            )
        }
    };
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let path = cfg.out.join(format!("{id}.{}", format.extension()));
    let (marker, body) = match format {
        ModelFormat::Lp => ("\\", doc.to_lp()),
        ModelFormat::Mps => ("*", doc.to_mps()),
    };
    let mut text: String = cfg
        .echo()
        .iter()
        .map(|(k, v)| format!("{marker} {k}={v}\n"))
        .collect();
    text.push_str(&body);
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!(
        "{} variables, {} rows -> {}",
        doc.variables.len(),
        doc.rows.len(),
        path.display()
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig) -> anyhow::Result<()> {
    let series = cfg.load_prices()?;
    let from = cfg.from.ok_or_else(|| anyhow!("--from is required"))?;
    let horizons: Vec<usize> = cfg
        .extra
        .get("horizons")
        .map_or("168,336,672,1344", String::as_str)
        .split(',')
        .map(|h| {
            h.trim()
                .parse()
                .map_err(|_| anyhow!("invalid horizon `{h}`"))
        })
        .collect::<anyhow::Result<_>>()?;
    let result = analysis::runtime_bench(
        &series,
        from,
        &cfg.consumption,
        &cfg.scenario,
        cfg.capacity,
        &horizons,
    )?;
    let format = cfg.output_format(OutputFormat::Json)?;
    let path = cfg.output_path("bench", format)?;
    analysis::emit_results(&result, &path, format, cfg.echo())?;
    for row in &result.rows {
        println!("m={:<6} {:.4} s", row.steps, row.seconds);
    }
    println!(
        "slope={:.3e} s/step r2={:.4} -> {}",
        result.slope,
        result.r_squared,
        path.display()
    );
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("STORCTL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_INFEASIBLE;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_infeasibility() => EXIT_INFEASIBLE,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let none = None;
    match &cli.command {
        Command::Solve(common) => cmd_solve(&RunConfig::resolve(&common.settings(&[])?)?),
        Command::OracleCheck {
            common,
            max_nodes,
            dynamics,
        } => cmd_oracle_check(&RunConfig::resolve(&common.settings(&[
            ("max-nodes", max_nodes.as_ref()),
            ("dynamics", dynamics.as_ref()),
        ])?)?),
        Command::Sweep { common, capacities } => cmd_sweep(&RunConfig::resolve(
            &common.settings(&[("capacities", capacities.as_ref())])?,
        )?),
        Command::JointCompare { common, boundary } => cmd_joint(&RunConfig::resolve(
            &common.settings(&[("boundary", boundary.as_ref())])?,
        )?),
        Command::ExportMilp {
            common,
            relaxed,
            instance_id,
        } => {
            let flag = relaxed.then(|| "true".to_string());
            let map = common.settings(&[
                ("instance-id", instance_id.as_ref()),
                ("relaxed", flag.as_ref().or(none)),
            ])?;
            let relaxed = parse_bool(&map, "relaxed")?;
            cmd_export(&RunConfig::resolve(&map)?, relaxed)
        }
        Command::Bench { common, horizons } => cmd_bench(&RunConfig::resolve(
            &common.settings(&[("horizons", horizons.as_ref())])?,
        )?),
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Reads back a CSV artifact, skipping the embedded config comments.
pub fn read_csv_artifact(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
