//! Experiment drivers: baseline cost, capacity sweeps, joint versus
//! day-by-day optimization, runtime scaling, and result serialization.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use chrono::{Duration, NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::data::{make_instance, Consumption, PriceSeries, TimeRange};
use crate::error::{Error, Result};
use crate::model::{
    ceil_h, cost_of, Discretization, Instance, LossFunction, Solution, StorageSpec,
};
use crate::rbdp;

/// Purchasing exactly the consumption every step, storage unused.
pub fn baseline_cost(inst: &Instance) -> f64 {
    cost_of(inst.prices(), inst.consumption()).expect("instance series have equal length")
}

/// Storage parameters with the capacity left open, plus level and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub cap_min: f64,
    pub buy_min: f64,
    /// `None`: smallest multiple of `h_x` covering peak consumption plus the charge limit.
    pub buy_max: Option<f64>,
    pub eta_in: f64,
    pub eta_out: f64,
    pub loss: LossFunction,
    /// `None`: half the capacity.
    pub charge_max: Option<f64>,
    pub disc: Discretization,
    pub v_init: f64,
    pub v_final: f64,
    pub safe_capacity: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            cap_min: 0.0,
            buy_min: 0.0,
            buy_max: None,
            eta_in: 0.9,
            eta_out: 0.95,
            loss: LossFunction::Linear { beta: 0.1 },
            charge_max: None,
            disc: Discretization::default(),
            v_init: 100.0,
            v_final: 100.0,
            safe_capacity: false,
        }
    }
}

impl Scenario {
    pub fn spec(&self, capacity: f64, peak_consumption: f64) -> Result<StorageSpec> {
        let charge_max = self.charge_max.unwrap_or(capacity / 2.0);
        let buy_max = match self.buy_max {
            Some(u) => u,
            None => ceil_h(peak_consumption + charge_max, self.disc.h_x)?.max(self.buy_min),
        };
        Ok(StorageSpec {
            cap_min: self.cap_min,
            cap_max: capacity,
            buy_min: self.buy_min,
            buy_max,
            eta_in: self.eta_in,
            eta_out: self.eta_out,
            loss: self.loss,
            charge_max,
        })
    }

    pub fn instance(
        &self,
        series: &PriceSeries,
        range: &TimeRange,
        consumption: &Consumption,
        capacity: f64,
    ) -> Result<Instance> {
        self.instance_with_levels(
            series,
            range,
            consumption,
            capacity,
            self.v_init,
            self.v_final,
        )
    }

    pub fn instance_with_levels(
        &self,
        series: &PriceSeries,
        range: &TimeRange,
        consumption: &Consumption,
        capacity: f64,
        v_init: f64,
        v_final: f64,
    ) -> Result<Instance> {
        let spec = self.spec(capacity, consumption.peak(range.hours)?)?;
        make_instance(series, range, consumption, spec, v_init, v_final, self.disc)
    }

    /// RBDP, on the margin-shrunken instance when `safe_capacity` is set.
    pub fn solve(&self, inst: &Instance) -> Result<Solution> {
        if self.safe_capacity {
            let shrunk = rbdp::apply_capacity_margin(inst)?;
            Ok(rbdp::solve(&shrunk)?.0)
        } else {
            Ok(rbdp::solve(inst)?.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub capacity: f64,
    pub cost: Option<f64>,
    pub savings: Option<f64>,
    /// Set when this capacity could not be solved.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub baseline: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Solved costs never increase with capacity.
    pub fn is_monotone(&self) -> bool {
        let costs: Vec<f64> = self.rows.iter().filter_map(|r| r.cost).collect();
        costs
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }
}

/// Parses `a:b:step` (inclusive) or a comma separated list.
pub fn parse_capacities(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("bad capacity list `{spec}`"));
    let caps: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| f64::from_str(p.trim()).map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [from, to, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || to < from {
            return Err(bad());
        }
        let n = ((to - from) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| from + i as f64 * step).collect()
    } else {
        spec.split(',')
            .map(|p| f64::from_str(p.trim()).map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if caps.is_empty() || caps.windows(2).any(|w| w[1] <= w[0]) || caps[0] < 0.0 {
        return Err(Error::invalid(format!(
            "capacities must be non-negative and strictly increasing: `{spec}`"
        )));
    }
    Ok(caps)
}

/// One RBDP solve per capacity. Boundary levels are clamped to the capacity,
/// so a zero-capacity storage reproduces the baseline.
pub fn sweep_capacity(
    series: &PriceSeries,
    range: &TimeRange,
    consumption: &Consumption,
    scenario: &Scenario,
    capacities: &[f64],
) -> Result<SweepResult> {
    if capacities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("capacities must be strictly increasing"));
    }
    let idx = series.locate(range)?;
    let demand = consumption.resolve(range.hours)?;
    let baseline = cost_of(&series.prices()[idx], &demand)?;
    let profile = Consumption::Profile(demand);
    let rows = capacities
        .par_iter()
        .map(|&capacity| {
            let solved = scenario
                .instance_with_levels(
                    series,
                    range,
                    &profile,
                    capacity,
                    scenario.v_init.min(capacity),
                    scenario.v_final.min(capacity),
                )
                .and_then(|inst| scenario.solve(&inst));
            match solved {
                Ok(sol) => {
                    log::info!("capacity {capacity} kWh: {:.2} EUR", sol.cost);
                    SweepRow {
                        capacity,
                        cost: Some(sol.cost),
                        savings: Some(baseline - sol.cost),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("capacity {capacity} kWh: {e}");
                    SweepRow {
                        capacity,
                        cost: None,
                        savings: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepResult { baseline, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointComparison {
    pub days: Vec<NaiveDate>,
    pub separate_costs: Vec<f64>,
    pub separate_total: f64,
    pub joint_cost: f64,
    /// `joint_cost <= separate_total`.
    pub dominance_holds: bool,
}

/// Solves each day with fixed boundary levels, then all days as one horizon
/// with only the outer boundary fixed.
pub fn compare_joint_vs_separate(
    series: &PriceSeries,
    days: &[NaiveDate],
    consumption: &Consumption,
    scenario: &Scenario,
    capacity: f64,
    boundary: f64,
) -> Result<JointComparison> {
    let (&first, &last) = days
        .first()
        .zip(days.last())
        .ok_or_else(|| Error::invalid("need at least one day"))?;
    if days.windows(2).any(|w| w[1] - w[0] != Duration::days(1)) {
        return Err(Error::invalid("days must be contiguous"));
    }
    let joint_range = TimeRange::days(first, last)?;
    let demand = consumption.resolve(joint_range.hours)?;
    let mut separate_costs = Vec::with_capacity(days.len());
    for (i, day) in days.iter().enumerate() {
        let range = TimeRange::days(*day, *day)?;
        let slice = Consumption::Profile(demand[i * 24..(i + 1) * 24].to_vec());
        let inst =
            scenario.instance_with_levels(series, &range, &slice, capacity, boundary, boundary)?;
        let sol = scenario.solve(&inst).map_err(|e| match e {
            Error::Infeasible { .. } => Error::Data(format!("day {day}: {e}")),
            other => other,
        })?;
        separate_costs.push(sol.cost);
    }
    let profile = Consumption::Profile(demand);
    let inst = scenario.instance_with_levels(
        series,
        &joint_range,
        &profile,
        capacity,
        boundary,
        boundary,
    )?;
    let joint_cost = scenario.solve(&inst)?.cost;
    let separate_total: f64 = separate_costs.iter().sum();
    let dominance_holds = joint_cost <= separate_total;
    if !dominance_holds {
        log::warn!("joint cost {joint_cost} exceeds separate total {separate_total}");
    }
    Ok(JointComparison {
        days: days.to_vec(),
        separate_costs,
        separate_total,
        joint_cost,
        dominance_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub steps: usize,
    pub seconds: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub capacity: f64,
    pub rows: Vec<BenchRow>,
    /// Least-squares fit `seconds = slope * steps + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `seconds[i + 1] / seconds[i]` for consecutive horizons.
    pub ratios: Vec<f64>,
}

pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, intercept, r2)
}

/// Best-of-3 wall time of an RBDP solve for each horizon, counted in hours
/// from the start of `from`.
pub fn runtime_bench(
    series: &PriceSeries,
    from: NaiveDate,
    consumption: &Consumption,
    scenario: &Scenario,
    capacity: f64,
    horizons: &[usize],
) -> Result<BenchResult> {
    let mut rows = Vec::with_capacity(horizons.len());
    for &steps in horizons {
        let range = TimeRange::hours(from.and_time(NaiveTime::MIN), steps);
        let inst = scenario.instance(series, &range, consumption, capacity)?;
        let mut best = f64::INFINITY;
        let mut cost = f64::NAN;
        for _ in 0..3 {
            let started = Instant::now();
            let sol = scenario.solve(&inst)?;
            best = best.min(started.elapsed().as_secs_f64());
            cost = sol.cost;
        }
        log::info!("m={steps}: {best:.4} s");
        rows.push(BenchRow {
            steps,
            seconds: best,
            cost,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    let ratios = ys.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(BenchResult {
        capacity,
        rows,
        slope,
        intercept,
        r_squared,
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::invalid(format!(
                "unknown output format `{other}` (expected csv or json)"
            ))),
        }
    }
}

/// Results that can be written as a flat table.
pub trait Tabular: Serialize {
    fn header(&self) -> Vec<&'static str>;
    fn records(&self) -> Vec<Vec<String>>;
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Tabular for SweepResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["capacity", "cost", "savings"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.capacity.to_string(), opt(r.cost), opt(r.savings)])
            .collect()
    }
}

impl Tabular for Solution {
    fn header(&self) -> Vec<&'static str> {
        vec!["t", "x", "y", "zeta", "V"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        (0..self.x.len())
            .map(|t| {
                vec![
                    (t + 1).to_string(),
                    self.x[t].to_string(),
                    self.y[t].to_string(),
                    self.zeta[t].to_string(),
                    self.levels[t].to_string(),
                ]
            })
            .collect()
    }
}

impl Tabular for JointComparison {
    fn header(&self) -> Vec<&'static str> {
        vec!["run", "cost"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .days
            .iter()
            .zip(&self.separate_costs)
            .map(|(d, c)| vec![d.to_string(), c.to_string()])
            .collect();
        rows.push(vec![
            "separate_total".into(),
            self.separate_total.to_string(),
        ]);
        rows.push(vec!["joint".into(), self.joint_cost.to_string()]);
        rows
    }
}

impl Tabular for BenchResult {
    fn header(&self) -> Vec<&'static str> {
        vec!["steps", "seconds", "cost"]
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.steps.to_string(),
                    r.seconds.to_string(),
                    r.cost.to_string(),
                ]
            })
            .collect()
    }
}

/// Writes `result` to `path`. `config` is embedded: as a `config` object in
/// JSON, as leading `# key=value` comment lines in CSV.
pub fn emit_results<T: Tabular>(
    result: &T,
    path: &Path,
    format: OutputFormat,
    config: &BTreeMap<String, String>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    match format {
        OutputFormat::Json => {
            let mut value = serde_json::to_value(result)?;
            if let Value::Object(map) = &mut value {
                map.insert("config".into(), serde_json::to_value(config)?);
            }
            let mut text = serde_json::to_string_pretty(&value)?;
            text.push('\n');
            std::fs::write(path, text).map_err(io)
        }
        OutputFormat::Csv => {
            let mut text = String::new();
            for (k, v) in config {
                text.push_str(&format!("# {k}={v}\n"));
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(result.header())?;
            for rec in result.records() {
                w.write_record(rec)?;
            }
            let body = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
            text.push_str(&String::from_utf8(body).map_err(|e| Error::Data(e.to_string()))?);
            std::fs::write(path, text).map_err(io)
        }
    }
}
