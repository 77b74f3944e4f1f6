//! Exhaustive enumeration over the purchase grid, for small horizons.
//!
//! Serves as ground truth for the dynamic program: in `Exact` mode it solves
//! the discrete-input problem with the true dynamics, in `Rounded` mode it
//! replays the floor-rounded system the dynamic program optimizes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    grid_floor, next_level, simulate, step_policy, tol, Instance, Method, Solution, StorageSpec,
};
use crate::rbdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Exact,
    Rounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: DynamicsMode,
    /// Upper limit on the number of complete control sequences.
    pub max_nodes: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: DynamicsMode::Exact,
            max_nodes: 5_000_000,
        }
    }
}

impl OracleConfig {
    pub fn rounded() -> Self {
        OracleConfig {
            mode: DynamicsMode::Rounded,
            ..Self::default()
        }
    }
}

/// Number of complete sequences the enumeration visits without pruning.
pub fn required_nodes(inst: &Instance) -> u128 {
    let per_step = inst.input_grid().len() as u128;
    (0..inst.horizon()).fold(1u128, |acc, _| acc.saturating_mul(per_step))
}

fn check_budget(inst: &Instance, cfg: &OracleConfig) -> Result<()> {
    if cfg.max_nodes == 0 {
        return Err(Error::invalid("oracle budget must be positive"));
    }
    let required = required_nodes(inst);
    if required > cfg.max_nodes as u128 {
        return Err(Error::BudgetExceeded {
            required,
            budget: cfg.max_nodes,
        });
    }
    Ok(())
}

struct Walker<'a> {
    spec: StorageSpec,
    prices: &'a [f64],
    demand: &'a [f64],
    inputs: Vec<f64>,
    mode: DynamicsMode,
    h_v: f64,
    /// `suffix_floor[t]` is a lower bound on the cost of steps `t..m`.
    suffix_floor: Vec<f64>,
}

impl Walker<'_> {
    fn new(inst: &Instance, mode: DynamicsMode) -> Walker<'_> {
        let spec = *inst.spec();
        let prices = inst.prices();
        let mut suffix_floor = vec![0.0; prices.len() + 1];
        for t in (0..prices.len()).rev() {
            let cheapest = (prices[t] * spec.buy_min).min(prices[t] * spec.buy_max);
            suffix_floor[t] = suffix_floor[t + 1] + cheapest;
        }
        Walker {
            spec,
            prices,
            demand: inst.consumption(),
            inputs: inst.input_grid(),
            mode,
            h_v: inst.disc().h_v,
            suffix_floor,
        }
    }

    /// Level after buying `k` from `level` at step `t`, if every per-step
    /// constraint holds.
    fn advance(&self, t: usize, level: f64, k: f64) -> Option<f64> {
        let spec = &self.spec;
        let (y, zeta) = step_policy(self.demand[t], k);
        if y > spec.charge_max + tol(spec.charge_max) {
            return None;
        }
        let next = next_level(spec, level, y, zeta);
        match self.mode {
            DynamicsMode::Exact => (next >= spec.cap_min - tol(spec.cap_min)
                && next <= spec.cap_max + tol(spec.cap_max))
            .then_some(next),
            DynamicsMode::Rounded => {
                let rounded = grid_floor(next, self.h_v) as f64 * self.h_v;
                (rounded >= spec.cap_min - tol(spec.cap_min)
                    && rounded <= spec.cap_max + tol(spec.cap_max))
                .then_some(rounded)
            }
        }
    }
}

struct Search<'a> {
    walker: Walker<'a>,
    v_final: f64,
    path: Vec<f64>,
    levels: Vec<f64>,
    best: Option<(f64, Vec<f64>, Vec<f64>)>,
    largest_final: Option<f64>,
}

impl Search<'_> {
    fn dfs(&mut self, t: usize, level: f64, partial: f64) {
        let m = self.walker.prices.len();
        if t == m {
            self.largest_final = Some(self.largest_final.map_or(level, |v: f64| v.max(level)));
            if level < self.v_final - tol(self.v_final) {
                return;
            }
            // Sequences arrive in lexicographic order; only a strict
            // improvement replaces the incumbent.
            let better = match &self.best {
                None => true,
                Some((c, _, _)) => partial < *c - tol(*c),
            };
            if better {
                self.best = Some((partial, self.path.clone(), self.levels.clone()));
            }
            return;
        }
        if let Some((incumbent, _, _)) = &self.best {
            if partial + self.walker.suffix_floor[t] > *incumbent + tol(*incumbent) {
                return;
            }
        }
        for i in 0..self.walker.inputs.len() {
            let k = self.walker.inputs[i];
            let Some(next) = self.walker.advance(t, level, k) else {
                continue;
            };
            self.path.push(k);
            self.levels.push(next);
            self.dfs(t + 1, next, partial + self.walker.prices[t] * k);
            self.path.pop();
            self.levels.pop();
        }
    }
}

/// Minimum-cost feasible control, ties broken lexicographically by `x`.
pub fn solve(inst: &Instance, cfg: &OracleConfig) -> Result<Solution> {
    check_budget(inst, cfg)?;
    let mut search = Search {
        walker: Walker::new(inst, cfg.mode),
        v_final: inst.v_final(),
        path: Vec::with_capacity(inst.horizon()),
        levels: Vec::with_capacity(inst.horizon()),
        best: None,
        largest_final: None,
    };
    search.dfs(0, inst.v_init(), 0.0);
    match search.best {
        Some((_, x, levels)) => Solution::from_controls(inst, x, levels, Method::Oracle, 0.0),
        None => Err(Error::Infeasible {
            largest_final_level: search.largest_final,
            required: inst.v_final(),
        }),
    }
}

/// Minimum cost per reachable final level of the rounded system, ignoring
/// the final-level constraint. Ascending by level.
pub fn level_costs(inst: &Instance, max_nodes: u64) -> Result<Vec<(f64, f64)>> {
    let cfg = OracleConfig {
        mode: DynamicsMode::Rounded,
        max_nodes,
    };
    check_budget(inst, &cfg)?;
    let walker = Walker::new(inst, DynamicsMode::Rounded);
    let h_v = inst.disc().h_v;
    let mut best: BTreeMap<i64, f64> = BTreeMap::new();
    fn walk(
        w: &Walker<'_>,
        h_v: f64,
        t: usize,
        level: f64,
        partial: f64,
        best: &mut BTreeMap<i64, f64>,
    ) {
        if t == w.prices.len() {
            let key = (level / h_v).round() as i64;
            best.entry(key)
                .and_modify(|c| *c = c.min(partial))
                .or_insert(partial);
            return;
        }
        for &k in &w.inputs {
            if let Some(next) = w.advance(t, level, k) {
                walk(w, h_v, t + 1, next, partial + w.prices[t] * k, best);
            }
        }
    }
    walk(&walker, h_v, 0, inst.v_init(), 0.0, &mut best);
    Ok(best.into_iter().map(|(i, c)| (i as f64 * h_v, c)).collect())
}

/// Outcome of comparing the dynamic program against exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheckReport {
    pub oracle_cost: f64,
    pub rbdp_cost: f64,
    pub cost_gap: f64,
    /// `oracle_cost <= rbdp_cost`.
    pub lower_ok: bool,
    /// `rbdp_cost <= oracle_cost + cost_gap`.
    pub upper_ok: bool,
    /// Exact replay of the unmodified RBDP control respects every constraint.
    pub rbdp_exact_feasible: bool,
    /// Exact replay of the RBDP control computed with the capacity margin;
    /// `None` when the margin leaves no usable capacity.
    pub margin_exact_feasible: Option<bool>,
    pub oracle: Solution,
    pub rbdp: Solution,
    pub rbdp_violations: Vec<String>,
}

impl CrossCheckReport {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok && self.margin_exact_feasible != Some(false)
    }

    /// Human-readable dump of both traces.
    pub fn counterexample(&self, inst: &Instance) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "oracle={} rbdp={} gap={} lower_ok={} upper_ok={} rbdp_exact_feasible={} margin_exact_feasible={:?}",
            self.oracle_cost,
            self.rbdp_cost,
            self.cost_gap,
            self.lower_ok,
            self.upper_ok,
            self.rbdp_exact_feasible,
            self.margin_exact_feasible
        );
        let _ = writeln!(
            out,
            "instance: {}",
            serde_json::to_string(inst).unwrap_or_default()
        );
        let _ = writeln!(
            out,
            "oracle x={:?} V={:?}",
            self.oracle.x, self.oracle.levels
        );
        let _ = writeln!(out, "rbdp   x={:?} V={:?}", self.rbdp.x, self.rbdp.levels);
        for v in &self.rbdp_violations {
            let _ = writeln!(out, "rbdp violation: {v}");
        }
        out
    }
}

/// Runs both solvers and checks `oracle <= rbdp <= oracle + m h_V max p`.
pub fn cross_check(inst: &Instance, max_nodes: u64) -> Result<CrossCheckReport> {
    let oracle = solve(
        inst,
        &OracleConfig {
            mode: DynamicsMode::Exact,
            max_nodes,
        },
    )?;
    let (rbdp, _) = rbdp::solve(inst)?;
    let cost_gap = rbdp::error_budget(inst)?.cost_gap;
    let sim = simulate(inst, &rbdp.x)?;
    let margin_exact_feasible = match rbdp::apply_capacity_margin(inst) {
        Ok(shrunk) => match rbdp::solve(&shrunk) {
            Ok((safe, _)) => Some(simulate(inst, &safe.x)?.feasible()),
            Err(Error::Infeasible { .. }) => None,
            Err(e) => return Err(e),
        },
        Err(Error::MarginInfeasible { .. }) => None,
        Err(e) => return Err(e),
    };
    let slack = tol(oracle.cost.abs().max(rbdp.cost.abs()));
    Ok(CrossCheckReport {
        oracle_cost: oracle.cost,
        rbdp_cost: rbdp.cost,
        cost_gap,
        lower_ok: oracle.cost <= rbdp.cost + slack,
        upper_ok: rbdp.cost <= oracle.cost + cost_gap + slack,
        rbdp_exact_feasible: sim.feasible(),
        margin_exact_feasible,
        rbdp_violations: sim.violations.iter().map(|v| v.to_string()).collect(),
        oracle,
        rbdp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Discretization, LossFunction};

    fn ideal(cap: f64, buy_max: f64) -> StorageSpec {
        StorageSpec {
            cap_min: 0.0,
            cap_max: cap,
            buy_min: 0.0,
            buy_max,
            eta_in: 1.0,
            eta_out: 1.0,
            loss: LossFunction::Linear { beta: 0.0 },
            charge_max: cap,
        }
    }

    fn disc() -> Discretization {
        Discretization {
            h_x: 100.0,
            h_v: 1.0,
        }
    }

    #[test]
    fn single_step() {
        let inst = Instance::new(
            ideal(100.0, 200.0),
            vec![1.0],
            vec![100.0],
            0.0,
            0.0,
            disc(),
        )
        .unwrap();
        let sol = solve(&inst, &OracleConfig::default()).unwrap();
        assert_eq!(sol.x, vec![100.0]);
        assert_eq!(sol.cost, 100.0);
    }

    #[test]
    fn price_spike() {
        let inst = Instance::new(
            ideal(500.0, 200.0),
            vec![1.0, 10.0, 1.0],
            vec![100.0; 3],
            0.0,
            0.0,
            disc(),
        )
        .unwrap();
        for cfg in [OracleConfig::default(), OracleConfig::rounded()] {
            let sol = solve(&inst, &cfg).unwrap();
            assert_eq!(sol.cost, 300.0);
            assert_eq!(sol.x, vec![200.0, 0.0, 100.0]);
        }
    }

    #[test]
    fn final_level_above_capacity_is_infeasible() {
        let inst = Instance::new(
            ideal(100.0, 200.0),
            vec![1.0; 2],
            vec![0.0; 2],
            0.0,
            150.0,
            disc(),
        )
        .unwrap();
        assert!(matches!(
            solve(&inst, &OracleConfig::default()),
            Err(Error::Infeasible { largest_final_level: Some(l), .. }) if l == 100.0
        ));
    }

    #[test]
    fn refuses_over_budget() {
        let inst = Instance::new(
            ideal(100.0, 300.0),
            vec![1.0; 10],
            vec![0.0; 10],
            0.0,
            0.0,
            disc(),
        )
        .unwrap();
        let cfg = OracleConfig {
            mode: DynamicsMode::Exact,
            max_nodes: 1000,
        };
        match solve(&inst, &cfg) {
            Err(Error::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 4u128.pow(10));
                assert_eq!(budget, 1000);
            }
            other => panic!("expected budget refusal, got {other:?}"),
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        // Flat prices: buying 200 now or 100 twice costs the same.
        let inst = Instance::new(
            ideal(500.0, 200.0),
            vec![1.0; 2],
            vec![100.0; 2],
            0.0,
            0.0,
            disc(),
        )
        .unwrap();
        let sol = solve(&inst, &OracleConfig::default()).unwrap();
        assert_eq!(sol.x, vec![100.0, 100.0]);
    }

    #[test]
    fn rounding_below_capacity_is_flagged() {
        // Buying 10 at t=1 lands at 9.5 > C exactly but floors to 9 on the
        // grid, so the rounded system undercuts every exact solution.
        let spec = StorageSpec {
            eta_in: 0.95,
            charge_max: 10.0,
            ..ideal(9.0, 10.0)
        };
        let inst = Instance::new(
            spec,
            vec![1.0, 5.0],
            vec![0.0, 1.0],
            0.0,
            8.0,
            Discretization {
                h_x: 10.0,
                h_v: 1.0,
            },
        )
        .unwrap();
        let report = cross_check(&inst, 1_000).unwrap();
        assert_eq!(report.oracle_cost, 50.0);
        assert_eq!(report.rbdp_cost, 10.0);
        assert!(!report.lower_ok);
        assert!(report.upper_ok);
        assert!(!report.passed());
        assert!(!report.rbdp_exact_feasible);
        assert_eq!(report.rbdp_violations, vec!["t=1: V=9.5 > C=9".to_string()]);
        assert_eq!(report.margin_exact_feasible, None);
        assert!(report.counterexample(&inst).contains("rbdp violation"));
    }
}
