//! Storage model: domain types, grid rounding, self-discharge, single-step
//! dynamics, exact forward simulation and cost evaluation.
//!
//! Units are canonical throughout the crate: energy in kWh, prices in €/kWh,
//! one step per trading interval.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values within this many grid units of a grid point are treated as lying on it.
pub const GRID_TOL: f64 = 1e-9;

/// Absolute slack (kWh, scaled by magnitude) used by feasibility audits.
pub const FEAS_TOL: f64 = 1e-9;

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "grid step must be positive, got {h}"
        )));
    }
    Ok(())
}

fn check_non_negative(what: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} must be non-negative, got {v}"
        )));
    }
    Ok(())
}

/// Index of the largest multiple of `h` not above `v`.
#[inline]
pub(crate) fn grid_floor(v: f64, h: f64) -> i64 {
    (v / h + GRID_TOL).floor() as i64
}

/// Index of the smallest multiple of `h` not below `v`.
#[inline]
pub(crate) fn grid_ceil(v: f64, h: f64) -> i64 {
    (v / h - GRID_TOL).ceil() as i64
}

#[inline]
pub(crate) fn on_grid(v: f64, h: f64) -> bool {
    let q = v / h;
    (q - q.round()).abs() <= GRID_TOL * q.abs().max(1.0)
}

#[inline]
pub(crate) fn tol(bound: f64) -> f64 {
    FEAS_TOL * bound.abs().max(1.0)
}

/// Largest multiple of `h` that is `<= v`.
pub fn floor_h(v: f64, h: f64) -> Result<f64> {
    check_step(h)?;
    check_non_negative("value", v)?;
    Ok(grid_floor(v, h) as f64 * h)
}

/// Smallest multiple of `h` that is `>= v`.
pub fn ceil_h(v: f64, h: f64) -> Result<f64> {
    check_step(h)?;
    check_non_negative("value", v)?;
    Ok(grid_ceil(v, h) as f64 * h)
}

/// Self-discharge map applied to the fill level once per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[non_exhaustive]
pub enum LossFunction {
    /// `g(V) = (1 - beta) V`.
    Linear { beta: f64 },
}

impl LossFunction {
    pub fn linear(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::invalid(format!(
                "loss factor beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(LossFunction::Linear { beta })
    }

    /// Per-step retention factor `1 - beta` when the map is linear.
    pub fn retention(&self) -> Option<f64> {
        match *self {
            LossFunction::Linear { beta } => Some(1.0 - beta),
        }
    }

    pub fn eval(&self, v: f64) -> Result<f64> {
        check_non_negative("fill level", v)?;
        Ok(self.apply(v))
    }

    pub fn inverse(&self, w: f64) -> Result<f64> {
        check_non_negative("fill level", w)?;
        Ok(self.apply_inverse(w))
    }

    /// `g^k(v)`, the k-times iterated map.
    pub fn iter(&self, v: f64, k: u32) -> Result<f64> {
        check_non_negative("fill level", v)?;
        Ok(match *self {
            LossFunction::Linear { beta } => (1.0 - beta).powi(k as i32) * v,
        })
    }

    #[inline]
    pub(crate) fn apply(&self, v: f64) -> f64 {
        match *self {
            LossFunction::Linear { beta } => (1.0 - beta) * v,
        }
    }

    #[inline]
    pub(crate) fn apply_inverse(&self, w: f64) -> f64 {
        match *self {
            LossFunction::Linear { beta } => w / (1.0 - beta),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LossFunction::Linear { beta } => LossFunction::linear(beta).map(|_| ()),
        }
    }
}

/// Physical device parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    /// Lower capacity bound `c` (kWh).
    pub cap_min: f64,
    /// Upper capacity bound `C` (kWh).
    pub cap_max: f64,
    /// Lower purchase bound `l` (kWh per step).
    pub buy_min: f64,
    /// Upper purchase bound `u` (kWh per step).
    pub buy_max: f64,
    pub eta_in: f64,
    pub eta_out: f64,
    pub loss: LossFunction,
    /// Limit on the energy stored in one step (kWh per step).
    pub charge_max: f64,
}

impl StorageSpec {
    /// Experimental defaults: `eta_in = 0.9`, `eta_out = 0.95`, `beta = 0.1`,
    /// zero lower bounds, and a charge limit of half the capacity.
    pub fn with_capacity(capacity: f64, buy_max: f64) -> Self {
        StorageSpec {
            cap_min: 0.0,
            cap_max: capacity,
            buy_min: 0.0,
            buy_max,
            eta_in: 0.9,
            eta_out: 0.95,
            loss: LossFunction::Linear { beta: 0.1 },
            charge_max: capacity / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.cap_min,
            self.cap_max,
            self.buy_min,
            self.buy_max,
            self.eta_in,
            self.eta_out,
            self.charge_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::instance("spec", "all parameters must be finite"));
        }
        if !(0.0 <= self.cap_min && self.cap_min <= self.cap_max) {
            return Err(Error::instance(
                "capacity",
                format!(
                    "need 0 <= c <= C, got c={} C={}",
                    self.cap_min, self.cap_max
                ),
            ));
        }
        if !(0.0 <= self.buy_min && self.buy_min <= self.buy_max) {
            return Err(Error::instance(
                "purchase bounds",
                format!(
                    "need 0 <= l <= u, got l={} u={}",
                    self.buy_min, self.buy_max
                ),
            ));
        }
        if !(self.eta_in > 0.0 && self.eta_in <= 1.0) {
            return Err(Error::instance(
                "eta_in",
                format!("must lie in (0, 1], got {}", self.eta_in),
            ));
        }
        if !(self.eta_out > 0.0 && self.eta_out <= 1.0) {
            return Err(Error::instance(
                "eta_out",
                format!("must lie in (0, 1], got {}", self.eta_out),
            ));
        }
        if self.charge_max < 0.0 {
            return Err(Error::instance(
                "y_max",
                format!("must be non-negative, got {}", self.charge_max),
            ));
        }
        self.loss
            .validate()
            .map_err(|e| Error::instance("loss", e.to_string()))
    }
}

/// Step sizes of the purchase grid (`h_x`) and the fill-level grid (`h_V`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub h_x: f64,
    pub h_v: f64,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            h_x: 100.0,
            h_v: 1.0,
        }
    }
}

/// One optimization problem. Validated on construction and immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    prices: Vec<f64>,
    consumption: Vec<f64>,
    v_init: f64,
    v_final: f64,
    disc: Discretization,
    spec: StorageSpec,
}

impl Instance {
    /// Validates every invariant. `v_final` is snapped up to the fill-level grid.
    pub fn new(
        spec: StorageSpec,
        prices: Vec<f64>,
        consumption: Vec<f64>,
        v_init: f64,
        v_final: f64,
        disc: Discretization,
    ) -> Result<Self> {
        spec.validate()?;
        if prices.is_empty() {
            return Err(Error::instance("horizon", "need at least one time step"));
        }
        if prices.len() != consumption.len() {
            return Err(Error::instance(
                "horizon",
                format!(
                    "price and consumption series differ in length ({} vs {})",
                    prices.len(),
                    consumption.len()
                ),
            ));
        }
        if let Some(t) = prices.iter().position(|p| !p.is_finite()) {
            return Err(Error::instance(
                "prices",
                format!("non-finite price at step {t}"),
            ));
        }
        if let Some(t) = consumption
            .iter()
            .position(|z| !(z.is_finite() && *z >= 0.0))
        {
            return Err(Error::instance(
                "consumption",
                format!(
                    "consumption at step {t} must be non-negative, got {}",
                    consumption[t]
                ),
            ));
        }
        let Discretization { h_x, h_v } = disc;
        if !(h_x > 0.0 && h_x.is_finite()) {
            return Err(Error::instance(
                "h_x",
                format!("must be positive, got {h_x}"),
            ));
        }
        if !(h_v > 0.0 && h_v.is_finite()) {
            return Err(Error::instance(
                "h_V",
                format!("must be positive, got {h_v}"),
            ));
        }
        if !on_grid(spec.buy_min, h_x) || !on_grid(spec.buy_max, h_x) {
            return Err(Error::instance(
                "purchase bounds",
                format!(
                    "l={} and u={} must be multiples of h_x={h_x}",
                    spec.buy_min, spec.buy_max
                ),
            ));
        }
        if !(v_init.is_finite() && spec.cap_min <= v_init && v_init <= spec.cap_max) {
            return Err(Error::instance(
                "V_init",
                format!(
                    "must lie in [{}, {}], got {v_init}",
                    spec.cap_min, spec.cap_max
                ),
            ));
        }
        if !(v_final.is_finite() && v_final >= spec.cap_min) {
            return Err(Error::instance(
                "V_final",
                format!("must be at least c={}, got {v_final}", spec.cap_min),
            ));
        }
        let snapped = grid_ceil(v_final, h_v) as f64 * h_v;
        if !on_grid(v_final, h_v) {
            log::warn!("V_final={v_final} is off the h_V={h_v} grid; snapped up to {snapped}");
        }
        Ok(Instance {
            prices,
            consumption,
            v_init,
            v_final: snapped,
            disc,
            spec,
        })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn consumption(&self) -> &[f64] {
        &self.consumption
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    pub fn v_init(&self) -> f64 {
        self.v_init
    }

    pub fn v_final(&self) -> f64 {
        self.v_final
    }

    pub fn disc(&self) -> Discretization {
        self.disc
    }

    pub fn spec(&self) -> &StorageSpec {
        &self.spec
    }

    /// The purchase grid `l, l + h_x, ..., u`.
    pub fn input_grid(&self) -> Vec<f64> {
        let h = self.disc.h_x;
        let lo = (self.spec.buy_min / h).round() as i64;
        let hi = (self.spec.buy_max / h).round() as i64;
        (lo..=hi).map(|i| i as f64 * h).collect()
    }

    /// Copy with a different upper capacity bound, revalidated.
    pub fn with_cap_max(&self, cap_max: f64) -> Result<Self> {
        let spec = StorageSpec {
            cap_max,
            ..self.spec
        };
        Instance::new(
            spec,
            self.prices.clone(),
            self.consumption.clone(),
            self.v_init,
            self.v_final,
            self.disc,
        )
    }
}

/// Result of one step of the storage dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Energy stored this step.
    pub y: f64,
    /// Energy withdrawn (consumer side) this step.
    pub zeta: f64,
    /// Exact post-step fill level.
    pub level: f64,
}

/// Surplus purchase is stored, any shortfall is withdrawn.
#[inline]
pub fn step_policy(consumption: f64, purchase: f64) -> (f64, f64) {
    let y = (purchase - consumption).max(0.0);
    let zeta = (consumption - purchase).max(0.0);
    (y, zeta)
}

#[inline]
pub(crate) fn next_level(spec: &StorageSpec, v_prev: f64, y: f64, zeta: f64) -> f64 {
    spec.eta_in * y + spec.loss.apply(v_prev) - zeta / spec.eta_out
}

/// One exact step. The resulting level may be negative or above capacity;
/// feasibility is the caller's concern.
pub fn step_dynamics(
    spec: &StorageSpec,
    v_prev: f64,
    purchase: f64,
    consumption: f64,
) -> StepOutcome {
    let (y, zeta) = step_policy(consumption, purchase);
    StepOutcome {
        y,
        zeta,
        level: next_level(spec, v_prev, y, zeta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    BelowCapacity { level: f64, bound: f64 },
    AboveCapacity { level: f64, bound: f64 },
    PurchaseBelowMin { x: f64, bound: f64 },
    PurchaseAboveMax { x: f64, bound: f64 },
    OffInputGrid { x: f64, h_x: f64 },
    ChargeLimit { y: f64, bound: f64 },
    FinalLevel { level: f64, required: f64 },
}

/// A violated constraint at 0-based `step`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub step: usize,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.step + 1;
        match &self.kind {
            ViolationKind::BelowCapacity { level, bound } => {
                write!(f, "t={t}: V={level} < c={bound}")
            }
            ViolationKind::AboveCapacity { level, bound } => {
                write!(f, "t={t}: V={level} > C={bound}")
            }
            ViolationKind::PurchaseBelowMin { x, bound } => write!(f, "t={t}: x={x} < l={bound}"),
            ViolationKind::PurchaseAboveMax { x, bound } => write!(f, "t={t}: x={x} > u={bound}"),
            ViolationKind::OffInputGrid { x, h_x } => {
                write!(f, "t={t}: x={x} is not a multiple of {h_x}")
            }
            ViolationKind::ChargeLimit { y, bound } => write!(f, "t={t}: y={y} > y_max={bound}"),
            ViolationKind::FinalLevel { level, required } => {
                write!(f, "t={t}: V={level} below final level {required}")
            }
        }
    }
}

/// Exact replay of a purchase sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub trajectory: Vec<f64>,
    pub y: Vec<f64>,
    pub zeta: Vec<f64>,
    pub violations: Vec<Violation>,
}

impl Simulation {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays `x` with exact dynamics from `V_init` and audits every constraint.
pub fn simulate(inst: &Instance, x: &[f64]) -> Result<Simulation> {
    let m = inst.horizon();
    if x.len() != m {
        return Err(Error::invalid(format!(
            "control has {} steps, instance has {m}",
            x.len()
        )));
    }
    let spec = inst.spec();
    let h_x = inst.disc().h_x;
    let mut sim = Simulation {
        trajectory: Vec::with_capacity(m),
        y: Vec::with_capacity(m),
        zeta: Vec::with_capacity(m),
        violations: Vec::new(),
    };
    let mut level = inst.v_init();
    for (step, (&xt, &zt)) in x.iter().zip(inst.consumption()).enumerate() {
        let mut flag = |kind| sim.violations.push(Violation { step, kind });
        if xt < spec.buy_min - tol(spec.buy_min) {
            flag(ViolationKind::PurchaseBelowMin {
                x: xt,
                bound: spec.buy_min,
            });
        }
        if xt > spec.buy_max + tol(spec.buy_max) {
            flag(ViolationKind::PurchaseAboveMax {
                x: xt,
                bound: spec.buy_max,
            });
        }
        if !on_grid(xt, h_x) {
            flag(ViolationKind::OffInputGrid { x: xt, h_x });
        }
        let out = step_dynamics(spec, level.max(0.0), xt.max(0.0), zt);
        if out.y > spec.charge_max + tol(spec.charge_max) {
            flag(ViolationKind::ChargeLimit {
                y: out.y,
                bound: spec.charge_max,
            });
        }
        level = out.level;
        if level < spec.cap_min - tol(spec.cap_min) {
            flag(ViolationKind::BelowCapacity {
                level,
                bound: spec.cap_min,
            });
        }
        if level > spec.cap_max + tol(spec.cap_max) {
            flag(ViolationKind::AboveCapacity {
                level,
                bound: spec.cap_max,
            });
        }
        sim.trajectory.push(level);
        sim.y.push(out.y);
        sim.zeta.push(out.zeta);
    }
    if level < inst.v_final() - tol(inst.v_final()) {
        sim.violations.push(Violation {
            step: m - 1,
            kind: ViolationKind::FinalLevel {
                level,
                required: inst.v_final(),
            },
        });
    }
    Ok(sim)
}

/// `sum_t p_t x_t`, accumulated left to right.
pub fn cost_of(prices: &[f64], x: &[f64]) -> Result<f64> {
    if prices.len() != x.len() {
        return Err(Error::invalid(format!(
            "{} prices vs {} purchases",
            prices.len(),
            x.len()
        )));
    }
    let mut acc = 0.0;
    for (p, q) in prices.iter().zip(x) {
        acc += p * q;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rbdp,
    Oracle,
}

/// A control trajectory with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Fill levels as tracked by the solver (rounded levels for RBDP).
    #[serde(rename = "V")]
    pub levels: Vec<f64>,
    pub cost: f64,
    pub method: Method,
    /// Guaranteed cost gap to the optimum; zero for exact methods.
    pub bound_gap: f64,
}

impl Solution {
    pub(crate) fn from_controls(
        inst: &Instance,
        x: Vec<f64>,
        levels: Vec<f64>,
        method: Method,
        bound_gap: f64,
    ) -> Result<Self> {
        let (y, zeta) = x
            .iter()
            .zip(inst.consumption())
            .map(|(&k, &z)| step_policy(z, k))
            .unzip();
        let cost = cost_of(inst.prices(), &x)?;
        Ok(Solution {
            x,
            y,
            zeta,
            levels,
            cost,
            method,
            bound_gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn experiment_spec() -> StorageSpec {
        StorageSpec::with_capacity(1000.0, 700.0)
    }

    #[test]
    fn floor_examples() {
        assert_eq!(floor_h(5.7, 1.0).unwrap(), 5.0);
        assert_eq!(floor_h(600.0, 100.0).unwrap(), 600.0);
        assert_eq!(floor_h(199.99, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn ceil_examples() {
        assert_eq!(ceil_h(5.1, 1.0).unwrap(), 6.0);
        assert_eq!(ceil_h(500.0, 100.0).unwrap(), 500.0);
        assert_eq!(ceil_h(0.0, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn rounding_rejects_bad_step() {
        assert!(matches!(floor_h(1.0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(ceil_h(1.0, -1.0), Err(Error::InvalidArgument(_))));
        assert!(floor_h(-1.0, 1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let g = LossFunction::linear(0.1).unwrap();
        assert!((g.eval(100.0).unwrap() - 90.0).abs() < 1e-12);
        assert!((g.inverse(90.0).unwrap() - 100.0).abs() < 1e-12);
        assert!((g.iter(1000.0, 2).unwrap() - 810.0).abs() < 1e-9);
        assert!(g.eval(-1.0).is_err());
        assert!(g.inverse(-1.0).is_err());
        assert!(LossFunction::linear(1.0).is_err());
    }

    #[test]
    fn policy_examples() {
        assert_eq!(step_policy(200.0, 300.0), (100.0, 0.0));
        assert_eq!(step_policy(200.0, 0.0), (0.0, 200.0));
        assert_eq!(step_policy(200.0, 200.0), (0.0, 0.0));
    }

    #[test]
    fn dynamics_examples() {
        let spec = experiment_spec();
        let a = step_dynamics(&spec, 100.0, 300.0, 200.0);
        assert_eq!((a.y, a.zeta), (100.0, 0.0));
        assert!((a.level - 180.0).abs() < 1e-9);
        let b = step_dynamics(&spec, 100.0, 0.0, 76.0);
        assert_eq!((b.y, b.zeta), (0.0, 76.0));
        assert!((b.level - 10.0).abs() < 1e-9);
        assert_eq!(step_dynamics(&spec, 0.0, 150.0, 150.0).level, 0.0);
    }

    #[test]
    fn cost_examples() {
        assert!((cost_of(&[0.1, 0.2], &[100.0, 0.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(cost_of(&[0.1, 0.2], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(cost_of(&[0.1], &[0.0, 0.0]).is_err());
    }

    fn decay_instance(v_init: f64, v_final: f64, m: usize) -> Instance {
        let spec = StorageSpec::with_capacity(1000.0, 700.0);
        Instance::new(
            spec,
            vec![0.05; m],
            vec![200.0; m],
            v_init,
            v_final,
            Discretization::default(),
        )
        .unwrap()
    }

    #[test]
    fn simulate_pure_decay() {
        let inst = decay_instance(500.0, 200.0, 5);
        let sim = simulate(&inst, &[200.0; 5]).unwrap();
        for (t, v) in sim.trajectory.iter().enumerate() {
            let expect = inst.spec().loss.iter(500.0, t as u32 + 1).unwrap();
            assert!((v - expect).abs() < 1e-9);
        }
        // 0.9^5 * 500 = 295.2 >= 200
        assert!(sim.feasible());

        let tight = decay_instance(500.0, 300.0, 5);
        let sim = simulate(&tight, &[200.0; 5]).unwrap();
        assert!(!sim.feasible());
        assert!(matches!(
            sim.violations[0].kind,
            ViolationKind::FinalLevel { .. }
        ));
    }

    #[test]
    fn simulate_flags_purchase_bounds() {
        let inst = decay_instance(500.0, 0.0, 3);
        let sim = simulate(&inst, &[200.0, 800.0, 150.0]).unwrap();
        let steps: Vec<_> = sim
            .violations
            .iter()
            .map(|v| (v.step, v.kind.clone()))
            .collect();
        assert!(steps
            .iter()
            .any(|(s, k)| *s == 1 && matches!(k, ViolationKind::PurchaseAboveMax { .. })));
        assert!(steps
            .iter()
            .any(|(s, k)| *s == 2 && matches!(k, ViolationKind::OffInputGrid { .. })));
        assert!(simulate(&inst, &[0.0; 2]).is_err());
    }

    #[test]
    fn simulate_is_deterministic() {
        let inst = decay_instance(300.0, 0.0, 4);
        let x = [300.0, 0.0, 400.0, 100.0];
        assert_eq!(simulate(&inst, &x).unwrap(), simulate(&inst, &x).unwrap());
    }

    #[test]
    fn instance_validation() {
        let spec = experiment_spec();
        let d = Discretization::default();
        assert!(Instance::new(spec, vec![], vec![], 0.0, 0.0, d).is_err());
        assert!(Instance::new(spec, vec![1.0], vec![1.0, 2.0], 0.0, 0.0, d).is_err());
        assert!(Instance::new(spec, vec![1.0], vec![-1.0], 0.0, 0.0, d).is_err());
        assert!(Instance::new(spec, vec![1.0], vec![1.0], 1001.0, 0.0, d).is_err());
        let off = StorageSpec {
            buy_max: 750.0,
            ..spec
        };
        assert!(Instance::new(off, vec![1.0], vec![1.0], 0.0, 0.0, d).is_err());
        let snapped = Instance::new(spec, vec![1.0], vec![1.0], 0.0, 99.5, d).unwrap();
        assert_eq!(snapped.v_final(), 100.0);
        assert_eq!(snapped.input_grid().len(), 8);
    }

    proptest! {
        #[test]
        fn floor_ceil_sandwich(v in 0.0f64..1e5, h in 0.01f64..500.0) {
            let lo = floor_h(v, h).unwrap();
            let hi = ceil_h(v, h).unwrap();
            prop_assert!(lo <= v + GRID_TOL * h && v <= hi + GRID_TOL * h);
            prop_assert!(on_grid(lo, h) && on_grid(hi, h));
            let gap = ((hi - lo) / h).round();
            prop_assert!(gap == 0.0 || gap == 1.0);
        }

        #[test]
        fn policy_balance(z in 0.0f64..1e4, k in 0.0f64..1e4) {
            let (y, zeta) = step_policy(z, k);
            prop_assert!(y >= 0.0 && zeta >= 0.0);
            prop_assert_eq!(y * zeta, 0.0);
            prop_assert!(((k - y) + zeta - z).abs() <= 1e-9 * z.max(1.0));
        }

        #[test]
        fn dynamics_monotone_in_level(a in 0.0f64..2000.0, b in 0.0f64..2000.0, k in 0.0f64..1000.0, z in 0.0f64..500.0) {
            let spec = experiment_spec();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(step_dynamics(&spec, lo, k, z).level <= step_dynamics(&spec, hi, k, z).level);
        }

        #[test]
        fn loss_is_monotone_and_invertible(beta in 0.0f64..0.99, v in 0.0f64..1e5, w in 0.0f64..1e5) {
            let g = LossFunction::linear(beta).unwrap();
            let gv = g.eval(v).unwrap();
            prop_assert!(0.0 <= gv && gv <= v);
            if w > v { prop_assert!(g.eval(w).unwrap() >= gv); }
            let back = g.eval(g.inverse(w).unwrap()).unwrap();
            prop_assert!((back - w).abs() <= 1e-9 * w.max(1.0));
        }
    }
}
