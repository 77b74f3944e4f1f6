//! Rounding-based dynamic programming.
//!
//! Fill levels are floor-rounded onto the `h_V` grid after every step, which
//! keeps the state space at `(C - c) / h_V + 1` levels per step. On that
//! rounded system the Bellman recursion is exact; against the true dynamics
//! the solver underestimates the fill level by at most
//! `sum_{i=1..m} g^{m-i}(h_V)`.
//!
//! The first step starts from the exact `V_init`. Every later step pulls
//! from the predecessor window of each target level: the grid levels `W`
//! with `floor(eta_in y + g(W) - zeta / eta_out) = d`. Ties are broken
//! towards the smaller purchase, then the smaller predecessor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    grid_ceil, grid_floor, next_level, step_policy, tol, Instance, Method, Solution, StorageSpec,
};

/// Grids smaller than this are swept on the calling thread.
const PARALLEL_MIN_LEVELS: usize = 1024;

/// Fill-level grid `{lo * h_V, ..., hi * h_V}`, stored as absolute indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    lo: i64,
    hi: i64,
    h_v: f64,
}

impl StateGrid {
    /// Multiples of `h_V` inside `[c, C]`.
    pub fn new(cap_min: f64, cap_max: f64, h_v: f64) -> Result<Self> {
        let lo = grid_ceil(cap_min, h_v);
        let hi = grid_floor(cap_max, h_v);
        if lo > hi {
            return Err(Error::invalid(format!(
                "fill-level grid is empty: no multiple of h_V={h_v} in [{cap_min}, {cap_max}]"
            )));
        }
        Ok(StateGrid { lo, hi, h_v })
    }

    pub fn for_instance(inst: &Instance) -> Result<Self> {
        let spec = inst.spec();
        StateGrid::new(spec.cap_min, spec.cap_max, inst.disc().h_v)
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h_v(&self) -> f64 {
        self.h_v
    }

    pub fn min_level(&self) -> f64 {
        self.lo as f64 * self.h_v
    }

    pub fn max_level(&self) -> f64 {
        self.hi as f64 * self.h_v
    }

    /// Level of the `j`-th grid point.
    pub fn level(&self, j: usize) -> f64 {
        (self.lo + j as i64) as f64 * self.h_v
    }

    pub fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|j| self.level(j))
    }

    /// Position of an on-grid level, if it lies inside the grid.
    pub fn position(&self, level: f64) -> Option<usize> {
        let idx = (level / self.h_v).round() as i64;
        if (idx as f64 * self.h_v - level).abs() > 1e-6 * self.h_v.max(level.abs()) {
            return None;
        }
        self.offset(idx)
    }

    #[inline]
    fn offset(&self, idx: i64) -> Option<usize> {
        (self.lo..=self.hi)
            .contains(&idx)
            .then(|| (idx - self.lo) as usize)
    }
}

/// Closed interval of predecessor levels; empty when `lb > ub`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lb: f64,
    pub ub: f64,
}

impl Window {
    pub fn is_empty(&self) -> bool {
        self.lb > self.ub
    }
}

/// Absolute index range of grid levels `W` with
/// `floor(eta_in y + g(W) - zeta / eta_out) = d_idx`.
fn window_indices(
    spec: &StorageSpec,
    grid: &StateGrid,
    d_idx: i64,
    y: f64,
    zeta: f64,
) -> (i64, i64) {
    let h = grid.h_v;
    let shift = spec.eta_in * y - zeta / spec.eta_out;
    let d = d_idx as f64 * h;
    let upper_target = d + h - shift;
    if upper_target <= 0.0 {
        return (grid.lo, grid.lo - 1);
    }
    let lower_target = (d - shift).max(0.0);
    // Bracket through g^{-1}, then settle the endpoints with the forward map.
    let mut lo = (grid_ceil(spec.loss.apply_inverse(lower_target), h) - 1).max(grid.lo);
    let mut hi = (grid_floor(spec.loss.apply_inverse(upper_target), h) + 1).min(grid.hi);
    let lands = |w: i64| grid_floor(next_level(spec, w as f64 * h, y, zeta), h);
    while lo <= hi && lands(lo) < d_idx {
        lo += 1;
    }
    while hi >= lo && lands(hi) > d_idx {
        hi -= 1;
    }
    (lo, hi)
}

/// Predecessor window of level `d` under purchase `k` and consumption `z`,
/// restricted to `grid`.
pub fn predecessor_window(spec: &StorageSpec, grid: &StateGrid, d: f64, k: f64, z: f64) -> Window {
    let (y, zeta) = step_policy(z, k);
    let d_idx = (d / grid.h_v).round() as i64;
    let (lo, hi) = window_indices(spec, grid, d_idx, y, zeta);
    Window {
        lb: lo as f64 * grid.h_v,
        ub: hi as f64 * grid.h_v,
    }
}

/// Per-step tables over the fill-level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTables {
    grid: StateGrid,
    inputs: Vec<f64>,
    steps: usize,
    cost: Vec<f64>,
    reachable: Vec<bool>,
    choice: Vec<u32>,
    pred: Vec<u32>,
    evaluations: u64,
}

impl DpTables {
    fn new(grid: StateGrid, inputs: Vec<f64>, steps: usize) -> Self {
        let cells = steps * grid.len();
        DpTables {
            grid,
            inputs,
            steps,
            cost: vec![0.0; cells],
            reachable: vec![false; cells],
            choice: vec![0; cells],
            pred: vec![0; cells],
            evaluations: 0,
        }
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.steps
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Number of `(t, d, k, W)` transitions evaluated.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    #[inline]
    fn cell(&self, t: usize, j: usize) -> usize {
        t * self.grid.len() + j
    }

    fn lookup(&self, t: usize, level: f64) -> Option<usize> {
        if t >= self.steps {
            return None;
        }
        let j = self.grid.position(level)?;
        let c = self.cell(t, j);
        self.reachable[c].then_some(c)
    }

    /// Cost to reach rounded `level` after 0-based step `t`.
    pub fn cost_to_reach(&self, t: usize, level: f64) -> Option<f64> {
        self.lookup(t, level).map(|c| self.cost[c])
    }

    /// Purchase chosen for the optimal transition into `(t, level)`.
    pub fn purchase(&self, t: usize, level: f64) -> Option<f64> {
        self.lookup(t, level)
            .map(|c| self.inputs[self.choice[c] as usize])
    }

    /// Predecessor level of `(t, level)`; `None` at `t = 0`, where the
    /// predecessor is the exact initial level.
    pub fn predecessor(&self, t: usize, level: f64) -> Option<f64> {
        if t == 0 {
            return None;
        }
        self.lookup(t, level)
            .map(|c| self.grid.level(self.pred[c] as usize))
    }

    /// Reachable `(level, cost)` pairs after the last step, ascending by level.
    pub fn final_costs(&self) -> Vec<(f64, f64)> {
        let t = self.steps - 1;
        (0..self.grid.len())
            .filter_map(|j| {
                let c = self.cell(t, j);
                self.reachable[c].then(|| (self.grid.level(j), self.cost[c]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    k_idx: u32,
    y: f64,
    zeta: f64,
    cost: f64,
}

#[derive(Debug, Clone, Copy)]
struct Best {
    cost: f64,
    k_idx: u32,
    pred: u32,
}

fn admissible(spec: &StorageSpec, inputs: &[f64], price: f64, consumption: f64) -> Vec<Transition> {
    inputs
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| {
            let (y, zeta) = step_policy(consumption, k);
            (y <= spec.charge_max + tol(spec.charge_max)).then_some(Transition {
                k_idx: i as u32,
                y,
                zeta,
                cost: price * k,
            })
        })
        .collect()
}

fn best_into(
    spec: &StorageSpec,
    grid: &StateGrid,
    j: usize,
    moves: &[Transition],
    prev_cost: &[f64],
    prev_reach: &[bool],
) -> (Option<Best>, u64) {
    let d_idx = grid.lo + j as i64;
    let mut best: Option<Best> = None;
    let mut evals = 0u64;
    for mv in moves {
        let (lo, hi) = window_indices(spec, grid, d_idx, mv.y, mv.zeta);
        for w in lo..=hi {
            let pj = (w - grid.lo) as usize;
            if !prev_reach[pj] {
                continue;
            }
            evals += 1;
            let cand = prev_cost[pj] + mv.cost;
            if best.is_none_or(|b| cand < b.cost) {
                best = Some(Best {
                    cost: cand,
                    k_idx: mv.k_idx,
                    pred: pj as u32,
                });
            }
        }
    }
    (best, evals)
}

/// Solves the rounded system and backtracks the optimal control.
pub fn solve(inst: &Instance) -> Result<(Solution, DpTables)> {
    let grid = StateGrid::for_instance(inst)?;
    let spec = *inst.spec();
    let h = grid.h_v;
    let n = grid.len();
    let m = inst.horizon();
    let prices = inst.prices();
    let demand = inst.consumption();
    let mut tables = DpTables::new(grid, inst.input_grid(), m);

    for mv in admissible(&spec, &tables.inputs, prices[0], demand[0]) {
        let level = next_level(&spec, inst.v_init(), mv.y, mv.zeta);
        let Some(j) = grid.offset(grid_floor(level, h)) else {
            continue;
        };
        let cost = 0.0 + mv.cost;
        if !tables.reachable[j] || cost < tables.cost[j] {
            tables.reachable[j] = true;
            tables.cost[j] = cost;
            tables.choice[j] = mv.k_idx;
        }
        tables.evaluations += 1;
    }

    for t in 1..m {
        let moves = admissible(&spec, &tables.inputs, prices[t], demand[t]);
        let (done, rest) = tables.cost.split_at_mut(t * n);
        let prev_cost = &done[(t - 1) * n..];
        let prev_reach = &tables.reachable[(t - 1) * n..t * n];
        let layer: Vec<(Option<Best>, u64)> = if n >= PARALLEL_MIN_LEVELS {
            (0..n)
                .into_par_iter()
                .map(|j| best_into(&spec, &grid, j, &moves, prev_cost, prev_reach))
                .collect()
        } else {
            (0..n)
                .map(|j| best_into(&spec, &grid, j, &moves, prev_cost, prev_reach))
                .collect()
        };
        let cost_row = &mut rest[..n];
        for (j, (best, evals)) in layer.into_iter().enumerate() {
            tables.evaluations += evals;
            if let Some(b) = best {
                let c = t * n + j;
                cost_row[j] = b.cost;
                tables.reachable[c] = true;
                tables.choice[c] = b.k_idx;
                tables.pred[c] = b.pred;
            }
        }
    }

    let last = m - 1;
    let first_allowed = grid_ceil(inst.v_final(), h).max(grid.lo);
    let mut d_star: Option<usize> = None;
    if first_allowed <= grid.hi {
        for j in (first_allowed - grid.lo) as usize..n {
            let c = tables.cell(last, j);
            if tables.reachable[c]
                && d_star.is_none_or(|b| tables.cost[c] < tables.cost[tables.cell(last, b)])
            {
                d_star = Some(j);
            }
        }
    }
    let Some(d_star) = d_star else {
        let largest = (0..n)
            .rev()
            .find(|&j| tables.reachable[tables.cell(last, j)])
            .map(|j| grid.level(j));
        return Err(Error::Infeasible {
            largest_final_level: largest,
            required: inst.v_final(),
        });
    };

    let (x, levels) = backtrack(&tables, grid.level(d_star))?;
    let budget = error_budget(inst)?;
    let solution = Solution::from_controls(inst, x, levels, Method::Rbdp, budget.cost_gap)?;
    Ok((solution, tables))
}

/// Walks the predecessor table back from `(m, d_star)`.
pub fn backtrack(tables: &DpTables, d_star: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = tables.steps;
    let grid = tables.grid;
    let mut j = grid
        .position(d_star)
        .filter(|&j| tables.reachable[tables.cell(m - 1, j)])
        .ok_or_else(|| Error::invalid(format!("final level {d_star} is not reachable")))?;
    let mut x = vec![0.0; m];
    let mut levels = vec![0.0; m];
    for t in (0..m).rev() {
        let c = tables.cell(t, j);
        x[t] = tables.inputs[tables.choice[c] as usize];
        levels[t] = grid.level(j);
        j = tables.pred[c] as usize;
    }
    Ok((x, levels))
}

/// Accumulated rounding bound and the matching objective bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// `sum_{i=1..m} g^{m-i}(h_V)` in kWh.
    pub eps_tot: f64,
    /// `m h_V max_t p_t` in €, floored at zero.
    pub cost_gap: f64,
}

pub fn error_budget(inst: &Instance) -> Result<ErrorBudget> {
    let r = inst.spec().loss.retention().ok_or(Error::Unsupported(
        "rounding bound requires a linear loss function",
    ))?;
    let m = inst.horizon();
    let h_v = inst.disc().h_v;
    let eps_tot = if r >= 1.0 {
        m as f64 * h_v
    } else {
        h_v * (1.0 - r.powi(m as i32)) / (1.0 - r)
    };
    let p_max = inst
        .prices()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ErrorBudget {
        eps_tot,
        cost_gap: m as f64 * h_v * p_max.max(0.0),
    })
}

/// Shrinks `C` by the rounding budget so the exact trajectory of an RBDP
/// control stays below the original capacity.
pub fn apply_capacity_margin(inst: &Instance) -> Result<Instance> {
    let eps_tot = error_budget(inst)?.eps_tot;
    let spec = inst.spec();
    let h_v = inst.disc().h_v;
    let shrunken = grid_floor(spec.cap_max - eps_tot, h_v) as f64 * h_v;
    let floor = spec.cap_min.max(inst.v_final());
    if shrunken <= floor {
        return Err(Error::MarginInfeasible {
            shrunken,
            floor,
            eps_tot,
        });
    }
    inst.with_cap_max(shrunken)
        .map_err(|_| Error::MarginInfeasible {
            shrunken,
            floor: spec.cap_min.max(inst.v_init()),
            eps_tot,
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

    fn spike() -> Instance {
        Instance::new(
            ideal(500.0, 200.0),
            vec![1.0, 10.0, 1.0],
            vec![100.0; 3],
            0.0,
            0.0,
            Discretization {
                h_x: 100.0,
                h_v: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_window_is_singleton() {
        let spec = ideal(100.0, 100.0);
        let grid = StateGrid::new(0.0, 100.0, 1.0).unwrap();
        let w = predecessor_window(&spec, &grid, 50.0, 30.0, 30.0);
        assert_eq!((w.lb, w.ub), (50.0, 50.0));
    }

    #[test]
    fn lossy_window_inverts_g() {
        // g(W) in [90, 91) holds for W = 100 and W = 101 (g(101) = 90.9).
        let spec = StorageSpec {
            loss: LossFunction::Linear { beta: 0.1 },
            ..ideal(200.0, 100.0)
        };
        let grid = StateGrid::new(0.0, 200.0, 1.0).unwrap();
        let w = predecessor_window(&spec, &grid, 90.0, 40.0, 40.0);
        assert_eq!((w.lb, w.ub), (100.0, 101.0));
    }

    #[test]
    fn window_below_grid_is_empty() {
        let spec = ideal(100.0, 100.0);
        let grid = StateGrid::new(20.0, 100.0, 1.0).unwrap();
        // Reaching 10 with no purchase needs g(W) = 10 < c.
        assert!(predecessor_window(&spec, &grid, 10.0, 0.0, 0.0).is_empty());
        // A withdrawal of 95 out of at most 100 cannot land on 60.
        assert!(predecessor_window(&spec, &grid, 60.0, 0.0, 95.0).is_empty());
    }

    #[test]
    fn buys_ahead_of_price_spike() {
        let (sol, tables) = solve(&spike()).unwrap();
        assert_eq!(sol.x, vec![200.0, 0.0, 100.0]);
        assert_eq!(sol.levels, vec![100.0, 0.0, 0.0]);
        assert_eq!(sol.cost, 300.0);
        assert_eq!(tables.cost_to_reach(2, 0.0), Some(300.0));
        assert_eq!(tables.predecessor(2, 0.0), Some(0.0));
        assert_eq!(tables.predecessor(1, 0.0), Some(100.0));
    }

    #[test]
    fn trivial_instance() {
        let inst = Instance::new(
            ideal(100.0, 100.0),
            vec![1.0],
            vec![0.0],
            0.0,
            0.0,
            Discretization {
                h_x: 100.0,
                h_v: 1.0,
            },
        )
        .unwrap();
        let (sol, _) = solve(&inst).unwrap();
        assert_eq!(sol.x, vec![0.0]);
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn backtrack_rejects_unreachable() {
        let (_, tables) = solve(&spike()).unwrap();
        assert!(backtrack(&tables, 450.0).is_err());
        assert!(backtrack(&tables, 0.0).is_ok());
    }

    #[test]
    fn reports_largest_reachable_level() {
        let inst = spike();
        let far = Instance::new(
            *inst.spec(),
            inst.prices().to_vec(),
            inst.consumption().to_vec(),
            0.0,
            450.0,
            inst.disc(),
        )
        .unwrap();
        match solve(&far) {
            Err(Error::Infeasible {
                largest_final_level,
                required,
            }) => {
                // At most 100 kWh of surplus per step is purchasable.
                assert_eq!(largest_final_level, Some(300.0));
                assert_eq!(required, 450.0);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    fn lossy(m: usize) -> Instance {
        Instance::new(
            StorageSpec::with_capacity(1000.0, 700.0),
            vec![0.05; m],
            vec![200.0; m],
            100.0,
            100.0,
            Discretization::default(),
        )
        .unwrap()
    }

    #[test]
    fn budget_matches_geometric_sum() {
        let b = error_budget(&lossy(168)).unwrap();
        let direct: f64 = (1..=168).map(|i| 0.9f64.powi(168 - i)).sum();
        assert!((b.eps_tot - direct).abs() < 1e-9);
        assert!((b.eps_tot - 10.0).abs() < 1e-6);
        assert!(b.eps_tot < 168.0);
        assert!((b.cost_gap - 168.0 * 0.05).abs() < 1e-12);

        assert!((error_budget(&lossy(1)).unwrap().eps_tot - 1.0).abs() < 1e-12);

        let id = Instance::new(
            ideal(100.0, 100.0),
            vec![1.0; 7],
            vec![0.0; 7],
            0.0,
            0.0,
            Discretization::default(),
        )
        .unwrap();
        assert_eq!(error_budget(&id).unwrap().eps_tot, 7.0);
    }

    #[test]
    fn margin_shrinks_capacity() {
        let shrunk = apply_capacity_margin(&lossy(168)).unwrap();
        assert_eq!(shrunk.spec().cap_max, 990.0);

        // eps_tot = 1 - tiny < h_V = 5, so the floor drops one grid step.
        let inst = Instance::new(
            StorageSpec::with_capacity(1000.0, 700.0),
            vec![0.05],
            vec![200.0],
            100.0,
            100.0,
            Discretization {
                h_x: 100.0,
                h_v: 5.0,
            },
        )
        .unwrap();
        assert_eq!(apply_capacity_margin(&inst).unwrap().spec().cap_max, 995.0);

        let tight = Instance::new(
            StorageSpec::with_capacity(100.0, 300.0),
            vec![0.05; 500],
            vec![200.0; 500],
            100.0,
            100.0,
            Discretization::default(),
        )
        .unwrap();
        assert!(matches!(
            apply_capacity_margin(&tight),
            Err(Error::MarginInfeasible { .. })
        ));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = StorageSpec {
            cap_min: 0.2,
            cap_max: 0.8,
            ..ideal(0.8, 0.0)
        };
        let inst = Instance::new(
            spec,
            vec![1.0],
            vec![0.0],
            0.5,
            0.5,
            Discretization { h_x: 1.0, h_v: 1.0 },
        )
        .unwrap();
        assert!(matches!(solve(&inst), Err(Error::InvalidArgument(_))));
    }
}
