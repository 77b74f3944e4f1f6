//! Randomized checks of the dynamic program against enumeration and the
//! exact dynamics.

mod common;

use common::{random_instance, rng, GenOptions};
use storctl::model::{cost_of, simulate, Instance, StorageSpec};
use storctl::oracle::{self, DynamicsMode, OracleConfig};
use storctl::rbdp;

const CASES: u64 = 300;
const NODES: u64 = 1_000_000;

fn lossy(seed: u64) -> Instance {
    random_instance(&mut rng(seed), GenOptions { lossless: false })
}

fn lossless(seed: u64) -> Instance {
    random_instance(&mut rng(seed), GenOptions { lossless: true })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn without_final_level(inst: &Instance) -> Instance {
    Instance::new(
        *inst.spec(),
        inst.prices().to_vec(),
        inst.consumption().to_vec(),
        inst.v_init(),
        inst.spec().cap_min,
        inst.disc(),
    )
    .unwrap()
}

fn rounded_oracle() -> OracleConfig {
    OracleConfig {
        mode: DynamicsMode::Rounded,
        max_nodes: NODES,
    }
}

fn exact_oracle() -> OracleConfig {
    OracleConfig {
        mode: DynamicsMode::Exact,
        max_nodes: NODES,
    }
}

#[test]
fn rounded_tables_match_enumeration() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let brute = oracle::level_costs(&inst, NODES).unwrap();
        let Ok((_, tables)) = rbdp::solve(&without_final_level(&inst)) else {
            assert!(brute.is_empty(), "seed {seed}");
            continue;
        };
        let dp = tables.final_costs();
        assert_eq!(
            dp.len(),
            brute.len(),
            "seed {seed}: reachable levels differ"
        );
        for ((l1, c1), (l2, c2)) in dp.iter().zip(&brute) {
            assert_eq!(l1, l2, "seed {seed}");
            assert!(
                close(*c1, *c2),
                "seed {seed}: level {l1}: dp {c1} vs enumeration {c2}"
            );
        }
    }
}

#[test]
fn rounded_optimum_matches_rounded_oracle() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let dp = rbdp::solve(&inst);
        let brute = oracle::solve(&inst, &rounded_oracle());
        match (dp, brute) {
            (Ok((a, _)), Ok(b)) => {
                assert!(
                    close(a.cost, b.cost),
                    "seed {seed}: {} vs {}",
                    a.cost,
                    b.cost
                );
            }
            (Err(a), Err(b)) => {
                assert!(a.is_infeasibility() && b.is_infeasibility(), "seed {seed}")
            }
            (a, b) => panic!(
                "seed {seed}: dp {:?} vs oracle {:?}",
                a.map(|s| s.0.cost),
                b.map(|s| s.cost)
            ),
        }
    }
}

#[test]
fn lossless_on_grid_is_exact() {
    for seed in 0..CASES {
        let inst = lossless(seed);
        let report = oracle::cross_check(&inst, NODES);
        match report {
            Ok(r) => {
                assert_eq!(
                    r.rbdp_cost,
                    r.oracle_cost,
                    "seed {seed}\n{}",
                    r.counterexample(&inst)
                );
                assert!(r.rbdp_exact_feasible, "seed {seed}");
            }
            Err(e) => assert!(e.is_infeasibility(), "seed {seed}: {e}"),
        }
    }
}

#[test]
fn margin_solutions_are_exactly_feasible_and_bounded_below() {
    let mut solved = 0;
    for seed in 0..CASES {
        let inst = lossy(seed);
        let Ok(shrunk) = rbdp::apply_capacity_margin(&inst) else {
            continue;
        };
        let Ok((sol, _)) = rbdp::solve(&shrunk) else {
            continue;
        };
        solved += 1;
        let sim = simulate(&inst, &sol.x).unwrap();
        assert!(sim.feasible(), "seed {seed}: {:?}", sim.violations);
        let exact = oracle::solve(&inst, &exact_oracle()).unwrap();
        assert!(
            exact.cost <= sol.cost + 1e-9,
            "seed {seed}: oracle {} above margin solution {}",
            exact.cost,
            sol.cost
        );
    }
    assert!(solved >= 50, "only {solved} margin instances solved");
}

#[test]
fn exact_levels_overshoot_rounded_within_budget() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let Ok((sol, _)) = rbdp::solve(&inst) else {
            continue;
        };
        let sim = simulate(&inst, &sol.x).unwrap();
        let r = inst.spec().loss.retention().unwrap();
        let h = inst.disc().h_v;
        let mut bound = 0.0;
        for t in 0..inst.horizon() {
            bound = r * bound + h;
            let gap = sim.trajectory[t] - sol.levels[t];
            assert!(
                gap >= -1e-9,
                "seed {seed} t={t}: exact below rounded by {gap}"
            );
            assert!(
                gap <= bound + 1e-9,
                "seed {seed} t={t}: gap {gap} exceeds {bound}"
            );
            assert!(bound <= (t + 1) as f64 * h + 1e-12);
        }
    }
}

#[test]
fn cost_never_increases_with_capacity() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let h = inst.disc().h_v;
        let mut last = f64::INFINITY;
        for extra in 0..4 {
            let bigger = inst
                .with_cap_max(inst.spec().cap_max + extra as f64 * h)
                .unwrap();
            if let Ok((sol, _)) = rbdp::solve(&bigger) {
                assert!(
                    sol.cost <= last + 1e-9,
                    "seed {seed}: {} after {last}",
                    sol.cost
                );
                last = sol.cost;
            } else {
                assert!(
                    last.is_infinite(),
                    "seed {seed}: larger capacity became infeasible"
                );
            }
        }
    }
}

#[test]
fn cost_is_reported_as_the_plain_sum() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        if let Ok((sol, _)) = rbdp::solve(&inst) {
            assert_eq!(
                sol.cost.to_bits(),
                cost_of(inst.prices(), &sol.x).unwrap().to_bits()
            );
        }
    }
}

#[test]
fn work_is_bounded_by_table_size() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let Ok((_, tables)) = rbdp::solve(&inst) else {
            continue;
        };
        let n = tables.grid().len() as u64;
        let k = tables.inputs().len() as u64;
        let m = inst.horizon() as u64;
        // Every (level, purchase) pair lands on at most one target level.
        assert!(tables.evaluations() <= k + (m - 1) * n * k, "seed {seed}");
    }
}

fn big_instance() -> Instance {
    let spec = StorageSpec::with_capacity(2000.0, 1200.0);
    let m = 48;
    let prices = (0..m)
        .map(|t| 0.2 + 0.1 * ((t as f64) * 0.7).sin())
        .collect();
    Instance::new(
        spec,
        prices,
        vec![200.0; m],
        100.0,
        100.0,
        storctl::model::Discretization {
            h_x: 100.0,
            h_v: 1.0,
        },
    )
    .unwrap()
}

#[test]
fn deterministic_across_runs_and_thread_counts() {
    let inst = big_instance();
    assert!(rbdp::StateGrid::for_instance(&inst).unwrap().len() >= 1024);
    let (a, _) = rbdp::solve(&inst).unwrap();
    let (b, _) = rbdp::solve(&inst).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let (c, _) = single.install(|| rbdp::solve(&inst)).unwrap();
    let json = |s: &storctl::model::Solution| serde_json::to_string(s).unwrap();
    assert_eq!(json(&a), json(&b));
    assert_eq!(json(&a), json(&c));
    assert_eq!(a.cost.to_bits(), c.cost.to_bits());
}

/// Plain enumeration of every purchase sequence, independent of the
/// oracle's pruning and ordering.
fn brute_force(inst: &Instance) -> Option<f64> {
    let inputs = inst.input_grid();
    let m = inst.horizon();
    let mut best: Option<f64> = None;
    let total = inputs.len().pow(m as u32);
    for code in 0..total {
        let mut c = code;
        let x: Vec<f64> = (0..m)
            .map(|_| {
                let k = inputs[c % inputs.len()];
                c /= inputs.len();
                k
            })
            .collect();
        if simulate(inst, &x).unwrap().feasible() {
            let cost = cost_of(inst.prices(), &x).unwrap();
            if best.is_none_or(|b| cost < b) {
                best = Some(cost);
            }
        }
    }
    best
}

#[test]
fn oracle_agrees_with_unpruned_enumeration() {
    for seed in 0..CASES {
        let inst = lossy(seed);
        let oracle = oracle::solve(&inst, &exact_oracle()).ok().map(|s| s.cost);
        let brute = brute_force(&inst);
        match (oracle, brute) {
            (Some(a), Some(b)) => assert!(close(a, b), "seed {seed}: {a} vs {b}"),
            (None, None) => {}
            other => panic!("seed {seed}: {other:?}"),
        }
    }
}
