//! Seeded generator of small instances shared by the property suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storctl::model::{Discretization, Instance, LossFunction, StorageSpec};

/// Knobs for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    /// `beta = 0`, `eta = 1`, and every quantity on the `h_V` grid.
    pub lossless: bool,
}

/// At most 5 steps, at most 4 purchase values, at most 50 fill levels.
pub fn random_instance(rng: &mut ChaCha8Rng, opts: GenOptions) -> Instance {
    let m = rng.gen_range(1..=5);
    let h_v = [1.0, 2.0, 5.0, 10.0][rng.gen_range(0..4)];
    let h_x = h_v * [1.0, 5.0, 10.0, 20.0][rng.gen_range(0..4)];
    let n_inputs = rng.gen_range(1..=4);
    let buy_min = h_x * rng.gen_range(0..=1) as f64;
    let buy_max = buy_min + h_x * (n_inputs - 1) as f64;
    let levels = rng.gen_range(2..=50);
    let cap_min = h_v * rng.gen_range(0..=2) as f64;
    let cap_max = cap_min + h_v * (levels - 1) as f64;
    let (eta_in, eta_out, beta) = if opts.lossless {
        (1.0, 1.0, 0.0)
    } else {
        (
            rng.gen_range(0.8..=1.0),
            rng.gen_range(0.8..=1.0),
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0..0.2)
            },
        )
    };
    let charge_max = h_v * rng.gen_range(1..=levels) as f64;
    let spec = StorageSpec {
        cap_min,
        cap_max,
        buy_min,
        buy_max,
        eta_in,
        eta_out,
        loss: LossFunction::Linear { beta },
        charge_max,
    };
    let prices = (0..m)
        .map(|_| (rng.gen_range(1..=100) as f64) / 100.0)
        .collect();
    let consumption = (0..m)
        .map(|_| {
            let z = rng.gen_range(0.0..=buy_max.max(h_v));
            if opts.lossless {
                (z / h_v).floor() * h_v
            } else {
                z
            }
        })
        .collect();
    let span = cap_max - cap_min;
    let mut v_init = cap_min + rng.gen_range(0.0..=span);
    if opts.lossless {
        v_init = (v_init / h_v).floor() * h_v;
    }
    let v_final = cap_min + h_v * (rng.gen_range(0.0..=0.5 * span) / h_v).floor();
    Instance::new(
        spec,
        prices,
        consumption,
        v_init,
        v_final,
        Discretization { h_x, h_v },
    )
    .expect("generated instance is valid")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic hourly €/kWh prices for 2018 with daily and weekly cycles.
pub fn synthetic_year() -> storctl::data::PriceSeries {
    let start = chrono::NaiveDate::from_ymd_opt(2018, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut r = rng(2018);
    let tau = std::f64::consts::TAU;
    let prices = (0..8760)
        .map(|t| {
            let t = t as f64;
            0.35 + 0.1 * (tau * t / 24.0).sin()
                + 0.04 * (tau * t / 168.0).cos()
                + r.gen_range(-0.05..0.05)
        })
        .collect();
    storctl::data::PriceSeries::hourly(start, prices, storctl::data::PriceUnit::EurPerKwh)
}
