//! Random networks in the style of the reference experiments: node prices iid
//! uniform on a support, arrival rates iid uniform, routing rows from
//! normalized iid uniform weights.

use amod_core::NetworkSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandOpts {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub wtp_max: f64,
}

impl Default for DemandOpts {
    fn default() -> Self {
        DemandOpts { theta_lo: 0.5, theta_hi: 1.5, wtp_max: 40.0 }
    }
}

/// Deterministic in `seed`. `m` must be at least 2.
pub fn generate_network(m: usize, price_support: (f64, f64), demand: &DemandOpts, seed: u64) -> NetworkSpec {
    assert!(m >= 2, "need at least two nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = price_support;
    let uniform = |a: f64, b: f64, rng: &mut ChaCha8Rng| if b > a { rng.random_range(a..b) } else { a };
    let prices = (0..m).map(|_| uniform(lo, hi, &mut rng)).collect();
    let arrival_rates = (0..m).map(|_| uniform(demand.theta_lo, demand.theta_hi, &mut rng)).collect();
    let routing = (0..m)
        .map(|i| {
            let weights: Vec<f64> =
                (0..m).map(|j| if j == i { 0.0 } else { rng.random::<f64>() + f64::EPSILON }).collect();
            let total: f64 = weights.iter().sum();
            let mut row: Vec<f64> = weights.iter().map(|w| w / total).collect();
            // put the rounding residue on the largest entry so the row sums to 1
            let err = 1.0 - row.iter().sum::<f64>();
            let jmax = (0..m).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
            row[jmax] += err;
            row
        })
        .collect();
    NetworkSpec { m, prices, arrival_rates, routing, wtp_max: demand.wtp_max }
}
