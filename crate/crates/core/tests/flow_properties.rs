use amod_core::flow::{self, verify_kkt};
use amod_core::{FleetSpec, NetworkSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fleet(v_max: u32) -> FleetSpec {
    FleetSpec { beta0: 0.1, xi: 0.003, v_max, tau: 10, p_s: None }
}

fn random_network(m: usize, seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prices = (0..m).map(|_| rng.random_range(0.8..3.0)).collect();
    let arrival_rates = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
    let routing = (0..m)
        .map(|i| {
            let w: Vec<f64> = (0..m).map(|j| if i == j { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect();
    NetworkSpec { m, prices, arrival_rates, routing, wtp_max: 40.0 }
}

fn symmetric(m: usize, price: f64) -> NetworkSpec {
    let routing = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 0.0 } else { 1.0 / (m - 1) as f64 }).collect())
        .collect();
    NetworkSpec { m, prices: vec![price; m], arrival_rates: vec![1.0; m], routing, wtp_max: 40.0 }
}

#[test]
fn ten_node_instances_certify() {
    for seed in 0..5 {
        let net = random_network(10, seed);
        for v_max in [1, 6, 12] {
            let fl = fleet(v_max);
            let (problem, sol) = flow::optimize(&net, &fl).unwrap();
            let report = verify_kkt(&problem, &sol);
            assert!(report.within(1e-6), "{report}");
            assert!((report.primal_objective - report.dual_objective).abs() <= 1e-6 * (1.0 + sol.profit.abs()));

            // prices are the ones implied by the demand duals
            let implied = flow::prices_from_duals(&sol.lambda, &net);
            for (a, b) in sol.prices.iter().zip(&implied) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            // profit depends on prices only
            let identity = flow::profit_identity(&sol.prices, &net);
            assert!((identity - sol.profit).abs() < 1e-6 * (1.0 + sol.profit.abs()));
            // reported profit is the objective at the primal point
            assert!((problem.profit(&sol.x) - sol.profit).abs() <= 1e-8 * sol.profit.abs().max(1.0));

            let bound = flow::price_upper_bound(&net, &fl);
            for (l, u) in sol.prices.iter().zip(&bound) {
                assert!(*l <= u + 1e-6);
            }
            assert!(sol.x.iter().all(|&x| x >= -1e-9));
        }
    }
}

#[test]
fn equal_prices_need_no_rebalancing() {
    for m in [2, 3, 5] {
        for v_max in [1, 3, 7] {
            let (problem, sol) = flow::optimize(&symmetric(m, 1.5), &fleet(v_max)).unwrap();
            assert!(sol.total_rebalancing(&problem.index) <= 1e-6);
        }
    }
}

#[test]
fn costlier_electricity_never_raises_profit() {
    let base = random_network(6, 11);
    let fl = fleet(5);
    let (_, before) = flow::optimize(&base, &fl).unwrap();
    let mut dearer = base.clone();
    for p in &mut dearer.prices {
        *p += 0.3;
    }
    let (_, after) = flow::optimize(&dearer, &fl).unwrap();
    assert!(after.profit <= before.profit + 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_networks_satisfy_optimality(m in 2usize..5, v_max in 1u32..5, seed in 0u64..1000) {
        let net = random_network(m, seed);
        let (problem, sol) = flow::optimize(&net, &fleet(v_max)).unwrap();
        let report = verify_kkt(&problem, &sol);
        prop_assert!(report.within(1e-6), "{}", report);
        let idx = problem.index;
        for (i, j) in idx.pairs() {
            let served: f64 = (1..=v_max as usize).map(|v| sol.x[idx.trip(i, j, v)]).sum();
            let induced = net.arrival_rates[i] * net.routing[i][j] * (1.0 - sol.prices[i] / net.wtp_max);
            prop_assert!((served - induced).abs() <= 1e-6 * (1.0 + induced.abs()));
        }
        let identity = flow::profit_identity(&sol.prices, &net);
        prop_assert!((identity - sol.profit).abs() < 1e-6 * (1.0 + sol.profit.abs()));
    }
}
