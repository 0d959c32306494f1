use amod_core::policy::*;
use amod_core::sim::*;
use amod_core::{Execution, FleetSpec, PriceDistribution, SimConfig};

fn cfg(seed: u64, horizon: u64, replicates: u32, tau: u32, v_max: u32) -> SimConfig {
    SimConfig { seed, horizon, replicates, burn_in: SimConfig::default_burn_in(tau, v_max) }
}

fn reference_fleet() -> FleetSpec {
    FleetSpec { beta0: 0.1, xi: 0.003, v_max: 9, tau: 10, p_s: Some(0.6) }
}

#[test]
fn simulated_average_price_matches_closed_form() {
    let p = thresholds_uniform(0.8, 3.0, 9, 10).unwrap();
    let est = simulate_policy(&p, &cfg(7, 200_000, 64, 10, 9), Execution::Parallel).unwrap();
    assert!((est.p_avg.mean - 1.1304).abs() < 0.005, "{:?}", est.p_avg);
    assert!(est.p_avg.covers(avg_cost_closed(&p)));
    assert!(est.charging_fraction.covers(1.0 / 11.0), "{:?}", est.charging_fraction);
}

#[test]
fn charge_level_shares_match_stationary_density() {
    for v_max in 2..=5 {
        let p = thresholds_uniform(0.8, 3.0, v_max, 4).unwrap();
        let expected = stationary_distribution(&p).unwrap().charge_level_probabilities();
        let est = simulate_policy(&p, &cfg(11, 100_000, 64, 4, v_max), Execution::Parallel).unwrap();
        for (v, (e, s)) in expected.iter().zip(&est.charge_level_probs).enumerate() {
            assert!(s.covers(*e), "v_max {v_max}, level {v}: {e} vs {:?}", s);
        }
    }
}

#[test]
fn ci_shrinks_with_replicates() {
    let p = thresholds_uniform(0.8, 3.0, 4, 10).unwrap();
    let small = simulate_policy(&p, &cfg(3, 20_000, 8, 10, 4), Execution::Parallel).unwrap();
    let large = simulate_policy(&p, &cfg(3, 20_000, 128, 10, 4), Execution::Parallel).unwrap();
    assert!(large.p_avg.ci_half < small.p_avg.ci_half / 2.0);
}

#[test]
fn no_rebalancing_is_the_plain_policy() {
    let fleet = reference_fleet();
    let p = thresholds_uniform(0.8, 3.0, 9, 10).unwrap();
    let c = cfg(5, 50_000, 16, 10, 9);
    let plain = simulate_policy(&p, &c, Execution::Parallel).unwrap();
    let reb = simulate_rebalancing(&p, 0.6, 0.0, &fleet, &c, Execution::Parallel).unwrap();
    assert_eq!(reb.cost.mean, plain.p_avg.mean);
    assert_eq!(reb.measured_n.mean, 1.0);
}

#[test]
fn full_rebalancing_costs_b() {
    let fleet = reference_fleet();
    let p = rebalancing_thresholds(0.8, 3.0, 9, 10, 1.0).unwrap();
    let est = simulate_rebalancing(&p, 0.6, 1.0, &fleet, &cfg(5, 50_000, 8, 10, 9), Execution::Parallel).unwrap();
    assert!((est.cost.mean - rebalancing_b(&fleet).unwrap()).abs() < 1e-9);
    assert_eq!(est.measured_n.mean, 0.0);
}

#[test]
fn gamma_sweep_minimum_near_approximation() {
    let fleet = reference_fleet();
    let c = cfg(9, 200_000, 32, 10, 9);
    let best = (0..=10)
        .map(|k| {
            let g = f64::from(k) / 10.0;
            let p = rebalancing_thresholds(0.8, 3.0, 9, 10, g).unwrap();
            simulate_rebalancing(&p, 0.6, g, &fleet, &c, Execution::Parallel).unwrap().cost.mean
        })
        .fold(f64::INFINITY, f64::min);
    assert!((best - 1.0667).abs() < 0.02, "{best}");
}

#[test]
fn brute_force_finds_recursion_thresholds() {
    let d = PriceDistribution::uniform(0.8, 3.0);
    let c = SimConfig { seed: 3, horizon: 100_000, replicates: 16, burn_in: 1_000 };

    let one = brute_force_threshold_search(&d, &thresholds_uniform(0.8, 3.0, 1, 10).unwrap(), 21, &c, Execution::Parallel).unwrap();
    assert!(one.best.is_empty());
    assert!((one.best_cost.mean - 1.9).abs() < 0.02);

    let two = brute_force_threshold_search(&d, &thresholds_uniform(0.8, 3.0, 2, 10).unwrap(), 21, &c, Execution::Parallel).unwrap();
    assert!((two.best[0] - 1.9).abs() <= two.grid_step + 1e-12, "{:?}", two.best);

    let three = brute_force_threshold_search(&d, &thresholds_uniform(0.8, 3.0, 3, 10).unwrap(), 21, &c, Execution::Parallel).unwrap();
    assert!((three.best[0] - 1.9).abs() <= three.grid_step + 1e-12, "{:?}", three.best);
    assert!((three.best[1] - 1.625).abs() <= three.grid_step + 1e-12, "{:?}", three.best);
    assert!(three.advantage.mean <= three.advantage.ci_half);
}

#[test]
fn brute_force_on_flat_prices_is_flat() {
    let d = PriceDistribution::uniform(2.0, 2.0);
    let reference = thresholds_uniform(2.0, 2.0, 3, 10).unwrap();
    let c = SimConfig { seed: 1, horizon: 20_000, replicates: 4, burn_in: 500 };
    let res = brute_force_threshold_search(&d, &reference, 5, &c, Execution::Sequential).unwrap();
    assert_eq!(res.best_cost.mean, 2.0);
    assert_eq!(res.reference_cost.mean, 2.0);
}
