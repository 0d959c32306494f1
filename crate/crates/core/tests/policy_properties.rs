use amod_core::model::Config;
use amod_core::policy::*;
use amod_core::{FleetSpec, PriceDistribution, SimConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn thresholds_decrease_inside_support(p_min in 0.0f64..5.0, width in 0.01f64..5.0, v_max in 1u32..60) {
        let p = thresholds_uniform(p_min, p_min + width, v_max, 5).unwrap();
        for v in 1..v_max as usize {
            prop_assert!(p.thresholds[v + 1] <= p.thresholds[v]);
        }
        for c in &p.thresholds {
            prop_assert!(*c >= p_min && *c <= p_min + width);
        }
    }

    #[test]
    fn stationary_identities(p_min in 0.0f64..3.0, width in 0.05f64..4.0, v_max in 1u32..=20, tau in 1u32..=20) {
        let p = thresholds_uniform(p_min, p_min + width, v_max, tau).unwrap();
        let d = stationary_distribution(&p).unwrap();
        prop_assert!((avg_cost_from_distribution(&d, &p) - avg_cost_closed(&p)).abs() <= 1e-10);
        prop_assert!((d.total_mass() - 1.0).abs() <= 1e-10);
        prop_assert!((d.charging_mass() - 1.0 / (1.0 + f64::from(tau))).abs() <= 1e-10);
        prop_assert!(d.max_balance_residual() <= 1e-10);
        let pc: f64 = d.charge_level_probabilities().iter().sum();
        prop_assert!((pc - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn rebalancing_never_costs_more(p_avg_gap in 0.01f64..2.0, frac in 0.0f64..=1.0) {
        let p_min = 0.8;
        let p_avg = p_min + p_avg_gap;
        let b = p_min + frac * 2.0 * p_avg_gap;
        let (n, cost) = approx_rebalanced_cost(b, p_avg, p_min).unwrap();
        prop_assert!((0.0..=1.0).contains(&n));
        prop_assert!(cost <= p_avg + 1e-12 && cost <= b + 1e-12);
        let (_, dearer) = approx_rebalanced_cost((b + 0.01).min(2.0 * p_avg - p_min), p_avg, p_min).unwrap();
        prop_assert!(dearer >= cost - 1e-12);
    }

    #[test]
    fn config_round_trips(beta0 in 0.0f64..1.0, xi in 0.0f64..0.1, v_max in 1u32..40, tau in 1u32..30,
                          lo in 0.0f64..2.0, width in 0.0f64..3.0, seed in any::<u64>()) {
        let cfg = Config {
            network: None,
            fleet: Some(FleetSpec { beta0, xi, v_max, tau, p_s: Some(lo) }),
            prices: Some(PriceDistribution::uniform(lo, lo + width)),
            sim: Some(SimConfig { seed, horizon: 10_000, replicates: 8, burn_in: 100 }),
        };
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }
}

#[test]
fn long_battery_approaches_p_min() {
    let p = thresholds_uniform(0.8, 3.0, 200, 10).unwrap();
    assert!(p.threshold(200) - 0.8 < (p.threshold(20) - 0.8) / 5.0);
}

#[test]
fn spread_lowers_cost() {
    let sigmas: Vec<f64> = (1..=10).map(|k| 0.05 * f64::from(k)).collect();
    let costs = spread_sensitivity(1.9, &sigmas, 0.003).unwrap();
    assert!(costs.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn general_thresholds_track_a_skewed_density() {
    // triangular density on [0, 2] peaking at 0: f(p) = 1 - p/2
    let tri = PriceDistribution::Tabulated { grid: vec![[0.0, 1.0], [2.0, 0.0]] };
    let p = thresholds_general(&tri, 5, 10, &QuadratureOpts::default()).unwrap();
    // C_v = int_0^c p f + (1 - F(c)) c with F(c) = c - c^2/4, int_0^c p f = c^2/2 - c^3/6
    let mut c = 2.0f64;
    for v in 1..=5 {
        c = c * c / 2.0 - c.powi(3) / 6.0 + (1.0 - (c - c * c / 4.0)) * c;
        assert!((p.thresholds[v] - c).abs() < 1e-6, "{v}: {} vs {c}", p.thresholds[v]);
    }
    assert!((p.threshold(1) - 2.0 / 3.0).abs() < 1e-6);
}

#[test]
fn rebalancing_thresholds_lower_all_levels() {
    let base = thresholds_uniform(0.8, 3.0, 9, 10).unwrap();
    let mut prev = base.clone();
    for k in 1..=10 {
        let g = f64::from(k) / 10.0;
        let p = rebalancing_thresholds(0.8, 3.0, 9, 10, g).unwrap();
        for v in 1..=9 {
            assert!(p.threshold(v) <= prev.threshold(v) + 1e-12);
        }
        prev = p;
    }
}

#[test]
fn reference_rebalancing_plan() {
    let fleet = FleetSpec { beta0: 0.1, xi: 0.003, v_max: 9, tau: 10, p_s: Some(0.6) };
    let plan = plan_rebalancing(&fleet, 0.8, 3.0).unwrap();
    assert!((plan.b - 1.17057).abs() < 1e-5);
    assert!((plan.p_avg_r - 1.0667).abs() < 1e-4);
    assert!(plan.p_avg_r <= 0.95 * plan.p_avg);
}
