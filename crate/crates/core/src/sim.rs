//! Monte Carlo simulation of one vehicle's (battery level, price) chain.
//!
//! Each decision epoch the vehicle is at a node with price `p`. Charging one
//! unit takes one period and keeps the vehicle at the node (same price); a
//! trip takes `tau` periods, uses one unit and lands at a node with a fresh
//! iid price. Replicates are independent: replicate `r` draws prices from
//! ChaCha8 stream `2r` and detour decisions from stream `2r + 1` of the
//! master seed, so runs are reproducible and policies compared under the
//! same seed see the same price sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Execution};
use crate::model::{validate_sim, FleetSpec, PriceDistribution, SimConfig};
use crate::policy::ChargingPolicy;

/// Confidence level of every reported interval.
pub const CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleState {
    pub v: u32,
    pub p: f64,
}

/// Mean over replicates with a Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub ci_half: f64,
    pub replicates: u32,
    /// Periods measured per replicate (after burn-in), averaged.
    pub periods: f64,
    pub seed: u64,
}

impl SimEstimate {
    pub fn from_replicates(values: &[f64], periods: f64, seed: u64) -> Self {
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let ci_half = if n < 2 {
            f64::INFINITY
        } else {
            let dev: Vec<f64> = values.iter().map(|x| (x - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.5 + CONFIDENCE / 2.0);
            t * (var / n as f64).sqrt()
        };
        SimEstimate { mean, ci_half, replicates: n as u32, periods, seed }
    }

    pub fn covers(&self, x: f64) -> bool {
        (self.mean - x).abs() <= self.ci_half
    }
}

/// Detour to the external charging node, taken from level 1.
#[derive(Debug, Clone, Copy)]
struct Detour {
    p_s: f64,
    gamma: f64,
    beta: f64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    regular_cost: f64,
    regular_units: u64,
    detours: u64,
    detour_cost: f64,
    charge_periods: u64,
    periods: u64,
    level_periods: Vec<u64>,
    level_charges: Vec<u64>,
}

fn replicate_rngs(seed: u64, rep: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut prices = ChaCha8Rng::seed_from_u64(seed);
    prices.set_stream(2 * rep);
    let mut decisions = ChaCha8Rng::seed_from_u64(seed);
    decisions.set_stream(2 * rep + 1);
    (prices, decisions)
}

fn run_replicate(
    policy: &ChargingPolicy,
    detour: Option<Detour>,
    cfg: &SimConfig,
    rep: u64,
) -> Result<Tally> {
    let vm = policy.v_max;
    let tau = u64::from(policy.tau);
    let dist = &policy.distribution;
    let (mut prices, mut decisions) = replicate_rngs(cfg.seed, rep);
    let mut tally = Tally {
        level_periods: vec![0; vm as usize + 1],
        level_charges: vec![0; vm as usize + 1],
        ..Tally::default()
    };
    let mut state = VehicleState { v: vm, p: dist.sample(&mut prices) };
    let mut t = 0u64;
    while t < cfg.horizon {
        let measured = t >= cfg.burn_in;
        let VehicleState { v, p } = state;
        if policy.charges(v, p) {
            if measured {
                tally.regular_cost += p;
                tally.regular_units += 1;
                tally.charge_periods += 1;
                tally.periods += 1;
                tally.level_periods[v as usize] += 1;
                tally.level_charges[v as usize] += 1;
            }
            state.v += 1;
            t += 1;
            continue;
        }
        if v == 0 {
            return Err(Error::StrandedVehicle { price: p, threshold: policy.threshold(0) });
        }
        if let Some(d) = detour.filter(|d| v == 1 && d.gamma > 0.0) {
            if decisions.random::<f64>() < d.gamma {
                let span = 2 * tau + u64::from(vm);
                if measured {
                    tally.detours += 1;
                    tally.detour_cost +=
                        f64::from(vm) * d.p_s + (2.0 + 2.0 * tau as f64) * d.beta;
                    tally.charge_periods += u64::from(vm);
                    tally.periods += span;
                    tally.level_periods[1] += tau;
                    tally.level_periods[vm as usize] += tau;
                    for lvl in 0..vm as usize {
                        tally.level_periods[lvl] += 1;
                    }
                }
                state = VehicleState { v: vm - 1, p: dist.sample(&mut prices) };
                t += span;
                continue;
            }
        }
        if measured {
            tally.periods += tau;
            tally.level_periods[v as usize] += tau;
        }
        state = VehicleState { v: v - 1, p: dist.sample(&mut prices) };
        t += tau;
    }
    Ok(tally)
}

fn run_all(
    policy: &ChargingPolicy,
    detour: Option<Detour>,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<Vec<Tally>> {
    validate_sim(cfg).into_result()?;
    exec.try_map(cfg.replicates as usize, |r| run_replicate(policy, detour, cfg, r as u64))
}

fn mean_periods(tallies: &[Tally]) -> f64 {
    tallies.iter().map(|t| t.periods as f64).sum::<f64>() / tallies.len() as f64
}

/// Output of [`simulate_policy`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEstimate {
    /// Average price per unit bought.
    pub p_avg: SimEstimate,
    /// Share of periods spent charging.
    pub charging_fraction: SimEstimate,
    /// Share of periods at each battery level, pooled over replicates.
    pub soc_histogram: Vec<f64>,
    /// Probability that a charge happens at level `v`, for `v = 0..v_max`.
    pub charge_level_probs: Vec<SimEstimate>,
}

pub fn simulate_policy(
    policy: &ChargingPolicy,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<PolicyEstimate> {
    let tallies = run_all(policy, None, cfg, exec)?;
    let periods = mean_periods(&tallies);
    let per_rep = |f: &dyn Fn(&Tally) -> f64| -> SimEstimate {
        let xs: Vec<f64> = tallies.iter().map(f).collect();
        SimEstimate::from_replicates(&xs, periods, cfg.seed)
    };
    let p_avg = per_rep(&|t| t.regular_cost / t.regular_units as f64);
    let charging_fraction = per_rep(&|t| t.charge_periods as f64 / t.periods as f64);
    let total: u64 = tallies.iter().map(|t| t.periods).sum();
    let soc_histogram = (0..=policy.v_max as usize)
        .map(|v| tallies.iter().map(|t| t.level_periods[v]).sum::<u64>() as f64 / total as f64)
        .collect();
    let charge_level_probs = (0..policy.v_max as usize)
        .map(|v| per_rep(&|t| t.level_charges[v] as f64 / t.regular_units as f64))
        .collect();
    Ok(PolicyEstimate { p_avg, charging_fraction, soc_histogram, charge_level_probs })
}

/// Output of [`simulate_rebalancing`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RebalanceEstimate {
    pub gamma: f64,
    /// Energy plus detour overhead per unit used on customer trips.
    pub cost: SimEstimate,
    /// Share of customer-trip units bought at regular nodes.
    pub measured_n: SimEstimate,
}

/// Simulates `policy` when a vehicle at level 1 that declines to charge is
/// sent to the external node with probability `gamma`. The detour takes
/// `tau` periods out, `v_max` periods charging to full at `p_s` and `tau`
/// periods back, and is charged `v_max p_s + (2 + 2 tau) beta`. Use
/// [`crate::policy::rebalancing_thresholds`] for the matching thresholds.
pub fn simulate_rebalancing(
    policy: &ChargingPolicy,
    p_s: f64,
    gamma: f64,
    fleet: &FleetSpec,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<RebalanceEstimate> {
    if policy.v_max < 3 {
        return Err(Error::BatteryTooSmall { v_max: policy.v_max, min: 3 });
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Validation(vec![format!("gamma = {gamma} outside [0, 1]")]));
    }
    if fleet.v_max != policy.v_max || fleet.tau != policy.tau {
        return Err(Error::Validation(vec!["fleet and policy disagree on v_max or tau".into()]));
    }
    let detour = Detour { p_s, gamma, beta: fleet.beta() };
    let tallies = run_all(policy, Some(detour), cfg, exec)?;
    let periods = mean_periods(&tallies);
    let delivered = |t: &Tally| {
        (t.regular_units + t.detours * u64::from(policy.v_max - 2)) as f64
    };
    let costs: Vec<f64> = tallies
        .iter()
        .map(|t| (t.regular_cost + t.detour_cost) / delivered(t))
        .collect();
    let shares: Vec<f64> = tallies.iter().map(|t| t.regular_units as f64 / delivered(t)).collect();
    Ok(RebalanceEstimate {
        gamma,
        cost: SimEstimate::from_replicates(&costs, periods, cfg.seed),
        measured_n: SimEstimate::from_replicates(&shares, periods, cfg.seed),
    })
}

/// Output of [`brute_force_threshold_search`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    /// Best thresholds for levels `1..v_max` (empty for `v_max = 1`).
    pub best: Vec<f64>,
    /// Reference thresholds from the recursion, same levels.
    pub reference: Vec<f64>,
    pub grid_step: f64,
    pub candidates: usize,
    /// Cost of `best` during the search.
    pub search_cost: SimEstimate,
    /// `best` and reference re-evaluated on an independent seed.
    pub best_cost: SimEstimate,
    pub reference_cost: SimEstimate,
    /// Paired per-replicate `reference - best` on the independent seed;
    /// positive means the searched thresholds did better.
    pub advantage: SimEstimate,
}

fn monotone_vectors(grid: &[f64], len: usize) -> Vec<Vec<f64>> {
    fn rec(grid: &[f64], len: usize, max_idx: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for k in 0..=max_idx {
            cur.push(grid[k]);
            rec(grid, len, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(grid, len, grid.len() - 1, &mut Vec::with_capacity(len), &mut out);
    out
}

fn per_unit_costs(policy: &ChargingPolicy, cfg: &SimConfig) -> Result<Vec<f64>> {
    Ok(run_all(policy, None, cfg, Execution::Sequential)?
        .iter()
        .map(|t| t.regular_cost / t.regular_units as f64)
        .collect())
}

/// Exhaustive search over non-increasing threshold vectors on a uniform grid
/// of `grid_points` prices spanning the support. Every candidate is simulated
/// with the same seed; the winner and the reference thresholds are then
/// re-run on seed `cfg.seed + 1` for an unbiased comparison.
pub fn brute_force_threshold_search(
    dist: &PriceDistribution,
    reference: &ChargingPolicy,
    grid_points: usize,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<BruteForceResult> {
    let v_max = reference.v_max;
    if !(1..=4).contains(&v_max) {
        return Err(Error::Validation(vec![format!("brute force needs 1 <= v_max <= 4, got {v_max}")]));
    }
    if !(2..=21).contains(&grid_points) {
        return Err(Error::Validation(vec![format!("grid_points = {grid_points} outside [2, 21]")]));
    }
    validate_sim(cfg).into_result()?;
    let (lo, hi) = dist.support();
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|k| lo + step * k as f64).collect();
    let free = v_max as usize - 1;
    let candidates = monotone_vectors(&grid, free);
    let build = |levels: &[f64]| {
        ChargingPolicy::from_thresholds(dist.clone(), levels, lo, reference.tau)
    };

    let scores = exec.try_map(candidates.len(), |k| {
        let costs = per_unit_costs(&build(&candidates[k]), cfg)?;
        Ok::<_, Error>(pairwise_sum(&costs) / costs.len() as f64)
    })?;
    let best_idx = (0..candidates.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .expect("at least one candidate");
    let best = candidates[best_idx].clone();
    let search_costs = per_unit_costs(&build(&best), cfg)?;

    let holdout = SimConfig { seed: cfg.seed.wrapping_add(1), ..*cfg };
    let reference_levels = reference.thresholds[1..v_max as usize].to_vec();
    let ref_policy = build(&reference_levels);
    let best_costs = per_unit_costs(&build(&best), &holdout)?;
    let ref_costs = per_unit_costs(&ref_policy, &holdout)?;
    let diffs: Vec<f64> = ref_costs.iter().zip(&best_costs).map(|(r, b)| r - b).collect();
    let periods = (cfg.horizon - cfg.burn_in) as f64;
    Ok(BruteForceResult {
        best,
        reference: reference_levels,
        grid_step: step,
        candidates: candidates.len(),
        search_cost: SimEstimate::from_replicates(&search_costs, periods, cfg.seed),
        best_cost: SimEstimate::from_replicates(&best_costs, periods, holdout.seed),
        reference_cost: SimEstimate::from_replicates(&ref_costs, periods, holdout.seed),
        advantage: SimEstimate::from_replicates(&diffs, periods, holdout.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::thresholds_uniform;

    fn cfg(seed: u64, horizon: u64, replicates: u32) -> SimConfig {
        SimConfig { seed, horizon, replicates, burn_in: 1_000 }
    }

    #[test]
    fn deterministic_in_seed() {
        let p = thresholds_uniform(0.8, 3.0, 4, 10).unwrap();
        let a = simulate_policy(&p, &cfg(5, 20_000, 4), Execution::Parallel).unwrap();
        let b = simulate_policy(&p, &cfg(5, 20_000, 4), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let c = simulate_policy(&p, &cfg(6, 20_000, 4), Execution::Sequential).unwrap();
        assert_ne!(a.p_avg.mean, c.p_avg.mean);
    }

    #[test]
    fn zero_variance_prices() {
        let p = thresholds_uniform(2.0, 2.0, 9, 10).unwrap();
        let est = simulate_policy(&p, &cfg(1, 50_000, 4), Execution::Sequential).unwrap();
        assert_eq!(est.p_avg.mean, 2.0);
        assert!((est.charging_fraction.mean - 1.0 / 11.0).abs() < 1e-3);
    }

    #[test]
    fn single_unit_battery_pays_mean() {
        let p = thresholds_uniform(0.8, 3.0, 1, 10).unwrap();
        let est = simulate_policy(&p, &cfg(2, 100_000, 16), Execution::Parallel).unwrap();
        assert!((est.p_avg.mean - 1.9).abs() < 0.01, "{:?}", est.p_avg);
        assert!((est.charge_level_probs[0].mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_sums_to_one() {
        let p = thresholds_uniform(0.8, 3.0, 5, 3).unwrap();
        let est = simulate_policy(&p, &cfg(3, 20_000, 4), Execution::Parallel).unwrap();
        assert!((est.soc_histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let pc: f64 = est.charge_level_probs.iter().map(|e| e.mean).sum();
        assert!((pc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ci_for_constant_replicates_is_zero() {
        let e = SimEstimate::from_replicates(&[1.0, 1.0, 1.0], 10.0, 0);
        assert_eq!((e.mean, e.ci_half), (1.0, 0.0));
        let e = SimEstimate::from_replicates(&[0.0, 2.0], 10.0, 0);
        // t_{0.995, 1} = 63.657
        assert!((e.ci_half - 63.657).abs() < 1e-3);
    }

    #[test]
    fn monotone_enumeration_counts() {
        let g: Vec<f64> = (0..21).map(f64::from).collect();
        assert_eq!(monotone_vectors(&g, 0).len(), 1);
        assert_eq!(monotone_vectors(&g, 1).len(), 21);
        assert_eq!(monotone_vectors(&g, 2).len(), 231);
        assert!(monotone_vectors(&g, 2).iter().all(|v| v[0] >= v[1]));
    }

    #[test]
    fn rebalancing_rejects_small_battery() {
        let fleet = FleetSpec { beta0: 0.1, xi: 0.003, v_max: 2, tau: 10, p_s: Some(0.6) };
        let p = thresholds_uniform(0.8, 3.0, 2, 10).unwrap();
        assert!(matches!(
            simulate_rebalancing(&p, 0.6, 0.5, &fleet, &cfg(1, 10_000, 2), Execution::Sequential),
            Err(Error::BatteryTooSmall { .. })
        ));
    }
}
