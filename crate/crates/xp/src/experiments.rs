//! Parameter sweeps behind the three result figures.
//!
//! * fig-a: profit and ride prices vs battery capacity over random networks;
//! * fig-b: rebalancing trips per customer trip vs battery capacity;
//! * fig-c: average charging cost vs share charged at regular nodes, from the
//!   quadratic approximation and from simulation.

use std::io::Write;
use std::path::{Path, PathBuf};

use amod_core::flow::{self, FlowSolution};
use amod_core::policy::{
    approx_cost_at, avg_cost_closed, plan_rebalancing, rebalancing_thresholds, RebalancingPlan,
};
use amod_core::sim::{simulate_rebalancing, RebalanceEstimate};
use amod_core::{Execution, FleetSpec, SimConfig};
use serde::Serialize;

use crate::error::{Result, XpError};
use crate::network::{generate_network, DemandOpts};

pub const FIG_A_HEADER: &[&str] = &["v_max", "mean_profit", "min_profit", "max_profit", "mean_price"];
pub const FIG_B_HEADER: &[&str] = &["v_max", "rebalancers_per_trip"];
pub const FIG_C_HEADER: &[&str] = &["n", "approx_cost", "exact_cost", "ci_half"];
/// Customer flow at or below this counts as no demand.
pub const NO_DEMAND: f64 = 1e-9;
pub const SIM_HEADER: &[&str] = &["gamma", "mean_cost", "ci_half", "measured_n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    FigA,
    FigB,
    FigC,
    Custom,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub networks: usize,
    pub m: usize,
    pub price_support: (f64, f64),
    /// Inclusive battery-capacity sweep.
    pub v_max_range: (u32, u32),
    /// Fleet parameters; `v_max` is overridden by the sweep, and is the
    /// capacity used by fig-c.
    pub fleet: FleetSpec,
    pub demand: DemandOpts,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub sim: SimConfig,
    pub gammas: Vec<f64>,
    pub exec: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fleet = FleetSpec { beta0: 0.1, xi: 0.003, v_max: 9, tau: 10, p_s: Some(0.6) };
        ExperimentConfig {
            experiment: ExperimentId::Custom,
            networks: 300,
            m: 10,
            price_support: (0.8, 3.0),
            v_max_range: (1, 12),
            demand: DemandOpts::default(),
            out_dir: PathBuf::from("out"),
            seed: 1,
            sim: SimConfig {
                seed: 1,
                horizon: 200_000,
                replicates: 64,
                burn_in: SimConfig::default_burn_in(fleet.tau, fleet.v_max),
            },
            gammas: (0..=10).map(|k| f64::from(k) / 10.0).collect(),
            exec: Execution::default(),
            fleet,
        }
    }
}

impl ExperimentConfig {
    pub fn v_max_values(&self) -> Vec<u32> {
        (self.v_max_range.0..=self.v_max_range.1).collect()
    }

    /// Seed of the `k`-th random network.
    pub fn network_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.networks == 0 {
            problems.push("networks must be at least 1".to_string());
        }
        if self.m < 2 {
            problems.push(format!("m = {} must be at least 2", self.m));
        }
        let (lo, hi) = self.v_max_range;
        if lo == 0 || hi < lo {
            problems.push(format!("v_max range {lo}..={hi} is empty or starts at 0"));
        }
        let (p_lo, p_hi) = self.price_support;
        if !(p_lo >= 0.0 && p_hi >= p_lo) {
            problems.push(format!("price support [{p_lo}, {p_hi}] is invalid"));
        }
        if self.gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
            problems.push("gammas must lie in [0, 1]".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(amod_core::Error::Validation(problems).into())
        }
    }
}

/// Solution summary of one (network, capacity) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub network: usize,
    pub v_max: u32,
    pub profit: f64,
    pub prices: Vec<f64>,
    pub trips: f64,
    pub rebalancing: f64,
}

fn summarize(network: usize, v_max: u32, sol: &FlowSolution, index: &flow::VarIndex) -> SweepPoint {
    SweepPoint {
        network,
        v_max,
        profit: sol.profit,
        prices: sol.prices.clone(),
        trips: sol.total_trips(index),
        rebalancing: sol.total_rebalancing(index),
    }
}

/// Solves every network at every capacity. Results are ordered by capacity,
/// then network.
pub fn sweep_networks(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let caps = cfg.v_max_values();
    let nets: Vec<_> = (0..cfg.networks)
        .map(|k| generate_network(cfg.m, cfg.price_support, &cfg.demand, cfg.network_seed(k)))
        .collect();
    let tasks = caps.len() * cfg.networks;
    cfg.exec.try_map(tasks, |t| {
        let v_max = caps[t / cfg.networks];
        let k = t % cfg.networks;
        let fleet = cfg.fleet.with_v_max(v_max);
        let wrap = |source| XpError::Network { network: k, seed: cfg.network_seed(k), v_max, source };
        let (problem, sol) = flow::optimize(&nets[k], &fleet).map_err(wrap)?;
        Ok(summarize(k, v_max, &sol, &problem.index))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigARow {
    pub v_max: u32,
    pub mean_profit: f64,
    pub min_profit: f64,
    pub max_profit: f64,
    /// Ride price averaged over nodes and networks.
    pub mean_price: f64,
    /// Ride price at each node of the first network.
    pub node_prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigBRow {
    pub v_max: u32,
    /// Mean over networks of (rebalancing flow / customer flow); NaN when a
    /// network has no customer flow.
    pub rebalancers_per_trip: f64,
}

fn by_capacity(points: &[SweepPoint]) -> Vec<(u32, Vec<&SweepPoint>)> {
    let mut caps: Vec<u32> = points.iter().map(|p| p.v_max).collect();
    caps.sort_unstable();
    caps.dedup();
    caps.into_iter()
        .map(|c| {
            let mut group: Vec<&SweepPoint> = points.iter().filter(|p| p.v_max == c).collect();
            group.sort_by_key(|p| p.network);
            (c, group)
        })
        .collect()
}

pub fn fig_a_rows(points: &[SweepPoint]) -> Vec<FigARow> {
    by_capacity(points)
        .into_iter()
        .map(|(v_max, group)| {
            let n = group.len() as f64;
            let profits: Vec<f64> = group.iter().map(|p| p.profit).collect();
            let all_prices: Vec<f64> = group.iter().flat_map(|p| p.prices.iter().copied()).collect();
            FigARow {
                v_max,
                mean_profit: profits.iter().sum::<f64>() / n,
                min_profit: profits.iter().copied().fold(f64::INFINITY, f64::min),
                max_profit: profits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_price: all_prices.iter().sum::<f64>() / all_prices.len() as f64,
                node_prices: group[0].prices.clone(),
            }
        })
        .collect()
}

pub fn fig_b_rows(points: &[SweepPoint]) -> Vec<FigBRow> {
    by_capacity(points)
        .into_iter()
        .map(|(v_max, group)| {
            let ratios: f64 = group
                .iter()
                .map(|p| if p.trips > NO_DEMAND { p.rebalancing / p.trips } else { f64::NAN })
                .sum();
            FigBRow { v_max, rebalancers_per_trip: ratios / group.len() as f64 }
        })
        .collect()
}

pub fn run_fig_a(cfg: &ExperimentConfig) -> Result<Vec<FigARow>> {
    Ok(fig_a_rows(&sweep_networks(cfg)?))
}

pub fn run_fig_b(cfg: &ExperimentConfig) -> Result<Vec<FigBRow>> {
    Ok(fig_b_rows(&sweep_networks(cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigCRow {
    pub n: f64,
    pub approx_cost: f64,
    pub exact_cost: f64,
    pub ci_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigC {
    pub plan: RebalancingPlan,
    pub sweep: Vec<RebalanceEstimate>,
    /// Sorted by `n`.
    pub rows: Vec<FigCRow>,
}

impl FigC {
    /// Lowest simulated cost over the sweep.
    pub fn exact_min(&self) -> f64 {
        self.rows.iter().map(|r| r.exact_cost).fold(f64::INFINITY, f64::min)
    }
}

/// Simulated cost for each rebalancing probability.
pub fn gamma_sweep(cfg: &ExperimentConfig) -> Result<Vec<RebalanceEstimate>> {
    cfg.validate()?;
    let fleet = &cfg.fleet;
    let p_s = fleet
        .p_s
        .ok_or_else(|| amod_core::Error::Validation(vec!["fleet.p_s is required".into()]))?;
    if fleet.v_max < 3 {
        return Err(amod_core::Error::BatteryTooSmall { v_max: fleet.v_max, min: 3 }.into());
    }
    let (lo, hi) = cfg.price_support;
    cfg.gammas
        .iter()
        .map(|&g| {
            let policy = rebalancing_thresholds(lo, hi, fleet.v_max, fleet.tau, g)?;
            Ok(simulate_rebalancing(&policy, p_s, g, fleet, &cfg.sim, cfg.exec)?)
        })
        .collect()
}

pub fn run_fig_c(cfg: &ExperimentConfig) -> Result<FigC> {
    let (lo, hi) = cfg.price_support;
    let plan = plan_rebalancing(&cfg.fleet, lo, hi)?;
    let sweep = gamma_sweep(cfg)?;
    let mut rows: Vec<FigCRow> = sweep
        .iter()
        .map(|e| FigCRow {
            n: e.measured_n.mean,
            approx_cost: approx_cost_at(e.measured_n.mean, plan.b, plan.p_avg, lo),
            exact_cost: e.cost.mean,
            ci_half: e.cost.ci_half,
        })
        .collect();
    rows.sort_by(|a, b| a.n.total_cmp(&b.n));
    Ok(FigC { plan, sweep, rows })
}

/// Reference average price without rebalancing at the fig-c capacity.
pub fn baseline_cost(cfg: &ExperimentConfig) -> Result<f64> {
    let (lo, hi) = cfg.price_support;
    let policy = amod_core::policy::thresholds_uniform(lo, hi, cfg.fleet.v_max, cfg.fleet.tau)?;
    Ok(avg_cost_closed(&policy))
}

fn write_records<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig_a(path: &Path, rows: &[FigARow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.node_prices.len());
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    let mut header: Vec<String> = FIG_A_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..m).map(|i| format!("price_node_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.v_max.to_string(),
            r.mean_profit.to_string(),
            r.min_profit.to_string(),
            r.max_profit.to_string(),
            r.mean_price.to_string(),
        ];
        rec.extend(r.node_prices.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig_b(path: &Path, rows: &[FigBRow]) -> Result<()> {
    write_records(path, FIG_B_HEADER, rows)
}

pub fn write_fig_c(path: &Path, rows: &[FigCRow]) -> Result<()> {
    write_records(path, FIG_C_HEADER, rows)
}

#[derive(Serialize)]
struct SimRow {
    gamma: f64,
    mean_cost: f64,
    ci_half: f64,
    measured_n: f64,
}

pub fn write_sim(path: &Path, sweep: &[RebalanceEstimate]) -> Result<()> {
    let rows: Vec<SimRow> = sweep
        .iter()
        .map(|e| SimRow {
            gamma: e.gamma,
            mean_cost: e.cost.mean,
            ci_half: e.cost.ci_half,
            measured_n: e.measured_n.mean,
        })
        .collect();
    write_records(path, SIM_HEADER, &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(network: usize, v_max: u32, profit: f64, trips: f64, rebalancing: f64) -> SweepPoint {
        SweepPoint { network, v_max, profit, prices: vec![profit, 2.0 * profit], trips, rebalancing }
    }

    #[test]
    fn aggregation_orders_and_averages() {
        let pts = vec![
            point(1, 2, 3.0, 1.0, 0.5),
            point(0, 2, 1.0, 2.0, 0.0),
            point(0, 1, 5.0, 1.0, 1.0),
        ];
        let a = fig_a_rows(&pts);
        assert_eq!(a.iter().map(|r| r.v_max).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!((a[1].mean_profit, a[1].min_profit, a[1].max_profit), (2.0, 1.0, 3.0));
        assert_eq!(a[1].node_prices, vec![1.0, 2.0]);
        assert_eq!(a[1].mean_price, 3.0);
        let b = fig_b_rows(&pts);
        assert_eq!(b[1].rebalancers_per_trip, 0.25);
    }

    #[test]
    fn no_demand_gives_nan() {
        let b = fig_b_rows(&[point(0, 3, 0.0, 0.0, 0.0)]);
        assert!(b[0].rebalancers_per_trip.is_nan());
    }

    #[test]
    fn rejects_empty_sweep() {
        let cfg = ExperimentConfig { v_max_range: (3, 2), ..ExperimentConfig::default() };
        assert!(matches!(cfg.validate(), Err(XpError::Core(amod_core::Error::Validation(_)))));
    }
}
