//! Domain types shared by the flow optimizer, the charging-policy analysis and
//! the Monte Carlo simulator.
//!
//! All types are plain data, immutable after construction and `Send + Sync`.
//! Prices are dollars per energy unit; the size of an energy unit is a
//! documentation convention only (10 kWh in the reference parameter set) and
//! is never converted.
//!
//! Willingness to pay is always uniform on `[0, wtp_max]`, which is what makes
//! the operator's problem a concave quadratic program.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on routing row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance on the normalization of a tabulated density.
pub const DENSITY_NORM_TOL: f64 = 1e-8;

/// Transportation network: nodes, local electricity prices and rider demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub m: usize,
    /// Electricity price at each node.
    pub prices: Vec<f64>,
    /// Potential riders arriving at each node per period.
    pub arrival_rates: Vec<f64>,
    /// `routing[i][j]` is the fraction of riders at `i` heading to `j`.
    pub routing: Vec<Vec<f64>>,
    /// Upper end of the (uniform) willingness-to-pay distribution.
    pub wtp_max: f64,
}

/// Vehicle and cost parameters common to every vehicle in the fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    /// Fixed operating cost per vehicle-period.
    pub beta0: f64,
    /// Battery operating cost per period per unit of capacity.
    pub xi: f64,
    /// Battery capacity in energy units.
    pub v_max: u32,
    /// Trip duration in periods.
    pub tau: u32,
    /// Price at the external cheap charging node, if there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_s: Option<f64>,
}

impl FleetSpec {
    /// Per-period operating cost `beta0 + xi * v_max`.
    pub fn beta(&self) -> f64 {
        self.beta0 + self.xi * f64::from(self.v_max)
    }

    /// Same fleet with a different battery capacity.
    pub fn with_v_max(&self, v_max: u32) -> Self {
        FleetSpec {
            v_max,
            ..self.clone()
        }
    }
}

/// Distribution of the electricity price observed on arrival at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum PriceDistribution {
    Uniform { p_min: f64, p_max: f64 },
    /// Piecewise-linear density through `(price, density)` knots, sorted by
    /// price. Zero outside the first and last knot.
    Tabulated { grid: Vec<[f64; 2]> },
}

impl PriceDistribution {
    pub fn uniform(p_min: f64, p_max: f64) -> Self {
        PriceDistribution::Uniform { p_min, p_max }
    }

    /// `(lowest, highest)` price with positive density.
    pub fn support(&self) -> (f64, f64) {
        match self {
            PriceDistribution::Uniform { p_min, p_max } => (*p_min, *p_max),
            PriceDistribution::Tabulated { grid } => (
                grid.first().map_or(0.0, |k| k[0]),
                grid.last().map_or(0.0, |k| k[0]),
            ),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, PriceDistribution::Uniform { .. })
    }

    /// Density at `p`.
    pub fn density(&self, p: f64) -> f64 {
        match self {
            PriceDistribution::Uniform { p_min, p_max } => {
                if p < *p_min || p > *p_max || p_max <= p_min {
                    0.0
                } else {
                    1.0 / (p_max - p_min)
                }
            }
            PriceDistribution::Tabulated { grid } => {
                let (lo, hi) = self.support();
                if grid.len() < 2 || p < lo || p > hi {
                    return 0.0;
                }
                let k = grid.partition_point(|g| g[0] <= p).clamp(1, grid.len() - 1);
                let [a, fa] = grid[k - 1];
                let [b, fb] = grid[k];
                if b <= a {
                    return fa;
                }
                fa + (fb - fa) * (p - a) / (b - a)
            }
        }
    }

    /// Exact integral of the density (trapezoid is exact for a piecewise-linear
    /// density).
    pub fn total_mass(&self) -> f64 {
        match self {
            PriceDistribution::Uniform { .. } => 1.0,
            PriceDistribution::Tabulated { grid } => grid
                .windows(2)
                .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            PriceDistribution::Uniform { p_min, p_max } => 0.5 * (p_min + p_max),
            PriceDistribution::Tabulated { grid } => grid
                .windows(2)
                .map(|w| {
                    let ([a, fa], [b, fb]) = (w[0], w[1]);
                    // integral of p*f(p) for linear f on [a, b]
                    (b - a) * (fa * (2.0 * a + b) + fb * (a + 2.0 * b)) / 6.0
                })
                .sum(),
        }
    }

    /// Standard deviation; only closed-form for the uniform case.
    pub fn std_dev(&self) -> f64 {
        match self {
            PriceDistribution::Uniform { p_min, p_max } => (p_max - p_min) / (2.0 * 3f64.sqrt()),
            PriceDistribution::Tabulated { grid } => {
                let mean = self.mean();
                let second: f64 = grid
                    .windows(2)
                    .map(|w| {
                        let ([a, fa], [b, fb]) = (w[0], w[1]);
                        let h = b - a;
                        // integral of p^2 f(p), f linear: Simpson is exact for cubics
                        let mid = 0.5 * (a + b);
                        let fm = 0.5 * (fa + fb);
                        h / 6.0 * (a * a * fa + 4.0 * mid * mid * fm + b * b * fb)
                    })
                    .sum();
                (second - mean * mean).max(0.0).sqrt()
            }
        }
    }

    /// Draw one price by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PriceDistribution::Uniform { p_min, p_max } => {
                if p_max <= p_min {
                    *p_min
                } else {
                    p_min + (p_max - p_min) * rng.random::<f64>()
                }
            }
            PriceDistribution::Tabulated { grid } => {
                let total = self.total_mass();
                let mut u = rng.random::<f64>() * total;
                for w in grid.windows(2) {
                    let ([a, fa], [b, fb]) = (w[0], w[1]);
                    let h = b - a;
                    let mass = 0.5 * (fa + fb) * h;
                    if u > mass {
                        u -= mass;
                        continue;
                    }
                    // solve fa*t + (fb - fa) t^2 / (2h) = u for t in [0, h]
                    let slope = (fb - fa) / h;
                    let t = if slope.abs() < 1e-12 * (fa.abs() + 1.0) {
                        if fa > 0.0 {
                            u / fa
                        } else {
                            0.0
                        }
                    } else {
                        let disc = (fa * fa + 2.0 * slope * u).max(0.0);
                        (disc.sqrt() - fa) / slope
                    };
                    return a + t.clamp(0.0, h);
                }
                self.support().1
            }
        }
    }
}

/// Monte Carlo run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Simulated periods per replicate, burn-in included.
    pub horizon: u64,
    pub replicates: u32,
    /// Periods discarded before measurement starts.
    pub burn_in: u64,
}

impl SimConfig {
    /// Burn-in of `10 * (1 + tau) * v_max` periods, the default used by the
    /// command-line tools.
    pub fn default_burn_in(tau: u32, v_max: u32) -> u64 {
        10 * (1 + u64::from(tau)) * u64::from(v_max)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewNodes { m: usize },
    DimensionMismatch { field: &'static str, expected: usize, found: usize },
    NegativePrice { node: usize, price: f64 },
    NegativeArrivalRate { node: usize, rate: f64 },
    NonZeroDiagonal { node: usize, value: f64 },
    NegativeRouting { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64, deficit: f64 },
    NonPositiveWtpMax { value: f64 },
    NonFinite { field: &'static str },
    NegativeBeta { beta: f64 },
    ZeroBattery,
    ZeroTripDuration,
    CheapPriceTooHigh { p_s: f64, min_price: f64 },
    InvertedSupport { p_min: f64, p_max: f64 },
    NegativeSupport { p_min: f64 },
    UnsortedGrid { index: usize },
    NegativeDensity { index: usize, value: f64 },
    DensityNotNormalized { mass: f64 },
    BurnInNotBelowHorizon { burn_in: u64, horizon: u64 },
    NoReplicates,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewNodes { m } => write!(f, "network needs at least 2 nodes, got {m}"),
            DimensionMismatch { field, expected, found } => {
                write!(f, "{field}: expected length {expected}, found {found}")
            }
            NegativePrice { node, price } => write!(f, "prices[{node}] = {price} is negative"),
            NegativeArrivalRate { node, rate } => {
                write!(f, "arrival_rates[{node}] = {rate} is negative")
            }
            NonZeroDiagonal { node, value } => {
                write!(f, "routing[{node}][{node}] = {value}, diagonal must be 0")
            }
            NegativeRouting { row, col, value } => {
                write!(f, "routing[{row}][{col}] = {value} is negative")
            }
            RowSum { row, sum, deficit } => {
                write!(f, "routing row {row} sums to {sum} (deficit {deficit})")
            }
            NonPositiveWtpMax { value } => write!(f, "wtp_max = {value} must be positive"),
            NonFinite { field } => write!(f, "{field} contains a non-finite value"),
            NegativeBeta { beta } => write!(f, "beta0 + xi * v_max = {beta} is negative"),
            ZeroBattery => write!(f, "v_max must be at least 1"),
            ZeroTripDuration => write!(f, "tau must be at least 1"),
            CheapPriceTooHigh { p_s, min_price } => {
                write!(f, "p_s = {p_s} exceeds the lowest price {min_price}")
            }
            InvertedSupport { p_min, p_max } => {
                write!(f, "p_min = {p_min} is above p_max = {p_max}")
            }
            NegativeSupport { p_min } => write!(f, "price support starts at {p_min} < 0"),
            UnsortedGrid { index } => write!(f, "tabulated grid not increasing at knot {index}"),
            NegativeDensity { index, value } => {
                write!(f, "tabulated density {value} at knot {index} is negative")
            }
            DensityNotNormalized { mass } => write!(f, "density integrates to {mass}, not 1"),
            BurnInNotBelowHorizon { burn_in, horizon } => {
                write!(f, "burn_in {burn_in} must be below horizon {horizon}")
            }
            NoReplicates => write!(f, "replicates must be at least 1"),
        }
    }
}

/// Every invariant violation found in a spec. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(mut self, other: ValidationReport) -> Self {
        self.violations.extend(other.violations);
        self
    }

    /// `Ok(())` when empty, otherwise an [`Error::Validation`] listing all
    /// violations.
    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(
                self.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }
}

pub fn validate_network(spec: &NetworkSpec) -> ValidationReport {
    let mut v = Vec::new();
    let m = spec.m;
    if m < 2 {
        v.push(Violation::TooFewNodes { m });
    }
    for (field, len) in [
        ("prices", spec.prices.len()),
        ("arrival_rates", spec.arrival_rates.len()),
        ("routing", spec.routing.len()),
    ] {
        if len != m {
            v.push(Violation::DimensionMismatch { field, expected: m, found: len });
        }
    }
    for (i, &p) in spec.prices.iter().enumerate() {
        if !p.is_finite() {
            v.push(Violation::NonFinite { field: "prices" });
        } else if p < 0.0 {
            v.push(Violation::NegativePrice { node: i, price: p });
        }
    }
    for (i, &t) in spec.arrival_rates.iter().enumerate() {
        if !t.is_finite() {
            v.push(Violation::NonFinite { field: "arrival_rates" });
        } else if t < 0.0 {
            v.push(Violation::NegativeArrivalRate { node: i, rate: t });
        }
    }
    for (i, row) in spec.routing.iter().enumerate() {
        if row.len() != m {
            v.push(Violation::DimensionMismatch {
                field: "routing row",
                expected: m,
                found: row.len(),
            });
            continue;
        }
        if row.iter().any(|a| !a.is_finite()) {
            v.push(Violation::NonFinite { field: "routing" });
            continue;
        }
        if row[i] != 0.0 {
            v.push(Violation::NonZeroDiagonal { node: i, value: row[i] });
        }
        for (j, &a) in row.iter().enumerate() {
            if a < 0.0 {
                v.push(Violation::NegativeRouting { row: i, col: j, value: a });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            v.push(Violation::RowSum { row: i, sum, deficit: 1.0 - sum });
        }
    }
    if !spec.wtp_max.is_finite() {
        v.push(Violation::NonFinite { field: "wtp_max" });
    } else if spec.wtp_max <= 0.0 {
        v.push(Violation::NonPositiveWtpMax { value: spec.wtp_max });
    }
    ValidationReport { violations: v }
}

/// Checks the fleet on its own; the `p_s` bound against prices is checked by
/// [`validate_cheap_price`].
pub fn validate_fleet(fleet: &FleetSpec) -> ValidationReport {
    let mut v = Vec::new();
    if !fleet.beta0.is_finite() || !fleet.xi.is_finite() {
        v.push(Violation::NonFinite { field: "fleet" });
    } else if fleet.beta() < 0.0 {
        v.push(Violation::NegativeBeta { beta: fleet.beta() });
    }
    if fleet.v_max == 0 {
        v.push(Violation::ZeroBattery);
    }
    if fleet.tau == 0 {
        v.push(Violation::ZeroTripDuration);
    }
    if let Some(p_s) = fleet.p_s {
        if !p_s.is_finite() {
            v.push(Violation::NonFinite { field: "p_s" });
        }
    }
    ValidationReport { violations: v }
}

/// `p_s` may equal the lowest price but not exceed it.
pub fn validate_cheap_price(fleet: &FleetSpec, min_price: f64) -> ValidationReport {
    let mut v = Vec::new();
    if let Some(p_s) = fleet.p_s {
        if p_s > min_price {
            v.push(Violation::CheapPriceTooHigh { p_s, min_price });
        }
    }
    ValidationReport { violations: v }
}

pub fn validate_distribution(dist: &PriceDistribution) -> ValidationReport {
    let mut v = Vec::new();
    match dist {
        PriceDistribution::Uniform { p_min, p_max } => {
            if !p_min.is_finite() || !p_max.is_finite() {
                v.push(Violation::NonFinite { field: "prices" });
            } else {
                if p_min > p_max {
                    v.push(Violation::InvertedSupport { p_min: *p_min, p_max: *p_max });
                }
                if *p_min < 0.0 {
                    v.push(Violation::NegativeSupport { p_min: *p_min });
                }
            }
        }
        PriceDistribution::Tabulated { grid } => {
            if grid.len() < 2 {
                v.push(Violation::DensityNotNormalized { mass: 0.0 });
                return ValidationReport { violations: v };
            }
            if grid.iter().any(|k| !k[0].is_finite() || !k[1].is_finite()) {
                v.push(Violation::NonFinite { field: "grid" });
                return ValidationReport { violations: v };
            }
            if grid[0][0] < 0.0 {
                v.push(Violation::NegativeSupport { p_min: grid[0][0] });
            }
            for (k, w) in grid.windows(2).enumerate() {
                if w[1][0] <= w[0][0] {
                    v.push(Violation::UnsortedGrid { index: k + 1 });
                }
            }
            for (k, knot) in grid.iter().enumerate() {
                if knot[1] < 0.0 {
                    v.push(Violation::NegativeDensity { index: k, value: knot[1] });
                }
            }
            let mass = dist.total_mass();
            if (mass - 1.0).abs() > DENSITY_NORM_TOL {
                v.push(Violation::DensityNotNormalized { mass });
            }
        }
    }
    ValidationReport { violations: v }
}

pub fn validate_sim(cfg: &SimConfig) -> ValidationReport {
    let mut v = Vec::new();
    if cfg.horizon <= cfg.burn_in {
        v.push(Violation::BurnInNotBelowHorizon { burn_in: cfg.burn_in, horizon: cfg.horizon });
    }
    if cfg.replicates == 0 {
        v.push(Violation::NoReplicates);
    }
    ValidationReport { violations: v }
}

/// Contents of a configuration file. Each section is optional so that a file
/// can carry only what a given command needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<FleetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PriceDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Validates every present section plus the cross-section `p_s` bound.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Some(net) = &self.network {
            report = report.merge(validate_network(net));
        }
        if let Some(fleet) = &self.fleet {
            report = report.merge(validate_fleet(fleet));
        }
        if let Some(dist) = &self.prices {
            report = report.merge(validate_distribution(dist));
        }
        if let Some(sim) = &self.sim {
            report = report.merge(validate_sim(sim));
        }
        if let Some(fleet) = &self.fleet {
            let net_min = self
                .network
                .as_ref()
                .and_then(|n| n.prices.iter().copied().reduce(f64::min));
            let dist_min = self.prices.as_ref().map(|d| d.support().0);
            let min_price = match (net_min, dist_min) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            if let Some(min_price) = min_price {
                report = report.merge(validate_cheap_price(fleet, min_price));
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> NetworkSpec {
        NetworkSpec {
            m: 2,
            prices: vec![1.0, 1.0],
            arrival_rates: vec![1.0, 1.0],
            routing: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            wtp_max: 40.0,
        }
    }

    #[test]
    fn symmetric_two_node_is_valid() {
        assert!(validate_network(&two_node()).is_empty());
    }

    #[test]
    fn short_row_reports_deficit() {
        let mut net = NetworkSpec {
            m: 3,
            prices: vec![1.0; 3],
            arrival_rates: vec![1.0; 3],
            routing: vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]],
            wtp_max: 40.0,
        };
        net.routing[1] = vec![0.4, 0.0, 0.5];
        let report = validate_network(&net);
        assert_eq!(report.violations.len(), 1);
        match report.violations[0] {
            Violation::RowSum { row, deficit, .. } => {
                assert_eq!(row, 1);
                assert!((deficit - 0.1).abs() < 1e-12);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diagonal_entry_reported() {
        let mut net = two_node();
        net.routing[0] = vec![0.5, 0.5];
        let report = validate_network(&net);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonZeroDiagonal { node: 0, .. })));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut net = two_node();
        net.prices[1] = -1.0;
        net.wtp_max = 0.0;
        let a = validate_network(&net);
        let b = validate_network(&net);
        assert_eq!(a, b);
        assert_eq!(a.violations.len(), 2);
    }

    #[test]
    fn cheap_price_may_equal_minimum() {
        let fleet = FleetSpec { beta0: 0.1, xi: 0.003, v_max: 9, tau: 10, p_s: Some(0.8) };
        assert!(validate_cheap_price(&fleet, 0.8).is_empty());
        assert!(!validate_cheap_price(&fleet, 0.79).is_empty());
    }

    #[test]
    fn tabulated_density_checks() {
        let ok = PriceDistribution::Tabulated { grid: vec![[0.0, 0.5], [2.0, 0.5]] };
        assert!(validate_distribution(&ok).is_empty());
        let bad = PriceDistribution::Tabulated { grid: vec![[0.0, 0.5], [1.0, 0.5]] };
        assert!(matches!(
            validate_distribution(&bad).violations[..],
            [Violation::DensityNotNormalized { .. }]
        ));
    }

    #[test]
    fn tabulated_moments_match_uniform() {
        let tab = PriceDistribution::Tabulated {
            grid: vec![[0.8, 1.0 / 2.2], [1.9, 1.0 / 2.2], [3.0, 1.0 / 2.2]],
        };
        let uni = PriceDistribution::uniform(0.8, 3.0);
        assert!((tab.mean() - uni.mean()).abs() < 1e-12);
        assert!((tab.std_dev() - uni.std_dev()).abs() < 1e-12);
        assert!((tab.density(1.234) - uni.density(1.234)).abs() < 1e-12);
    }
}
