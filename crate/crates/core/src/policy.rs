//! Threshold charging under iid random electricity prices.
//!
//! A vehicle at a node with price `p` and battery level `v` charges one unit
//! iff `p <= C_v`, where `C_v` is the expected price of the next unit bought
//! if it leaves now with `v` units:
//!
//! ```text
//! C_v = P(p < C_{v-1}) E[p | p < C_{v-1}] + P(p >= C_{v-1}) C_{v-1},   C_0 = p_max.
//! ```
//!
//! For uniform prices this has the closed form
//! `C_v = eta - (p_max - C_{v-1})^2 / (2 (p_max - p_min))`, the stationary
//! (level, price) density is piecewise constant, and the long-run average
//! price per unit equals `C_{v_max}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_distribution, FleetSpec, PriceDistribution};

/// Threshold policy for one battery capacity and trip duration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargingPolicy {
    /// `thresholds[v] = C_v` for `v = 0..=v_max`. `C_0` is the support maximum,
    /// a sentinel meaning "always charge when empty".
    pub thresholds: Vec<f64>,
    pub distribution: PriceDistribution,
    pub v_max: u32,
    pub tau: u32,
}

impl ChargingPolicy {
    /// Builds a policy from explicit thresholds for levels `1..v_max`; the
    /// `v = 0` sentinel is prepended and `C_{v_max}` is taken from `last`.
    pub fn from_thresholds(
        distribution: PriceDistribution,
        levels: &[f64],
        last: f64,
        tau: u32,
    ) -> Self {
        let mut thresholds = Vec::with_capacity(levels.len() + 2);
        thresholds.push(distribution.support().1);
        thresholds.extend_from_slice(levels);
        thresholds.push(last);
        ChargingPolicy { v_max: (thresholds.len() - 1) as u32, thresholds, distribution, tau }
    }

    pub fn threshold(&self, v: u32) -> f64 {
        self.thresholds[v as usize]
    }

    /// Charge decision at level `v` and price `p`. Never charges when full.
    pub fn charges(&self, v: u32, p: f64) -> bool {
        v < self.v_max && p <= self.thresholds[v as usize]
    }

    /// Threshold actually applied at level `v`: `C_v` below capacity, the
    /// support minimum (never charge) at capacity.
    pub fn effective_threshold(&self, v: u32) -> f64 {
        if v >= self.v_max {
            self.distribution.support().0
        } else {
            self.thresholds[v as usize]
        }
    }
}

/// Next threshold of the uniform recursion.
fn uniform_step(p_min: f64, p_max: f64, prev: f64) -> f64 {
    let spread = p_max - p_min;
    if spread <= 0.0 {
        return p_min;
    }
    0.5 * (p_min + p_max) - (p_max - prev).powi(2) / (2.0 * spread)
}

/// Thresholds for prices uniform on `[p_min, p_max]`.
pub fn thresholds_uniform(p_min: f64, p_max: f64, v_max: u32, tau: u32) -> Result<ChargingPolicy> {
    let distribution = PriceDistribution::uniform(p_min, p_max);
    validate_distribution(&distribution).into_result()?;
    if v_max == 0 {
        return Err(Error::Validation(vec!["v_max must be at least 1".into()]));
    }
    let mut thresholds = Vec::with_capacity(v_max as usize + 1);
    thresholds.push(p_max);
    for v in 1..=v_max as usize {
        let next = uniform_step(p_min, p_max, thresholds[v - 1]);
        thresholds.push(next);
    }
    Ok(ChargingPolicy { thresholds, distribution, v_max, tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureOpts {
    /// Midpoint-rule subintervals per tabulation cell (at least 2).
    pub points_per_cell: usize,
}

impl Default for QuadratureOpts {
    fn default() -> Self {
        QuadratureOpts { points_per_cell: 2048 }
    }
}

/// Partial moments `(int f, int p f)` over `[lo, c]` by composite midpoint.
fn partial_moments(dist: &PriceDistribution, knots: &[f64], c: f64, points: usize) -> (f64, f64) {
    let mut mass = 0.0;
    let mut first = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1].min(c));
        if b <= a {
            break;
        }
        let h = (b - a) / points as f64;
        for k in 0..points {
            let p = a + (k as f64 + 0.5) * h;
            let f = dist.density(p);
            mass += f * h;
            first += p * f * h;
        }
    }
    (mass, first)
}

/// Thresholds for an arbitrary (tabulated or uniform) price density by
/// numerical integration of the threshold recursion.
pub fn thresholds_general(
    dist: &PriceDistribution,
    v_max: u32,
    tau: u32,
    quad: &QuadratureOpts,
) -> Result<ChargingPolicy> {
    if let PriceDistribution::Tabulated { .. } = dist {
        let mass = dist.total_mass();
        if (mass - 1.0).abs() > crate::model::DENSITY_NORM_TOL {
            return Err(Error::NonNormalizedDensity { mass });
        }
    }
    validate_distribution(dist).into_result()?;
    if v_max == 0 {
        return Err(Error::Validation(vec!["v_max must be at least 1".into()]));
    }
    if quad.points_per_cell < 2 {
        return Err(Error::Validation(vec!["quadrature needs at least 2 points per cell".into()]));
    }
    let knots: Vec<f64> = match dist {
        PriceDistribution::Uniform { p_min, p_max } => vec![*p_min, *p_max],
        PriceDistribution::Tabulated { grid } => grid.iter().map(|k| k[0]).collect(),
    };
    let (lo, hi) = dist.support();
    let (total, _) = partial_moments(dist, &knots, hi, quad.points_per_cell);
    let mut thresholds = vec![hi];
    for v in 1..=v_max as usize {
        let prev = thresholds[v - 1];
        let next = if hi <= lo || total <= 0.0 {
            lo
        } else {
            let (mass, first) = partial_moments(dist, &knots, prev, quad.points_per_cell);
            let below = mass / total;
            first / total + (1.0 - below) * prev
        };
        thresholds.push(next);
    }
    Ok(ChargingPolicy { thresholds, distribution: dist.clone(), v_max, tau })
}

/// Stationary density of a vehicle's (level, price) state for uniform prices.
///
/// `d(0, p) = d0` on the whole support; for `v >= 1`, `d(v, p)` equals
/// `levels[v-1].0` below `C_{v-1}` and `levels[v-1].1` above it. The density
/// is per decision epoch and normalized so that the charging epochs carry
/// mass `1 / (1 + tau)`; weighting travel epochs by `tau` periods gives a
/// distribution over time with total mass 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub d0: f64,
    /// `(d_v^1, d_v^2)` for `v = 1..=v_max`.
    pub levels: Vec<(f64, f64)>,
    /// Effective charge thresholds for `v = 0..=v_max` (see
    /// [`ChargingPolicy::effective_threshold`]).
    pub thresholds: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
    pub tau: u32,
}

impl StationaryDistribution {
    pub fn v_max(&self) -> u32 {
        self.levels.len() as u32
    }

    fn breakpoint(&self, v: u32) -> f64 {
        if v == 0 {
            self.p_max
        } else {
            self.thresholds[v as usize - 1].max(self.p_min)
        }
    }

    /// `d(v, p)`; zero outside the support.
    pub fn density(&self, v: u32, p: f64) -> f64 {
        if p < self.p_min || p > self.p_max || v > self.v_max() {
            return 0.0;
        }
        if v == 0 {
            return self.d0;
        }
        let (lo, hi) = self.levels[v as usize - 1];
        if p < self.breakpoint(v) {
            lo
        } else {
            hi
        }
    }

    /// `int_a^b d(v, p) dp`.
    pub fn mass_between(&self, v: u32, a: f64, b: f64) -> f64 {
        let a = a.max(self.p_min);
        let b = b.min(self.p_max);
        if b <= a {
            return 0.0;
        }
        if v == 0 {
            return self.d0 * (b - a);
        }
        let brk = self.breakpoint(v);
        let (lo, hi) = self.levels[v as usize - 1];
        let below = (b.min(brk) - a).max(0.0);
        let above = (b - a.max(brk)).max(0.0);
        lo * below + hi * above
    }

    /// Mass of epochs at level `v` that end in charging.
    pub fn charging_mass_at(&self, v: u32) -> f64 {
        self.mass_between(v, self.p_min, self.thresholds[v as usize])
    }

    pub fn charging_mass(&self) -> f64 {
        (0..=self.v_max()).map(|v| self.charging_mass_at(v)).sum()
    }

    pub fn travel_mass(&self) -> f64 {
        (0..=self.v_max())
            .map(|v| self.mass_between(v, self.thresholds[v as usize], self.p_max))
            .sum()
    }

    /// Time-weighted mass: charging epochs last one period, trips `tau`.
    pub fn total_mass(&self) -> f64 {
        self.charging_mass() + f64::from(self.tau) * self.travel_mass()
    }

    /// `d(v, p)` minus the right-hand side of the stationary balance
    /// `d(v-1, p) 1[p <= T_{v-1}] + f(p) int_{T_{v+1}}^{p_max} d(v+1, q) dq`.
    pub fn balance_residual(&self, v: u32, p: f64) -> f64 {
        let vm = self.v_max();
        let f = if p >= self.p_min && p <= self.p_max {
            1.0 / (self.p_max - self.p_min)
        } else {
            0.0
        };
        let from_charge = if v >= 1 && p <= self.thresholds[v as usize - 1] {
            self.density(v - 1, p)
        } else {
            0.0
        };
        let from_trip = if v < vm {
            f * self.mass_between(v + 1, self.thresholds[v as usize + 1], self.p_max)
        } else {
            0.0
        };
        self.density(v, p) - from_charge - from_trip
    }

    /// Largest `|balance_residual|` over the midpoints of every price segment
    /// delimited by the thresholds, for every level.
    pub fn max_balance_residual(&self) -> f64 {
        let mut cuts: Vec<f64> = self.thresholds.clone();
        cuts.push(self.p_min);
        cuts.push(self.p_max);
        cuts.retain(|c| *c >= self.p_min && *c <= self.p_max);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let probes: Vec<f64> = cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        (0..=self.v_max())
            .flat_map(|v| probes.iter().map(move |&p| self.balance_residual(v, p).abs()))
            .fold(0.0, f64::max)
    }

    /// Probability that a charging vehicle has level `v`, for `v = 0..v_max`.
    pub fn charge_level_probabilities(&self) -> Vec<f64> {
        let scale = 1.0 + f64::from(self.tau);
        (0..self.v_max()).map(|v| scale * self.charging_mass_at(v)).collect()
    }
}

/// Closed-form stationary distribution; uniform prices only.
pub fn stationary_distribution(policy: &ChargingPolicy) -> Result<StationaryDistribution> {
    let (p_min, p_max) = match policy.distribution {
        PriceDistribution::Uniform { p_min, p_max } => (p_min, p_max),
        PriceDistribution::Tabulated { .. } => {
            return Err(Error::Validation(vec![
                "closed-form stationary distribution needs uniform prices".into(),
            ]))
        }
    };
    if p_max <= p_min {
        return Err(Error::DegenerateDistribution);
    }
    let spread = p_max - p_min;
    let vm = policy.v_max;
    let tau = f64::from(policy.tau);
    let thresholds: Vec<f64> = (0..=vm).map(|v| policy.effective_threshold(v)).collect();

    // d0 = prod_{i=1}^{v_max-1} (p_max - C_i) / ((1 + tau) spread^{v_max}),
    // accumulated as a product of ratios to stay in range.
    let mut d0 = 1.0 / ((1.0 + tau) * spread);
    for c in &thresholds[1..vm as usize] {
        d0 *= (p_max - c) / spread;
    }
    let mut first = Vec::with_capacity(vm as usize + 1);
    first.push(d0);
    for v in 1..=vm as usize {
        let prev = first[v - 1];
        first.push(prev * spread / (p_max - thresholds[v]));
    }
    let levels = (1..=vm as usize).map(|v| (first[v], first[v] - first[v - 1])).collect();
    Ok(StationaryDistribution { d0, levels, thresholds, p_min, p_max, tau: policy.tau })
}

/// Average price per unit from the stationary distribution:
/// `(1 + tau) sum_{v < v_max} d_v^1 (C_v^2 - p_min^2) / 2`.
pub fn avg_cost_from_distribution(d: &StationaryDistribution, policy: &ChargingPolicy) -> f64 {
    let scale = 1.0 + f64::from(d.tau);
    let p_min = d.p_min;
    (0..policy.v_max)
        .map(|v| {
            let dv = if v == 0 { d.d0 } else { d.levels[v as usize - 1].0 };
            let c = policy.threshold(v);
            dv * (c * c - p_min * p_min) / 2.0
        })
        .sum::<f64>()
        * scale
}

/// For uniform prices the average price per unit is just `C_{v_max}`.
pub fn avg_cost_closed(policy: &ChargingPolicy) -> f64 {
    policy.threshold(policy.v_max)
}

/// Result of the battery-capacity trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatteryChoice {
    /// Smallest capacity whose marginal saving `C_v - C_{v+1}` is at most `xi`.
    pub v_star: u32,
    /// `sqrt(2 xi (p_max - p_min)) + p_min`, or `eta` when `xi` exceeds
    /// `(p_max - p_min) / 8`.
    pub p_avg_continuous: f64,
    /// `C_{v_star}`.
    pub p_avg_integer: f64,
    /// Marginal saving at `v_star`.
    pub marginal_saving: f64,
    /// `xi * v_star`, the capacity-dependent part of the operating cost.
    pub beta_component: f64,
    /// `false` when `xi > (p_max - p_min) / 8` and capacity 1 is optimal.
    pub within_bound: bool,
}

/// `C_v - C_{v+1} = (C_v - p_min)^2 / (2 (p_max - p_min))`.
pub fn marginal_saving(c_v: f64, p_min: f64, p_max: f64) -> f64 {
    let spread = p_max - p_min;
    if spread <= 0.0 {
        0.0
    } else {
        (c_v - p_min).powi(2) / (2.0 * spread)
    }
}

pub fn optimal_battery(xi: f64, p_min: f64, p_max: f64) -> Result<BatteryChoice> {
    if !(xi > 0.0) {
        return Err(Error::Validation(vec![format!("xi = {xi} must be positive")]));
    }
    validate_distribution(&PriceDistribution::uniform(p_min, p_max)).into_result()?;
    let spread = p_max - p_min;
    let eta = 0.5 * (p_min + p_max);
    let within_bound = xi <= spread / 8.0;
    let p_avg_continuous = if within_bound { (2.0 * xi * spread).sqrt() + p_min } else { eta };

    let mut v = 1u32;
    let mut c = eta;
    loop {
        let saving = marginal_saving(c, p_min, p_max);
        if saving <= xi {
            return Ok(BatteryChoice {
                v_star: v,
                p_avg_continuous,
                p_avg_integer: c,
                marginal_saving: saving,
                beta_component: xi * f64::from(v),
                within_bound,
            });
        }
        c = uniform_step(p_min, p_max, c);
        v += 1;
    }
}

/// Average price at the optimal capacity for uniform prices with mean `eta`
/// and each standard deviation in `sigmas`.
pub fn spread_sensitivity(eta: f64, sigmas: &[f64], xi: f64) -> Result<Vec<f64>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let half = 3f64.sqrt() * sigma;
            let p_min = eta - half;
            if p_min < 0.0 {
                return Err(Error::NegativePriceSupport { p_min });
            }
            Ok(optimal_battery(xi, p_min, eta + half)?.p_avg_continuous)
        })
        .collect()
}

/// Amortized cost per delivered unit of charging at the external node:
/// `2 / (v_max - 2) ((1 + tau) beta + p_s) + p_s`.
pub fn rebalancing_b(fleet: &FleetSpec) -> Result<f64> {
    if fleet.v_max < 3 {
        return Err(Error::BatteryTooSmall { v_max: fleet.v_max, min: 3 });
    }
    let p_s = fleet
        .p_s
        .ok_or_else(|| Error::Validation(vec!["fleet.p_s is required for rebalancing".into()]))?;
    let overhead = (1.0 + f64::from(fleet.tau)) * fleet.beta() + p_s;
    Ok(2.0 / f64::from(fleet.v_max - 2) * overhead + p_s)
}

/// Approximate total cost when a share `n` of charging stays at regular
/// nodes and the rest is done at the external node at cost `b`.
pub fn approx_cost_at(n: f64, b: f64, p_avg: f64, p_min: f64) -> f64 {
    n * (p_min + n * (p_avg - p_min)) + (1.0 - n) * b
}

/// `(n*, p_avg^r)` minimizing [`approx_cost_at`]; requires
/// `p_min <= b <= 2 p_avg - p_min`.
pub fn approx_rebalanced_cost(b: f64, p_avg: f64, p_min: f64) -> Result<(f64, f64)> {
    let hi = 2.0 * p_avg - p_min;
    if b < p_min || b > hi {
        return Err(Error::ConstraintViolation { b, lo: p_min, hi });
    }
    let room = p_avg - p_min;
    if room <= 0.0 {
        return Ok((0.0, b));
    }
    let n_star = (b - p_min) / (2.0 * room);
    Ok((n_star, b - (b - p_min).powi(2) / (4.0 * room)))
}

/// As [`approx_rebalanced_cost`] but clamps out-of-range `b`: below the
/// interval everything is charged externally, above it nothing is.
pub fn approx_rebalanced_cost_clamped(b: f64, p_avg: f64, p_min: f64) -> (f64, f64) {
    if b < p_min {
        (0.0, b)
    } else if b > 2.0 * p_avg - p_min {
        (1.0, p_avg)
    } else {
        approx_rebalanced_cost(b, p_avg, p_min).expect("b within range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RebalancingPlan {
    pub p_s: f64,
    pub b: f64,
    pub p_avg: f64,
    pub n_star: f64,
    pub p_avg_r: f64,
}

/// Rebalancing approximation for a fleet under uniform prices.
pub fn plan_rebalancing(fleet: &FleetSpec, p_min: f64, p_max: f64) -> Result<RebalancingPlan> {
    let b = rebalancing_b(fleet)?;
    let policy = thresholds_uniform(p_min, p_max, fleet.v_max, fleet.tau)?;
    let p_avg = avg_cost_closed(&policy);
    let (n_star, p_avg_r) = approx_rebalanced_cost(b, p_avg, p_min)?;
    Ok(RebalancingPlan { p_s: fleet.p_s.unwrap_or(p_min), b, p_avg, n_star, p_avg_r })
}

/// Thresholds when a share `gamma` of vehicles that would leave a node at
/// level 1 are sent to the external node instead. The level-1 threshold
/// becomes `(1 - gamma) eta + gamma C_{v_max}`, solved as a fixed point by
/// bisection; higher levels follow the uniform recursion.
pub fn rebalancing_thresholds(
    p_min: f64,
    p_max: f64,
    v_max: u32,
    tau: u32,
    gamma: f64,
) -> Result<ChargingPolicy> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Validation(vec![format!("gamma = {gamma} outside [0, 1]")]));
    }
    let base = thresholds_uniform(p_min, p_max, v_max, tau)?;
    if v_max < 2 || gamma == 0.0 || p_max <= p_min {
        return Ok(base);
    }
    let eta = 0.5 * (p_min + p_max);
    let run = |c1: f64| {
        let mut c = c1;
        for _ in 2..=v_max {
            c = uniform_step(p_min, p_max, c);
        }
        c
    };
    // h(c) = (1 - gamma) eta + gamma C_vmax(c) - c is >= 0 at p_min and <= 0 at eta.
    let h = |c: f64| (1.0 - gamma) * eta + gamma * run(c) - c;
    let (mut lo, mut hi) = (p_min, eta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * eta.abs().max(1.0) {
            break;
        }
    }
    let c1 = 0.5 * (lo + hi);
    let mut thresholds = vec![p_max, c1];
    for v in 2..=v_max as usize {
        let next = uniform_step(p_min, p_max, thresholds[v - 1]);
        thresholds.push(next);
    }
    Ok(ChargingPolicy { thresholds, ..base })
}
