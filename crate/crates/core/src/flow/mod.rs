//! The operator's joint pricing, routing, charging and rebalancing problem.
//!
//! Decision variables, for nodes `i != j` and battery levels `v`:
//!
//! * `ell_i`       ride price out of node `i`, boxed to `[0, wtp_max]`;
//! * `x_i^v`       vehicles charging at `i` with level `v`, `v in 0..v_max`;
//! * `x_ij^v`      vehicles carrying riders `i -> j` leaving with level `v`,
//!   `v in 1..=v_max`;
//! * `r_ij^v`      empty (rebalancing) vehicles `i -> j`, same levels.
//!
//! With uniform willingness to pay the induced demand is affine in the price
//! and the profit
//!
//! ```text
//! sum_i theta_i ell_i (1 - ell_i / wtp_max)
//!   - sum_{i,v} (beta + p_i) x_i^v - tau beta sum_{i,j,v} (x_ij^v + r_ij^v)
//! ```
//!
//! is concave. It is maximized subject to demand satisfaction
//! `sum_v x_ij^v = theta_i alpha_ij (1 - ell_i / wtp_max)` and flow balance at
//! every `(node, level)`. Internally the problem is posed as a minimization of
//! the negated profit and handed to [`ipm`].

pub mod export;
pub mod ipm;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_fleet, validate_network, FleetSpec, NetworkSpec};
use ipm::{IpmSettings, QuadProgram};

/// Maps `(kind, node, node, level)` to a variable column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarIndex {
    pub m: usize,
    pub v_max: usize,
}

impl VarIndex {
    pub fn num_vars(&self) -> usize {
        let (m, v) = (self.m, self.v_max);
        m + m * v + 2 * m * (m - 1) * v
    }

    pub fn num_demand_rows(&self) -> usize {
        self.m * (self.m - 1)
    }

    pub fn num_balance_rows(&self) -> usize {
        self.m * (self.v_max + 1)
    }

    pub fn num_rows(&self) -> usize {
        self.num_demand_rows() + self.num_balance_rows()
    }

    pub fn price(&self, i: usize) -> usize {
        i
    }

    /// Charging variable, `v in 0..v_max`.
    pub fn charge(&self, i: usize, v: usize) -> usize {
        debug_assert!(v < self.v_max);
        self.m + i * self.v_max + v
    }

    fn pair(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        i * (self.m - 1) + if j > i { j - 1 } else { j }
    }

    /// Passenger trip variable, `v in 1..=v_max`.
    pub fn trip(&self, i: usize, j: usize, v: usize) -> usize {
        debug_assert!((1..=self.v_max).contains(&v));
        self.m + self.m * self.v_max + self.pair(i, j) * self.v_max + (v - 1)
    }

    /// Rebalancing trip variable, `v in 1..=v_max`.
    pub fn rebalance(&self, i: usize, j: usize, v: usize) -> usize {
        self.trip(i, j, v) + self.m * (self.m - 1) * self.v_max
    }

    pub fn demand_row(&self, i: usize, j: usize) -> usize {
        self.pair(i, j)
    }

    /// Flow-balance row, `v in 0..=v_max`.
    pub fn balance_row(&self, i: usize, v: usize) -> usize {
        self.num_demand_rows() + i * (self.v_max + 1) + v
    }

    /// All ordered pairs `i != j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        (0..m).flat_map(move |i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
    }
}

/// Fully assembled quadratic program for one network and fleet.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub index: VarIndex,
    pub qp: QuadProgram,
    pub network: NetworkSpec,
    pub fleet: FleetSpec,
}

impl FlowProblem {
    /// Profit (negated minimization objective) at `x`.
    pub fn profit(&self, x: &[f64]) -> f64 {
        -self.qp.objective(x)
    }
}

/// Builds the problem; rejects invalid specs, `m < 2` and `v_max = 0`.
pub fn build_problem(net: &NetworkSpec, fleet: &FleetSpec) -> Result<FlowProblem> {
    validate_network(net).merge(validate_fleet(fleet)).into_result()?;
    let idx = VarIndex { m: net.m, v_max: fleet.v_max as usize };
    let (m, vm) = (idx.m, idx.v_max);
    let n = idx.num_vars();
    let beta = fleet.beta();
    let tau = f64::from(fleet.tau);
    let lmax = net.wtp_max;

    let mut q_diag = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b = vec![0.0; idx.num_rows()];
    let mut upper = vec![None; n];

    for i in 0..m {
        let theta = net.arrival_rates[i];
        let k = idx.price(i);
        q_diag[k] = 2.0 * theta / lmax;
        c[k] = -theta;
        upper[k] = Some(lmax);
        for j in (0..m).filter(|&j| j != i) {
            let coeff = theta * net.routing[i][j] / lmax;
            if coeff != 0.0 {
                cols[k].push((idx.demand_row(i, j), coeff));
            }
            b[idx.demand_row(i, j)] = theta * net.routing[i][j];
        }
    }
    // Each flow variable leaves one (node, level) and enters another.
    for i in 0..m {
        for v in 0..vm {
            let k = idx.charge(i, v);
            c[k] = beta + net.prices[i];
            cols[k] = vec![(idx.balance_row(i, v), 1.0), (idx.balance_row(i, v + 1), -1.0)];
        }
    }
    for (i, j) in idx.pairs() {
        for v in 1..=vm {
            let k = idx.trip(i, j, v);
            c[k] = tau * beta;
            cols[k] = vec![
                (idx.demand_row(i, j), 1.0),
                (idx.balance_row(i, v), 1.0),
                (idx.balance_row(j, v - 1), -1.0),
            ];
            let k = idx.rebalance(i, j, v);
            c[k] = tau * beta;
            cols[k] = vec![(idx.balance_row(i, v), 1.0), (idx.balance_row(j, v - 1), -1.0)];
        }
    }
    for col in &mut cols {
        col.sort_by_key(|&(r, _)| r);
    }

    Ok(FlowProblem {
        index: idx,
        qp: QuadProgram { q_diag, c, cols, b, upper },
        network: net.clone(),
        fleet: fleet.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverTolerances {
    /// Acceptance bound on every KKT residual and on the relative duality gap.
    pub kkt: f64,
    /// Internal convergence target of the interior point iteration.
    pub target: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances { kkt: 1e-6, target: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
}

/// Optimal plan and its certificate.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub prices: Vec<f64>,
    /// Full primal vector, indexed by [`VarIndex`].
    pub x: Vec<f64>,
    /// Demand-satisfaction duals, `lambda[i][j]` (zero on the diagonal).
    pub lambda: Vec<Vec<f64>>,
    /// Flow-balance duals `nu[i][v]`, defined up to a common constant.
    pub nu: Vec<Vec<f64>>,
    /// Multipliers of `x >= 0`.
    pub z_lower: Vec<f64>,
    /// Multipliers of the price caps (zero for unbounded columns).
    pub w_upper: Vec<f64>,
    pub profit: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt: KktReport,
}

impl FlowSolution {
    pub fn total_trips(&self, index: &VarIndex) -> f64 {
        index
            .pairs()
            .flat_map(|(i, j)| (1..=index.v_max).map(move |v| index.trip(i, j, v)))
            .map(|k| self.x[k])
            .sum()
    }

    pub fn total_rebalancing(&self, index: &VarIndex) -> f64 {
        index
            .pairs()
            .flat_map(|(i, j)| (1..=index.v_max).map(move |v| index.rebalance(i, j, v)))
            .map(|k| self.x[k])
            .sum()
    }

    /// `sum_j lambda_ij alpha_ij` per node.
    pub fn ride_cost(&self, net: &NetworkSpec) -> Vec<f64> {
        (0..net.m)
            .map(|i| (0..net.m).map(|j| self.lambda[i][j] * net.routing[i][j]).sum())
            .collect()
    }
}

/// Solves the flow problem. A result whose KKT residuals exceed `tol.kkt` is
/// reported as [`Error::NumericalFailure`].
pub fn solve(problem: &FlowProblem, tol: &SolverTolerances) -> Result<FlowSolution> {
    let idx = problem.index;
    // The balance rows sum to zero (every flow enters one row and leaves
    // another), so one of them is redundant.
    let dropped = [idx.balance_row(0, 0)];
    let settings = IpmSettings { tol: tol.target, max_iter: tol.max_iter, ..IpmSettings::default() };
    let res = ipm::solve(&problem.qp, &dropped, &settings);

    let x = res.x;
    let mut lambda = vec![vec![0.0; idx.m]; idx.m];
    for (i, j) in idx.pairs() {
        lambda[i][j] = res.y[idx.demand_row(i, j)];
    }
    let nu = (0..idx.m)
        .map(|i| (0..=idx.v_max).map(|v| res.y[idx.balance_row(i, v)]).collect())
        .collect();
    let prices = (0..idx.m).map(|i| x[idx.price(i)]).collect();
    let profit = problem.profit(&x);

    let kkt = kkt_residuals(&problem.qp, &x, &res.y, &res.z, &res.w);
    if !kkt.within(tol.kkt) {
        return Err(Error::NumericalFailure {
            iterations: res.iterations,
            report: format!("{:?}: {kkt}", res.status),
        });
    }
    Ok(FlowSolution {
        prices,
        x,
        lambda,
        nu,
        z_lower: res.z,
        w_upper: res.w,
        profit,
        status: SolveStatus::Optimal,
        iterations: res.iterations,
        kkt,
    })
}

/// Builds and solves in one go.
pub fn optimize(net: &NetworkSpec, fleet: &FleetSpec) -> Result<(FlowProblem, FlowSolution)> {
    let problem = build_problem(net, fleet)?;
    let solution = solve(&problem, &SolverTolerances::default())?;
    Ok((problem, solution))
}

/// Optimal prices implied by demand duals: `(wtp_max + sum_j lambda_ij alpha_ij) / 2`.
pub fn prices_from_duals(lambda: &[Vec<f64>], net: &NetworkSpec) -> Vec<f64> {
    (0..net.m)
        .map(|i| {
            let cost: f64 = (0..net.m).map(|j| lambda[i][j] * net.routing[i][j]).sum();
            0.5 * (net.wtp_max + cost)
        })
        .collect()
}

/// Worst-case ride price: charging at both ends plus four vehicle-trips of
/// operating cost.
pub fn price_upper_bound(net: &NetworkSpec, fleet: &FleetSpec) -> Vec<f64> {
    let beta = fleet.beta();
    let tau = f64::from(fleet.tau);
    (0..net.m)
        .map(|i| {
            let dest: f64 = (0..net.m).map(|j| net.routing[i][j] * net.prices[j]).sum();
            0.5 * (net.wtp_max + net.prices[i] + dest + (2.0 + 2.0 * tau) * beta)
        })
        .collect()
}

/// Profit as a function of prices alone, `sum_i theta_i / wtp_max * (wtp_max - ell_i)^2`.
pub fn profit_identity(prices: &[f64], net: &NetworkSpec) -> f64 {
    prices
        .iter()
        .zip(&net.arrival_rates)
        .map(|(l, theta)| theta / net.wtp_max * (net.wtp_max - l).powi(2))
        .sum()
}

/// KKT residuals of a primal-dual pair, recomputed from the problem data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// Per-row `A x - b`.
    #[serde(skip)]
    pub row_residuals: Vec<f64>,
    /// `max |A x - b|` together with bound violations of `x`.
    pub primal: f64,
    /// Largest negative bound multiplier.
    pub dual: f64,
    /// `max |q x + c - A'y - z + w|`.
    pub stationarity: f64,
    /// `max_k max(|x_k z_k|, |(u_k - x_k) w_k|)`.
    pub complementarity: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|primal - dual| / (1 + |profit|)`.
    pub gap: f64,
}

impl KktReport {
    pub fn within(&self, tol: f64) -> bool {
        self.primal <= tol
            && self.dual <= tol
            && self.stationarity <= tol
            && self.complementarity <= tol
            && self.gap <= tol
    }
}

impl std::fmt::Display for KktReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "primal {:.3e}, dual {:.3e}, stationarity {:.3e}, complementarity {:.3e}, gap {:.3e}",
            self.primal, self.dual, self.stationarity, self.complementarity, self.gap
        )
    }
}

/// Recomputes every residual of `solution` against the problem data.
pub fn verify_kkt(problem: &FlowProblem, solution: &FlowSolution) -> KktReport {
    let idx = problem.index;
    let mut y = vec![0.0; idx.num_rows()];
    for (i, j) in idx.pairs() {
        y[idx.demand_row(i, j)] = solution.lambda[i][j];
    }
    for i in 0..idx.m {
        for v in 0..=idx.v_max {
            y[idx.balance_row(i, v)] = solution.nu[i][v];
        }
    }
    kkt_residuals(&problem.qp, &solution.x, &y, &solution.z_lower, &solution.w_upper)
}

fn kkt_residuals(qp: &QuadProgram, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> KktReport {
    let ax = qp.mul_a(x);
    let row_residuals: Vec<f64> = ax.iter().zip(&qp.b).map(|(a, b)| a - b).collect();
    let mut primal = row_residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let aty = qp.mul_at(y);

    let mut dual = 0.0_f64;
    let mut stationarity = 0.0_f64;
    let mut complementarity = 0.0_f64;
    let mut bound_term = 0.0;
    for k in 0..qp.num_vars() {
        let xk = x[k];
        primal = primal.max(-xk);
        let wk = if qp.upper[k].is_some() { w[k] } else { 0.0 };
        dual = dual.max(-z[k]).max(-wk);
        let r = qp.q_diag[k] * xk + qp.c[k] - aty[k] - z[k] + wk;
        stationarity = stationarity.max(r.abs());
        complementarity = complementarity.max((xk * z[k]).abs());
        if let Some(u) = qp.upper[k] {
            primal = primal.max(xk - u);
            complementarity = complementarity.max(((u - xk) * wk).abs());
            bound_term += u * wk;
        }
    }
    let quad: f64 = x.iter().zip(&qp.q_diag).map(|(xk, q)| q * xk * xk).sum();
    let primal_min = qp.objective(x);
    // Wolfe dual of the minimization.
    let dual_min = qp.b.iter().zip(y).map(|(b, y)| b * y).sum::<f64>() - 0.5 * quad - bound_term;
    let profit = -primal_min;
    KktReport {
        row_residuals,
        primal,
        dual,
        stationarity,
        complementarity,
        primal_objective: profit,
        dual_objective: -dual_min,
        gap: (primal_min - dual_min).abs() / (1.0 + profit.abs()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(theta: f64) -> (NetworkSpec, FleetSpec) {
        (
            NetworkSpec {
                m: 2,
                prices: vec![1.0, 1.0],
                arrival_rates: vec![theta, theta],
                routing: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                wtp_max: 40.0,
            },
            FleetSpec { beta0: 0.1, xi: 0.0, v_max: 1, tau: 10, p_s: None },
        )
    }

    #[test]
    fn counts_two_node_single_unit() {
        let (net, fleet) = symmetric(1.0);
        let p = build_problem(&net, &fleet).unwrap();
        assert_eq!(p.index.num_vars(), 2 + 2 + 4);
        assert_eq!(p.index.num_demand_rows(), 2);
        assert_eq!(p.index.num_balance_rows(), 4);
    }

    #[test]
    fn counts_ten_nodes_nine_units() {
        let idx = VarIndex { m: 10, v_max: 9 };
        assert_eq!(idx.num_vars(), 10 + 90 + 1620);
    }

    #[test]
    fn rejects_zero_battery_and_single_node() {
        let (net, mut fleet) = symmetric(1.0);
        fleet.v_max = 0;
        assert!(build_problem(&net, &fleet).is_err());
        let single = NetworkSpec {
            m: 1,
            prices: vec![1.0],
            arrival_rates: vec![1.0],
            routing: vec![vec![0.0]],
            wtp_max: 40.0,
        };
        assert!(build_problem(&single, &symmetric(1.0).1).is_err());
    }

    #[test]
    fn every_flow_in_two_balance_rows() {
        let net = NetworkSpec {
            m: 3,
            prices: vec![1.0, 2.0, 3.0],
            arrival_rates: vec![1.0, 0.5, 0.0],
            routing: vec![vec![0.0, 0.5, 0.5], vec![1.0, 0.0, 0.0], vec![0.3, 0.7, 0.0]],
            wtp_max: 40.0,
        };
        let fleet = FleetSpec { beta0: 0.1, xi: 0.003, v_max: 3, tau: 10, p_s: None };
        let p = build_problem(&net, &fleet).unwrap();
        let first_balance = p.index.num_demand_rows();
        for (k, col) in p.qp.cols.iter().enumerate().skip(net.m) {
            let bal: Vec<_> = col.iter().filter(|(r, _)| *r >= first_balance).collect();
            assert_eq!(bal.len(), 2, "column {k}");
            assert_eq!(bal.iter().map(|(_, a)| a).sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn zero_demand_pair_forces_zero_trips() {
        let net = NetworkSpec {
            m: 3,
            prices: vec![1.0, 2.0, 3.0],
            arrival_rates: vec![1.0, 1.0, 1.0],
            routing: vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]],
            wtp_max: 40.0,
        };
        let fleet = FleetSpec { beta0: 0.1, xi: 0.0, v_max: 2, tau: 10, p_s: None };
        let p = build_problem(&net, &fleet).unwrap();
        let row = p.index.demand_row(0, 2);
        assert_eq!(p.qp.b[row], 0.0);
        assert!(!p.qp.cols[p.index.price(0)].iter().any(|(r, _)| *r == row));
        let sol = solve(&p, &SolverTolerances::default()).unwrap();
        let trips: f64 = (1..=2).map(|v| sol.x[p.index.trip(0, 2, v)]).sum();
        assert!(trips.abs() < 1e-7);
    }

    #[test]
    fn prices_from_duals_examples() {
        let (net, _) = symmetric(1.0);
        let lambda = vec![vec![0.0, 2.1], vec![2.1, 0.0]];
        let p = prices_from_duals(&lambda, &net);
        assert!((p[0] - 21.05).abs() < 1e-12);
        let zero = prices_from_duals(&[vec![0.0; 2], vec![0.0; 2]], &net);
        assert_eq!(zero, vec![20.0, 20.0]);
        let full = prices_from_duals(&[vec![40.0; 2], vec![40.0; 2]], &net);
        assert_eq!(full, vec![40.0, 40.0]);
    }

    #[test]
    fn upper_bound_examples() {
        let (net, fleet) = symmetric(1.0);
        let bound = price_upper_bound(&net, &fleet);
        assert!((bound[0] - 22.1).abs() < 1e-12);
        let mut free = net.clone();
        free.prices = vec![0.0, 0.0];
        let fleet0 = FleetSpec { beta0: 0.0, ..fleet };
        assert_eq!(price_upper_bound(&free, &fleet0), vec![20.0, 20.0]);
    }

    #[test]
    fn profit_identity_examples() {
        let (net, _) = symmetric(1.0);
        assert_eq!(profit_identity(&[40.0, 40.0], &net), 0.0);
        let single = NetworkSpec {
            m: 2,
            prices: vec![1.0, 1.0],
            arrival_rates: vec![1.0, 0.0],
            routing: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            wtp_max: 40.0,
        };
        // (40 - 21.05)^2 / 40
        assert!((profit_identity(&[21.05, 0.0], &single) - 8.977_562_5).abs() < 1e-9);
    }

    #[test]
    fn symmetric_oracle() {
        // Each ride costs one trip (tau beta) plus one charge (beta + p), so
        // ell* = (wtp_max + (tau + 1) beta + p) / 2 = 21.05.
        for v_max in 1..=3 {
            let (net, mut fleet) = symmetric(1.0);
            fleet.v_max = v_max;
            let (_, sol) = optimize(&net, &fleet).unwrap();
            for &l in &sol.prices {
                assert!((l - 21.05).abs() < 1e-6, "v_max {v_max}: {l}");
            }
            assert!((sol.profit - 17.955_125).abs() < 1e-6);
        }
    }

    #[test]
    fn no_demand_means_no_flow() {
        let (net, fleet) = symmetric(0.0);
        let (p, sol) = optimize(&net, &fleet).unwrap();
        assert!(sol.profit.abs() < 1e-8);
        assert!(sol.x[p.index.num_demand_rows()..].iter().all(|&f| f.abs() < 1e-7));
    }

    #[test]
    fn perturbed_flow_breaks_two_balance_rows() {
        let (net, fleet) = symmetric(1.0);
        let (p, mut sol) = optimize(&net, &fleet).unwrap();
        let k = p.index.rebalance(0, 1, 1);
        sol.x[k] += 1.0;
        let report = verify_kkt(&p, &sol);
        let bad: Vec<usize> = report
            .row_residuals
            .iter()
            .enumerate()
            .filter(|(_, r)| r.abs() > 0.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(bad, vec![p.index.balance_row(0, 1), p.index.balance_row(1, 0)]);
        assert!((report.primal - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_point_demand_residual() {
        let (net, fleet) = symmetric(1.0);
        let (p, mut sol) = optimize(&net, &fleet).unwrap();
        let ell = sol.prices.clone();
        for k in net.m..sol.x.len() {
            sol.x[k] = 0.0;
        }
        let report = verify_kkt(&p, &sol);
        for (i, j) in p.index.pairs() {
            let expected = net.arrival_rates[i] * (1.0 - ell[i] / net.wtp_max) * net.routing[i][j];
            let r = report.row_residuals[p.index.demand_row(i, j)];
            assert!((r.abs() - expected).abs() < 1e-12);
        }
    }
}
