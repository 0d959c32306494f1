//! CSV and JSON export of a solved flow problem.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{price_upper_bound, FlowProblem, FlowSolution, KktReport, SolveStatus};
use crate::error::Result;

pub const NODE_HEADER: &str = "node,ell_star,bound,sum_lambda_alpha";
pub const FLOW_HEADER: &str = "i,j,v,x_flow,r_flow";

/// One row per node.
pub fn nodes_csv(problem: &FlowProblem, solution: &FlowSolution) -> String {
    let bound = price_upper_bound(&problem.network, &problem.fleet);
    let cost = solution.ride_cost(&problem.network);
    let mut out = String::from(NODE_HEADER);
    out.push('\n');
    for i in 0..problem.index.m {
        let _ = writeln!(out, "{i},{},{},{}", solution.prices[i], bound[i], cost[i]);
    }
    out
}

/// One row per ordered pair and battery level.
pub fn flows_csv(problem: &FlowProblem, solution: &FlowSolution) -> String {
    let idx = problem.index;
    let mut out = String::from(FLOW_HEADER);
    out.push('\n');
    for (i, j) in idx.pairs() {
        for v in 1..=idx.v_max {
            let x = solution.x[idx.trip(i, j, v)];
            let r = solution.x[idx.rebalance(i, j, v)];
            let _ = writeln!(out, "{i},{j},{v},{x},{r}");
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub profit: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: KktReport,
    pub total_trips: f64,
    pub total_rebalancing: f64,
}

pub fn summary(problem: &FlowProblem, solution: &FlowSolution) -> SolutionSummary {
    SolutionSummary {
        profit: solution.profit,
        status: solution.status,
        iterations: solution.iterations,
        residuals: solution.kkt.clone(),
        total_trips: solution.total_trips(&problem.index),
        total_rebalancing: solution.total_rebalancing(&problem.index),
    }
}

/// Writes `nodes.csv`, `flows.csv` and `summary.json` into `dir`.
pub fn write_solution(dir: &Path, problem: &FlowProblem, solution: &FlowSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("nodes.csv"), nodes_csv(problem, solution))?;
    std::fs::write(dir.join("flows.csv"), flows_csv(problem, solution))?;
    let json = serde_json::to_string_pretty(&summary(problem, solution))
        .expect("summary serializes");
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}
