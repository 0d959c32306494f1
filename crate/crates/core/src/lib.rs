//! Profit-maximizing pricing, routing, charging and rebalancing for an
//! electric autonomous mobility-on-demand fleet, and analysis of threshold
//! smart-charging policies under random electricity prices.
//!
//! * [`model`]: network, fleet, price-distribution and simulation inputs.
//! * [`flow`]: the network-flow quadratic program, its duals and certificates.
//! * [`policy`]: threshold recursion, stationary distribution, battery sizing
//!   and the rebalancing approximation.
//! * [`sim`]: seeded Monte Carlo simulation of a single vehicle's
//!   (charge level, price) chain.

pub mod error;
pub mod exec;
pub mod flow;
pub mod model;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{FleetSpec, NetworkSpec, PriceDistribution, SimConfig};
