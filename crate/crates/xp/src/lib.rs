//! Experiment harness for `amod-core`: random networks, the capacity and
//! rebalancing sweeps, CSV output and SVG plots.

pub mod error;
pub mod experiments;
pub mod network;
pub mod plot;

pub use error::{Result, XpError};
pub use experiments::ExperimentConfig;

/// `x` with `digits` significant digits in plain decimal notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
