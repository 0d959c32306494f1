use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("solver failed after {iterations} iterations: {report}")]
    NumericalFailure { iterations: usize, report: String },

    #[error("battery capacity {v_max} is below the minimum of {min}")]
    BatteryTooSmall { v_max: u32, min: u32 },

    #[error("price distribution is degenerate (p_min == p_max)")]
    DegenerateDistribution,

    #[error("price density integrates to {mass}, expected 1")]
    NonNormalizedDensity { mass: f64 },

    #[error("price support would start at {p_min} < 0")]
    NegativePriceSupport { p_min: f64 },

    #[error("rebalancing cost b = {b} outside [{lo}, {hi}]")]
    ConstraintViolation { b: f64, lo: f64, hi: f64 },

    #[error("vehicle stranded at v = 0 with price {price} (threshold {threshold})")]
    StrandedVehicle { price: f64, threshold: f64 },
}
