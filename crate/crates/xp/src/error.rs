use thiserror::Error;

pub type Result<T, E = XpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum XpError {
    #[error(transparent)]
    Core(#[from] amod_core::Error),

    #[error("network {network} (seed {seed}), v_max = {v_max}: {source}")]
    Network {
        network: usize,
        seed: u64,
        v_max: u32,
        #[source]
        source: amod_core::Error,
    },

    #[error("malformed csv {path}: {reason}")]
    MalformedCsv { path: String, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("plot: {0}")]
    Plot(String),
}

impl XpError {
    /// Process exit code: 2 for bad input, 3 for solver failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use amod_core::Error as E;
        let core = match self {
            XpError::Core(e) | XpError::Network { source: e, .. } => e,
            XpError::MalformedCsv { .. } => return 2,
            _ => return 1,
        };
        match core {
            E::NumericalFailure { .. } | E::Infeasible(_) | E::StrandedVehicle { .. } => 3,
            E::Io(_) => 1,
            _ => 2,
        }
    }
}
