use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("Lorenz integration diverged after {steps} steps")]
    IntegrationDiverged { steps: usize },

    #[error("cannot fit degree {degree} to {n} points: need at least {} points", degree + 1)]
    Underdetermined { degree: usize, n: usize },

    #[error("rank-deficient design at degree {degree}: numerical rank {rank} < {}", degree + 1)]
    RankDeficient { degree: usize, rank: usize },

    #[error("degenerate fit at degree {degree}: training error is zero")]
    DegenerateFit { degree: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "mixture marginal likelihood at degree {degree}: closed form {closed_bits} bits vs \
         Monte Carlo {mc_bits} bits ({deviation:.2} standard errors)"
    )]
    NumericIntegrity {
        degree: usize,
        closed_bits: f64,
        mc_bits: f64,
        deviation: f64,
    },

    #[error("degree {degree}: {source}")]
    AtDegree {
        degree: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_degree(degree: usize, source: Error) -> Self {
        Error::AtDegree {
            degree,
            source: Box::new(source),
        }
    }

    /// Strips `AtDegree` annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtDegree { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numeric-integrity failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config { .. } => 2,
            Error::NumericIntegrity { .. } => 3,
            _ => 1,
        }
    }
}
