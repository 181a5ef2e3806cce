//! Error type shared by all subcommands, with a fixed exit-code mapping:
//! domain failures exit 1, malformed input exits 2, and a solver that ran
//! out of iterations exits 3. Scripts can branch on the code alone.

use combkit_core::entropy::EntropyError;
use combkit_core::hypotest::HypotestError;
use combkit_core::network::NetworkError;
use combkit_core::performance::PerformanceError;
use combkit_core::sdp::SdpError;
use combkit_core::tensorspace::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

/// Classify a core-library error: breakdowns inside the interior-point
/// iteration become `Solver`, everything else is a `Domain` failure on
/// otherwise well-formed input. The walk covers wrapped errors so a solver
/// failure surfaced through an entropy or hypothesis-testing call still
/// maps to the solver exit code.
pub fn classify<E: std::error::Error + 'static>(err: E) -> CliError {
    let mut cursor: Option<&(dyn std::error::Error + 'static)> = Some(&err);
    while let Some(e) = cursor {
        if let Some(SdpError::Numerical(_)) = e.downcast_ref::<SdpError>() {
            return CliError::Solver(format!("{err}"));
        }
        cursor = e.source();
    }
    CliError::Domain(format!("{err}"))
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        classify(e)
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        classify(e)
    }
}

impl From<SdpError> for CliError {
    fn from(e: SdpError) -> Self {
        classify(e)
    }
}

impl From<EntropyError> for CliError {
    fn from(e: EntropyError) -> Self {
        classify(e)
    }
}

impl From<HypotestError> for CliError {
    fn from(e: HypotestError) -> Self {
        classify(e)
    }
}

impl From<PerformanceError> for CliError {
    fn from(e: PerformanceError) -> Self {
        classify(e)
    }
}
