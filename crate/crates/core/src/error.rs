use thiserror::Error;

use crate::case::BusId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("islanded network: {0}")]
    IslandedNetwork(String),

    #[error("Kron reduction pivot {pivot:e} at node {node} is below 1e-12")]
    SingularReduction { node: usize, pivot: f64 },

    #[error("eigenvector matrix is near-defective (condition number {condition:e})")]
    DefectiveMatrix { condition: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("resonant eigenvalue pair ({i}, {j}): |lambda_i + lambda_j| = {magnitude:e}")]
    ResonantPair { i: usize, j: usize, magnitude: f64 },

    #[error("system is not strictly stable (max Re lambda = {max_real:e})")]
    UnstableSystem { max_real: f64 },

    #[error("imaginary residue {residue:e} exceeds tolerance for a real-valued quantity")]
    ComplexResidue { residue: f64 },

    #[error("time step {dt:e} s exceeds {limit:e} s needed to resolve the fastest mode")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("terminal energy ratio {ratio:e} exceeds 1e-8; extend the horizon")]
    TailNotDecayed { ratio: f64 },

    #[error("mode matching ambiguous near lambda = {re:.6}{im:+.6}i")]
    ModeMatchingAmbiguous { re: f64, im: f64 },

    #[error("no oscillatory electromechanical mode found")]
    NoOscillatoryMode,

    #[error("disturbance probabilities sum to {sum}, expected 1")]
    ProbabilityMass { sum: f64 },

    #[error("candidate bus {bus}: {source}")]
    Candidate {
        bus: BusId,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-parsable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::NonConvergence { .. } => "non_convergence",
            Error::IslandedNetwork(_) => "islanded_network",
            Error::SingularReduction { .. } => "singular_reduction",
            Error::DefectiveMatrix { .. } => "defective_matrix",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ResonantPair { .. } => "resonant_pair",
            Error::UnstableSystem { .. } => "unstable_system",
            Error::ComplexResidue { .. } => "complex_residue",
            Error::StepTooLarge { .. } => "step_too_large",
            Error::TailNotDecayed { .. } => "tail_not_decayed",
            Error::ModeMatchingAmbiguous { .. } => "mode_matching_ambiguous",
            Error::NoOscillatoryMode => "no_oscillatory_mode",
            Error::ProbabilityMass { .. } => "probability_mass",
            Error::Candidate { source, .. } => source.code(),
            Error::Io(_) => "io",
        }
    }

    /// Process exit code used by the CLI. Parse and validation failures are distinct.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::Validation(_) | Error::ProbabilityMass { .. } => 3,
            Error::Io(_) => 4,
            Error::Candidate { source, .. } => source.exit_code(),
            _ => 5,
        }
    }

    pub(crate) fn for_candidate(self, bus: BusId) -> Error {
        match self {
            e @ Error::Candidate { .. } => e,
            e => Error::Candidate {
                bus,
                source: Box::new(e),
            },
        }
    }
}
