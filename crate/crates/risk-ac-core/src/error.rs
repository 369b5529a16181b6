//! Error taxonomy shared across the library.
//!
//! Three families matter to callers: configuration/validation problems,
//! numeric failures (singular solves, divergence), and verification
//! failures (a checked mathematical property does not hold).

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Malformed model or parameters (bad dimensions, invalid probabilities,
    /// out-of-range constants, schedule ordering violations).
    Config(String),
    /// A linear system could not be solved.
    SingularSystem(String),
    /// The induced chain has more than one recurrent class.
    IrreducibilityViolation(String),
    /// Critic feature matrix is rank deficient.
    RankDeficient(String),
    /// Feature span contains the all-ones vector without the tabular exemption.
    ConstantInSpan(String),
    /// An iterate exceeded the divergence guard.
    Diverged(String),
    /// A matrix expected to be symmetric was not.
    SymmetryViolation(String),
    /// Estimated variance fell below the positivity floor (Sharpe directions).
    DegenerateVariance(String),
    /// A verified property (fixed-point residual, spectrum sign, inverse
    /// accuracy) failed its tolerance.
    Verification(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::SingularSystem(m) => write!(f, "singular system: {m}"),
            Error::IrreducibilityViolation(m) => write!(f, "irreducibility violation: {m}"),
            Error::RankDeficient(m) => write!(f, "rank-deficient features: {m}"),
            Error::ConstantInSpan(m) => write!(f, "constant vector in feature span: {m}"),
            Error::Diverged(m) => write!(f, "divergence: {m}"),
            Error::SymmetryViolation(m) => write!(f, "symmetry violation: {m}"),
            Error::DegenerateVariance(m) => write!(f, "degenerate variance: {m}"),
            Error::Verification(m) => write!(f, "verification failure: {m}"),
        }
    }
}

impl Error {
    /// True for errors that indicate bad inputs rather than runtime numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::RankDeficient(_) | Error::ConstantInSpan(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
