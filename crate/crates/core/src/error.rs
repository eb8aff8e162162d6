use std::fmt;

use thiserror::Error;

/// A single violated model invariant found during validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSquare { matrix: &'static str, rows: usize, cols: usize },
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    NegativeEntry { matrix: &'static str, row: usize, col: usize, value: f64 },
    NonFinite { matrix: &'static str, row: usize, col: usize },
    NonStochasticRow { matrix: &'static str, row: usize, sum: f64 },
    Reducible { matrix: &'static str },
    Periodic { matrix: &'static str, period: usize },
    NonIntegerScore { value: f64 },
    AlphabetTooLarge { size: usize },
    EmptyAlphabet,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSquare { matrix, rows, cols } => {
                write!(f, "{matrix} is {rows}x{cols}, expected a square matrix")
            }
            Violation::DimensionMismatch { what, expected, found } => {
                write!(f, "{what}: expected dimension {expected}, found {found}")
            }
            Violation::NegativeEntry { matrix, row, col, value } => {
                write!(f, "{matrix}[{row}][{col}] = {value} is negative")
            }
            Violation::NonFinite { matrix, row, col } => {
                write!(f, "{matrix}[{row}][{col}] is not finite")
            }
            Violation::NonStochasticRow { matrix, row, sum } => {
                write!(f, "row {row} of {matrix} sums to {sum}, expected 1")
            }
            Violation::Reducible { matrix } => write!(f, "{matrix} is reducible"),
            Violation::Periodic { matrix, period } => {
                write!(f, "{matrix} is periodic with period {period}")
            }
            Violation::NonIntegerScore { value } => {
                write!(f, "lattice model declared but score {value} is not an integer")
            }
            Violation::AlphabetTooLarge { size } => {
                write!(f, "alphabet size {size} exceeds the supported maximum of 256")
            }
            Violation::EmptyAlphabet => write!(f, "alphabet is empty"),
        }
    }
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{what} did not converge after {iterations} iterations")]
    ConvergenceFailure { what: &'static str, iterations: usize },

    #[error("expected score {mu} is not negative")]
    DriftNotNegative { mu: f64 },

    #[error("no cycle with positive total score exists; phi(theta) never reaches 1")]
    NoPositiveCycle,

    #[error("model is not i.i.d.: {0}")]
    NotIid(String),

    #[error("objective increases without bound in J{which} optimization")]
    Unbounded { which: u8 },

    #[error("standard error {stderr} of {what} exceeds the requested cap {cap}")]
    InsufficientReplicates { what: &'static str, stderr: f64, cap: f64 },

    #[error("a seed is required for stochastic computations")]
    SeedRequired,

    #[error("the Poisson limit condition is not verified for this model ({0}); use the override to proceed")]
    ConditionNotVerified(String),

    #[error("sequence {sequence}, position {position}: symbol {symbol:?} is not in the alphabet")]
    SymbolOutOfAlphabet { sequence: usize, position: usize, symbol: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
