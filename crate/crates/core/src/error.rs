use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure categories shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A value was produced or supplied that is NaN or infinite.
    NonFinite(String),
    /// Malformed caller input (bad label, empty corpus, length mismatch, ...).
    Input(String),
    /// Invalid configuration.
    Config(String),
    /// Data files disagree with the examples they describe.
    Data(String),
    /// Backward was requested twice on the same graph without zeroing.
    GradientsNotReset,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => write!(
                f,
                "dimension mismatch in {op}: {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::NonFinite(what) => write!(f, "non-finite value: {what}"),
            Error::Input(msg) => write!(f, "invalid input: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::GradientsNotReset => {
                f.write_str("backward already ran on this graph; call zero_grad first")
            }
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for Error {}
