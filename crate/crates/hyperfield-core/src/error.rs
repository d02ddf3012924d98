//! Error type shared by every core module.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the core engine.
///
/// The variants split along the lines consumers care about: configuration
/// problems (bad arguments, incoherent model combinations), data problems
/// (malformed inputs), and numerical failures (non-finite values).
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two operands had incompatible shapes; names the op and both shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A parameter or configuration value is invalid.
    InvalidArgument(String),
    /// Input data violates a documented precondition.
    InvalidData(String),
    /// A non-finite value appeared where finite math is required.
    NonFinite(String),
    /// A discrete-channel field variant was asked for a wavelength it has no
    /// channel for (these variants cannot interpolate).
    NoChannelMatch { lambda_nm: f64 },
    /// A wavelength-conditioned component was evaluated without a wavelength.
    MissingWavelength,
    /// Camera frusta have no common axis-aligned region.
    EmptySceneBox,
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            CoreError::InvalidArgument(s) => write!(f, "invalid argument: {s}"),
            CoreError::InvalidData(s) => write!(f, "invalid data: {s}"),
            CoreError::NonFinite(s) => write!(f, "non-finite value in {s}"),
            CoreError::NoChannelMatch { lambda_nm } => write!(
                f,
                "no channel matches {lambda_nm} nm: discrete-channel variants cannot interpolate"
            ),
            CoreError::MissingWavelength => {
                write!(f, "wavelength required but not provided")
            }
            CoreError::EmptySceneBox => write!(
                f,
                "camera frusta share no volume; review the poses and depth range"
            ),
        }
    }
}

impl core::error::Error for CoreError {}
