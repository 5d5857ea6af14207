use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An enumeration would exceed the configured point budget.
    #[error("capacity error: {what} needs about {needed} points, budget is {cap}")]
    Capacity {
        what: &'static str,
        needed: u64,
        cap: u64,
    },

    /// A calibration target cannot be reached inside the admissible radius interval.
    #[error("range error: target a = {target} unreachable, a at right endpoint r = {r_max} is {a_max}")]
    Range { target: f64, r_max: f64, a_max: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
