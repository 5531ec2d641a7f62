use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid topology `{topology}`: {reason}")]
    InvalidTopology { topology: String, reason: String },
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("unknown electrode `{0}`")]
    UnknownElectrode(String),
    #[error("unknown segment {segment} in topology {topology}")]
    UnknownSegment { topology: usize, segment: u32 },
    #[error("singular network: component {component} has no fixed-potential electrode")]
    Singular { component: String },
    #[error("kirchhoff residual {residual:e} exceeds bound {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("time step {dt} s violates the stability limit {limit} s")]
    Stability { dt: f64, limit: f64 },
    #[error("DC fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("at t = {time} s: {source}")]
    Transient { time: f64, source: Box<Error> },
    #[error("sweep failed at {voltage} V: {source}")]
    Sweep { voltage: f64, source: Box<Error> },
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
