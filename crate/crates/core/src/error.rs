use thiserror::Error;

/// Errors raised by the pricing engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlmmError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("Greeks are undefined at expiry or zero effective volatility (tau={tau}, sigma={sigma})")]
    DegenerateExpiry { tau: f64, sigma: f64 },

    #[error("regularity violated at t={t}, s1={s1}, s2={s2}: 1 - lambda*Gamma11 = {denom} < {delta0}")]
    Regularity {
        t: f64,
        s1: f64,
        s2: f64,
        denom: f64,
        delta0: f64,
    },

    #[error("non-positive price at step {step}: s1={s1}, s2={s2}")]
    NonPositivePrice { step: usize, s1: f64, s2: f64 },

    #[error("all {n_paths} simulated paths were discarded")]
    AllPathsDiscarded { n_paths: usize },
}

impl FlmmError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        FlmmError::InvalidParams {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors that stem from the numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, FlmmError::InvalidParams { .. })
    }
}

pub type Result<T> = std::result::Result<T, FlmmError>;
