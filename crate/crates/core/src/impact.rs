//! Truncated price impact, the delta-hedging feedback, and the resulting
//! risk-neutral diffusion coefficients of the two assets.
//!
//! With `lambda = lambda_bar(t, s1)` and the Margrabe Greeks at `tau = T - t`:
//!
//! ```text
//! sigma11 = sigma1 s1 / (1 - lambda Gamma11)
//! sigma12 = sigma2 s2 lambda Gamma12 / (1 - lambda Gamma11)
//! sigma21 = sigma2 rho s2
//! sigma22 = sigma2 sqrt(1 - rho^2) s2
//! ```
//!
//! `lambda_bar` is piecewise constant in `s1`, so its spatial derivatives are
//! taken as zero everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{FlmmError, Result};
use crate::margrabe::{margrabe_greeks, MarketState, ModelParams};

/// Parameters of the truncated impact function and the regularity guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactParams {
    /// Price impact per share.
    pub epsilon: f64,
    /// Decay constant of the impact near expiry.
    pub beta: f64,
    /// Trading floor: no impact below it.
    pub floor: f64,
    /// Trading cap: no impact above it.
    pub cap: f64,
    /// Minimum admissible value of `1 - lambda Gamma11`.
    pub delta0: f64,
}

impl Default for ImpactParams {
    fn default() -> Self {
        Self {
            epsilon: 0.04,
            beta: 100.0,
            floor: 1e-8,
            cap: 1e8,
            delta0: 1e-6,
        }
    }
}

impl ImpactParams {
    /// The frictionless market: no price impact at all.
    pub fn frictionless() -> Self {
        Self {
            epsilon: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(FlmmError::invalid("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(FlmmError::invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.floor.is_finite() && self.floor > 0.0 && self.cap > self.floor) {
            return Err(FlmmError::invalid(
                "floor/cap",
                format!("need 0 < floor < cap, got [{}, {}]", self.floor, self.cap),
            ));
        }
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return Err(FlmmError::invalid("delta0", format!("must lie in (0, 1), got {}", self.delta0)));
        }
        Ok(())
    }

    #[inline]
    pub fn in_band(&self, s1: f64) -> bool {
        self.floor <= s1 && s1 <= self.cap
    }

    /// Impact level inside the band, as a function of time only.
    #[inline]
    pub fn band_level(&self, t: f64, maturity: f64) -> f64 {
        let tau = (maturity - t).max(0.0);
        -self.epsilon * (-self.beta * tau * tau.sqrt()).exp_m1()
    }
}

/// `epsilon (1 - exp(-beta (T - t)^{3/2}))` inside `[floor, cap]`, zero outside.
pub fn lambda_bar(t: f64, s1: f64, maturity: f64, params: &ImpactParams) -> f64 {
    if params.in_band(s1) {
        params.band_level(t, maturity)
    } else {
        0.0
    }
}

/// Effective drift and diffusion loadings at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoeffs {
    pub mu1: f64,
    pub sig11: f64,
    pub sig12: f64,
    pub sig21: f64,
    pub sig22: f64,
    /// `1 - lambda Gamma11`.
    pub denom: f64,
}

/// Spatial derivatives of the diffusion loadings.
///
/// `j1[k][l] = d sigma_{1k} / d s_l` and likewise `j2`; row index is the
/// Brownian driver. `hess1[k][p][q] = d^2 sigma_{1k} / ds_p ds_q`. Asset 2's
/// loadings are linear in `s2`, so their second derivatives vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffJacobians {
    pub j1: [[f64; 2]; 2],
    pub j2: [[f64; 2]; 2],
    pub hess1: [[[f64; 2]; 2]; 2],
}

/// Value, gradient and Hessian of a scalar function of `(s1, s2)`.
#[derive(Debug, Clone, Copy, Default)]
struct Taylor2 {
    v: f64,
    d: [f64; 2],
    h: [[f64; 2]; 2],
}

impl Taylor2 {
    /// Derivatives of `num / den` from `num = f den` differentiated twice.
    fn quotient(num: Taylor2, den: Taylor2) -> Taylor2 {
        let f = num.v / den.v;
        let mut out = Taylor2 {
            v: f,
            ..Default::default()
        };
        for p in 0..2 {
            out.d[p] = (num.d[p] - f * den.d[p]) / den.v;
        }
        for p in 0..2 {
            for q in 0..2 {
                out.h[p][q] = (num.h[p][q]
                    - out.d[p] * den.d[q]
                    - out.d[q] * den.d[p]
                    - f * den.h[p][q])
                    / den.v;
            }
        }
        out
    }
}

/// Diffusion matrix with its first and (optionally) second derivatives.
///
/// `sigma[i][k]` is the loading of asset `i` on driver `k`,
/// `jac[i][k][l] = d sigma[i][k] / d s_l`, and `hess[k][p][q]` holds the
/// second derivatives of asset 1's loadings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDiffusion {
    pub sigma: [[f64; 2]; 2],
    pub jac: [[[f64; 2]; 2]; 2],
    pub hess: [[[f64; 2]; 2]; 2],
    pub denom: f64,
}

impl LocalDiffusion {
    /// Loadings of the frictionless market, where asset 1 is a plain GBM.
    #[inline]
    pub fn frictionless(state: &MarketState, model: &ModelParams) -> Self {
        let rho_bar = model.rho_bar();
        Self {
            sigma: [
                [model.sigma1 * state.s1, 0.0],
                [model.sigma2 * state.s2 * model.rho, model.sigma2 * state.s2 * rho_bar],
            ],
            jac: [
                [[model.sigma1, 0.0], [0.0, 0.0]],
                [[0.0, model.sigma2 * model.rho], [0.0, model.sigma2 * rho_bar]],
            ],
            hess: [[[0.0; 2]; 2]; 2],
            denom: 1.0,
        }
    }

    /// Loadings under impact level `lambda` (already truncated) at time-to-maturity `tau`.
    ///
    /// `lambda == 0` short-circuits to the frictionless loadings without
    /// evaluating any Greek.
    pub fn evaluate(
        t: f64,
        tau: f64,
        lambda: f64,
        state: &MarketState,
        model: &ModelParams,
        delta0: f64,
    ) -> Result<Self> {
        let mut out = Self::frictionless(state, model);
        if lambda == 0.0 {
            return Ok(out);
        }
        let g = margrabe_greeks(state, tau, model)?;
        let MarketState { s1, s2 } = *state;

        let den = Taylor2 {
            v: 1.0 - lambda * g.gamma11,
            d: [-lambda * g.speed111, -lambda * g.speed112],
            h: [
                [-lambda * g.acc1111, -lambda * g.acc1112],
                [-lambda * g.acc1112, -lambda * g.acc1122],
            ],
        };
        if !(den.v >= delta0) {
            return Err(FlmmError::Regularity {
                t,
                s1,
                s2,
                denom: den.v,
                delta0,
            });
        }

        let num11 = Taylor2 {
            v: model.sigma1 * s1,
            d: [model.sigma1, 0.0],
            h: [[0.0; 2]; 2],
        };
        let c = model.sigma2 * lambda;
        let mixed = c * (g.speed112 + s2 * g.acc1122);
        let num12 = Taylor2 {
            v: c * s2 * g.gamma12,
            d: [c * s2 * g.speed112, c * (g.gamma12 + s2 * g.speed122)],
            h: [
                [c * s2 * g.acc1112, mixed],
                [mixed, c * (2.0 * g.speed122 + s2 * g.acc1222)],
            ],
        };
        let sig11 = Taylor2::quotient(num11, den);
        let sig12 = Taylor2::quotient(num12, den);

        out.sigma[0] = [sig11.v, sig12.v];
        out.jac[0] = [sig11.d, sig12.d];
        out.hess = [sig11.h, sig12.h];
        out.denom = den.v;
        Ok(out)
    }
}

fn local_at(
    t: f64,
    state: &MarketState,
    maturity: f64,
    model: &ModelParams,
    impact: &ImpactParams,
) -> Result<LocalDiffusion> {
    state.validate()?;
    let tau = maturity - t;
    if !(tau > 0.0) {
        return Err(FlmmError::DegenerateExpiry {
            tau,
            sigma: f64::NAN,
        });
    }
    let lambda = lambda_bar(t, state.s1, maturity, impact);
    LocalDiffusion::evaluate(t, tau, lambda, state, model, impact.delta0)
}

/// Effective coefficients of the impact model at `(t, s1, s2)`.
pub fn effective_coeffs(
    t: f64,
    state: &MarketState,
    maturity: f64,
    model: &ModelParams,
    impact: &ImpactParams,
) -> Result<EffectiveCoeffs> {
    let local = local_at(t, state, maturity, model, impact)?;
    Ok(EffectiveCoeffs {
        mu1: model.r * state.s1,
        sig11: local.sigma[0][0],
        sig12: local.sigma[0][1],
        sig21: local.sigma[1][0],
        sig22: local.sigma[1][1],
        denom: local.denom,
    })
}

/// Jacobians (and asset-1 Hessians) of the diffusion loadings at `(t, s1, s2)`.
pub fn coeff_jacobians(
    t: f64,
    state: &MarketState,
    maturity: f64,
    model: &ModelParams,
    impact: &ImpactParams,
) -> Result<CoeffJacobians> {
    let local = local_at(t, state, maturity, model, impact)?;
    Ok(CoeffJacobians {
        j1: local.jac[0],
        j2: local.jac[1],
        hess1: local.hess,
    })
}
