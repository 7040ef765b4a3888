//! Closed-form Margrabe exchange-option price and its sensitivities.
//!
//! The option pays `(S1(T) - S2(T))^+`. With
//! `sigma^2 = sigma1^2 + sigma2^2 - 2 rho sigma1 sigma2` and `a = sigma sqrt(tau)`:
//!
//! ```text
//! V  = s1 N(d+) - s2 N(d-)
//! d+ = ln(s1/s2)/a + a/2,   d- = d+ - a
//! ```
//!
//! Every higher-order Greek is expressed through `Gamma11`/`Gamma22`, the
//! moneyness terms `d+`, `d-`, and `k = 1/a`. All of them are checked against
//! central finite differences in the tests below.

use serde::{Deserialize, Serialize};

use crate::error::{FlmmError, Result};
use crate::normal::{norm_cdf, norm_pdf};

/// Volatilities, correlation and risk-free rate of the frictionless market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub r: f64,
}

impl ModelParams {
    pub fn new(sigma1: f64, sigma2: f64, rho: f64, r: f64) -> Result<Self> {
        let params = Self {
            sigma1,
            sigma2,
            rho,
            r,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1.is_finite() && self.sigma1 > 0.0) {
            return Err(FlmmError::invalid("sigma1", format!("must be > 0, got {}", self.sigma1)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(FlmmError::invalid("sigma2", format!("must be > 0, got {}", self.sigma2)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(FlmmError::invalid("rho", format!("must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(FlmmError::invalid("r", format!("must be >= 0, got {}", self.r)));
        }
        effective_vol(self).map(|_| ())
    }

    /// Loading of asset 2 on the second, independent Brownian motion.
    #[inline]
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }
}

/// Spot prices of the illiquid asset 1 and the liquid asset 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub s1: f64,
    pub s2: f64,
}

impl MarketState {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        let state = Self { s1, s2 };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s1.is_finite() && self.s1 > 0.0) {
            return Err(FlmmError::invalid("s1", format!("must be > 0, got {}", self.s1)));
        }
        if !(self.s2.is_finite() && self.s2 > 0.0) {
            return Err(FlmmError::invalid("s2", format!("must be > 0, got {}", self.s2)));
        }
        Ok(())
    }
}

/// Sensitivities of the Margrabe price at a fixed `(tau, s1, s2)`.
///
/// Time derivatives (`theta`, `charm*`, `colour*`) are taken with respect to
/// time-to-maturity `tau`. Third and fourth order names list the
/// differentiation indices, e.g. `speed112 = d^3 V / ds1^2 ds2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreeksBundle {
    pub delta1: f64,
    pub delta2: f64,
    pub theta: f64,
    pub gamma11: f64,
    pub gamma22: f64,
    pub gamma12: f64,
    pub charm1: f64,
    pub charm2: f64,
    pub speed111: f64,
    pub speed222: f64,
    pub speed112: f64,
    pub speed221: f64,
    pub speed122: f64,
    pub colour11: f64,
    pub colour22: f64,
    pub colour12: f64,
    pub acc1111: f64,
    pub acc1112: f64,
    pub acc1122: f64,
    pub acc1222: f64,
    pub acc2222: f64,
}

impl GreeksBundle {
    /// Field names in declaration order, paired with their values.
    pub fn named_fields(&self) -> [(&'static str, f64); 21] {
        [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("theta", self.theta),
            ("gamma11", self.gamma11),
            ("gamma22", self.gamma22),
            ("gamma12", self.gamma12),
            ("charm1", self.charm1),
            ("charm2", self.charm2),
            ("speed111", self.speed111),
            ("speed222", self.speed222),
            ("speed112", self.speed112),
            ("speed221", self.speed221),
            ("speed122", self.speed122),
            ("colour11", self.colour11),
            ("colour22", self.colour22),
            ("colour12", self.colour12),
            ("acc1111", self.acc1111),
            ("acc1112", self.acc1112),
            ("acc1122", self.acc1122),
            ("acc1222", self.acc1222),
            ("acc2222", self.acc2222),
        ]
    }
}

/// `sqrt(sigma1^2 + sigma2^2 - 2 sigma1 sigma2 rho)`.
pub fn effective_vol(params: &ModelParams) -> Result<f64> {
    let ModelParams {
        sigma1, sigma2, rho, ..
    } = *params;
    let radicand = sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * sigma1 * sigma2 * rho;
    let scale = sigma1 * sigma1 + sigma2 * sigma2;
    if !radicand.is_finite() || radicand < -1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(FlmmError::invalid(
            "sigma",
            format!("negative effective variance {radicand}"),
        ));
    }
    Ok(radicand.max(0.0).sqrt())
}

/// Margrabe price of the exchange option. Returns the intrinsic value when
/// `tau == 0` or the effective volatility vanishes.
pub fn margrabe_price(state: &MarketState, tau: f64, params: &ModelParams) -> Result<f64> {
    state.validate()?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(FlmmError::invalid("tau", format!("must be >= 0, got {tau}")));
    }
    let sigma = effective_vol(params)?;
    let MarketState { s1, s2 } = *state;
    if tau == 0.0 || sigma == 0.0 {
        return Ok((s1 - s2).max(0.0));
    }
    let a = sigma * tau.sqrt();
    let d_plus = (s1 / s2).ln() / a + 0.5 * a;
    let d_minus = d_plus - a;
    Ok((s1 * norm_cdf(d_plus) - s2 * norm_cdf(d_minus)).max(0.0))
}

/// Moneyness terms shared by the Greeks.
#[derive(Debug, Clone, Copy)]
struct Moneyness {
    sigma: f64,
    a: f64,
    log_ratio: f64,
    d_plus: f64,
    d_minus: f64,
}

fn moneyness(state: &MarketState, tau: f64, params: &ModelParams) -> Result<Moneyness> {
    state.validate()?;
    let sigma = effective_vol(params)?;
    if !(tau.is_finite() && tau > 0.0) || sigma == 0.0 {
        return Err(FlmmError::DegenerateExpiry { tau, sigma });
    }
    let a = sigma * tau.sqrt();
    let log_ratio = (state.s1 / state.s2).ln();
    let d_plus = log_ratio / a + 0.5 * a;
    Ok(Moneyness {
        sigma,
        a,
        log_ratio,
        d_plus,
        d_minus: d_plus - a,
    })
}

/// The full ladder of Margrabe Greeks.
pub fn margrabe_greeks(state: &MarketState, tau: f64, params: &ModelParams) -> Result<GreeksBundle> {
    let m = moneyness(state, tau, params)?;
    let MarketState { s1, s2 } = *state;
    let Moneyness {
        sigma,
        a,
        log_ratio: x,
        d_plus: u,
        d_minus: v,
    } = m;
    let k = 1.0 / a;
    let pdf_u = norm_pdf(u);
    let pdf_v = norm_pdf(v);
    let sqrt_tau = tau.sqrt();
    let tau32 = tau * sqrt_tau;

    let gamma11 = pdf_u / (a * s1);
    let gamma22 = pdf_v / (a * s2);
    let gamma12 = -pdf_u / (a * s2);

    let ku = k * u;
    let kv = k * v;
    let k2 = k * k;

    // d/dtau of any Gamma is Gamma times this factor.
    let colour_factor = -(sigma.powi(4) * tau * tau + 4.0 * sigma * sigma * tau - 4.0 * x * x)
        / (8.0 * sigma * sigma * tau * tau);

    Ok(GreeksBundle {
        delta1: norm_cdf(u),
        delta2: -norm_cdf(v),
        theta: sigma * s1 * pdf_u / (2.0 * sqrt_tau),
        gamma11,
        gamma22,
        gamma12,
        charm1: pdf_u * (-x / (2.0 * sigma * tau32) + sigma / (4.0 * sqrt_tau)),
        charm2: pdf_v * (x / (2.0 * sigma * tau32) + sigma / (4.0 * sqrt_tau)),
        speed111: -gamma11 * (1.0 + ku) / s1,
        speed222: gamma22 * (kv - 1.0) / s2,
        speed112: gamma11 * ku / s2,
        speed221: -gamma22 * kv / s1,
        speed122: -gamma12 * (1.0 - ku) / s2,
        colour11: gamma11 * colour_factor,
        colour22: gamma22 * colour_factor,
        colour12: gamma12 * colour_factor,
        acc1111: gamma11 / (s1 * s1) * ((1.0 + ku) * (1.0 + ku) + (1.0 + ku) - k2),
        acc1112: gamma11 / (s1 * s2) * (k2 - ku * (1.0 + ku)),
        acc1122: gamma11 / (s2 * s2) * (ku * ku - k2 - ku),
        acc1222: gamma22 / (s1 * s2) * (k2 + kv - kv * kv),
        acc2222: gamma22 / (s2 * s2) * ((kv - 1.0) * (kv - 1.0) - k2 - (kv - 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(0.4, 0.2, 0.5, 0.05).unwrap()
    }

    fn st(s1: f64, s2: f64) -> MarketState {
        MarketState::new(s1, s2).unwrap()
    }

    #[test]
    fn effective_vol_examples() {
        let v = effective_vol(&params()).unwrap();
        assert!((v - 0.12_f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.346_410_2).abs() < 1e-7);
        let same = ModelParams {
            sigma1: 0.3,
            sigma2: 0.3,
            rho: 1.0,
            r: 0.0,
        };
        assert_eq!(effective_vol(&same).unwrap(), 0.0);
        let one = ModelParams {
            sigma1: 0.3,
            sigma2: 0.0,
            rho: 0.0,
            r: 0.0,
        };
        assert!((effective_vol(&one).unwrap() - 0.3).abs() < 1e-16);
    }

    #[test]
    fn effective_vol_rejects_negative_radicand() {
        let bad = ModelParams {
            sigma1: 0.3,
            sigma2: 0.2,
            rho: 1.5,
            r: 0.0,
        };
        assert!(matches!(effective_vol(&bad), Err(FlmmError::InvalidParams { .. })));
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 0.2, 0.5, 0.05).is_err());
        assert!(ModelParams::new(0.4, 0.2, 1.5, 0.05).is_err());
        assert!(ModelParams::new(0.4, 0.2, 0.5, -0.01).is_err());
        assert!(MarketState::new(0.0, 1.0).is_err());
        assert!(MarketState::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn price_reference_values() {
        let v10 = margrabe_price(&st(10.0, 10.0), 0.5, &params()).unwrap();
        assert!((v10 - 0.974_767).abs() < 5e-7, "{v10}");
        let v20 = margrabe_price(&st(20.0, 20.0), 0.5, &params()).unwrap();
        assert!((v20 - 1.949_53).abs() < 5e-6, "{v20}");
        assert!((v20 - 2.0 * v10).abs() < 1e-12 * v20);
    }

    #[test]
    fn price_at_expiry_and_zero_vol() {
        assert_eq!(margrabe_price(&st(60.0, 80.0), 0.0, &params()).unwrap(), 0.0);
        assert_eq!(margrabe_price(&st(80.0, 60.0), 0.0, &params()).unwrap(), 20.0);
        let flat = ModelParams {
            sigma1: 0.3,
            sigma2: 0.3,
            rho: 1.0,
            r: 0.05,
        };
        assert_eq!(margrabe_price(&st(80.0, 60.0), 1.0, &flat).unwrap(), 20.0);
    }

    #[test]
    fn greeks_refuse_degenerate_inputs() {
        assert!(matches!(
            margrabe_greeks(&st(10.0, 10.0), 0.0, &params()),
            Err(FlmmError::DegenerateExpiry { .. })
        ));
        let flat = ModelParams {
            sigma1: 0.3,
            sigma2: 0.3,
            rho: 1.0,
            r: 0.05,
        };
        assert!(matches!(
            margrabe_greeks(&st(10.0, 10.0), 1.0, &flat),
            Err(FlmmError::DegenerateExpiry { .. })
        ));
    }

    #[test]
    fn atm_delta_reference() {
        let g = margrabe_greeks(&st(50.0, 50.0), 0.5, &params()).unwrap();
        // N(sqrt(0.12 * 0.5) / 2) evaluated independently at 20 digits.
        assert!((g.delta1 - 0.548_738_374_911_160_3).abs() < 1e-13, "{}", g.delta1);
    }

    #[test]
    fn gamma12_two_routes_agree() {
        let p = params();
        for &(s1, s2, tau) in &[(10.0, 10.0, 0.5), (60.0, 80.0, 0.5), (95.0, 40.0, 1.7), (3.0, 3.3, 0.05)] {
            let g = margrabe_greeks(&st(s1, s2), tau, &p).unwrap();
            let a = effective_vol(&p).unwrap() * f64::sqrt(tau);
            let d_minus = (s1 / s2).ln() / a - 0.5 * a;
            let other = -norm_pdf(d_minus) / (a * s1);
            assert!(((g.gamma12 - other) / other).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_matches_bump() {
        let p = params();
        let (s1, s2, tau) = (60.0, 80.0, 0.5);
        let h = 1e-5 * s1;
        let up = margrabe_price(&st(s1 + h, s2), tau, &p).unwrap();
        let dn = margrabe_price(&st(s1 - h, s2), tau, &p).unwrap();
        let g = margrabe_greeks(&st(s1, s2), tau, &p).unwrap();
        let fd = (up - dn) / (2.0 * h);
        assert!(((fd - g.delta1) / g.delta1).abs() < 1e-6);
    }

    #[test]
    fn euler_homogeneity_identity() {
        let p = params();
        for &(s1, s2, tau) in &[(10.0, 10.0, 0.5), (60.0, 80.0, 0.5), (120.0, 70.0, 2.0)] {
            let v = margrabe_price(&st(s1, s2), tau, &p).unwrap();
            let g = margrabe_greeks(&st(s1, s2), tau, &p).unwrap();
            assert!((v - (s1 * g.delta1 + s2 * g.delta2)).abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_third_derivatives_coincide() {
        let g = margrabe_greeks(&st(42.0, 47.0), 0.8, &params()).unwrap();
        assert!(((g.speed122 - g.speed221) / g.speed221).abs() < 1e-12);
    }
}
