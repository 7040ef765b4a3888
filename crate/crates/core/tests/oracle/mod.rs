//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use flmm_core::{margrabe_greeks, margrabe_price, GreeksBundle, MarketState, ModelParams};
use rand::Rng;

/// Bump variable of a finite difference.
#[derive(Clone, Copy, Debug)]
pub enum Var {
    S1,
    S2,
    Tau,
}

/// A Greek next to its central finite difference.
#[derive(Clone, Copy, Debug)]
pub struct FdCheck {
    pub name: &'static str,
    pub analytic: f64,
    pub fd: f64,
    /// Natural magnitude of this Greek at the point; guards zero crossings.
    pub scale: f64,
}

impl FdCheck {
    /// Relative error, with the denominator floored at 1e-3 of the natural scale.
    pub fn rel_err(&self) -> f64 {
        let denom = self.analytic.abs().max(self.fd.abs()).max(1e-3 * self.scale);
        (self.analytic - self.fd).abs() / denom
    }
}

fn difference(f: &impl Fn(&MarketState, f64) -> f64, s: &MarketState, tau: f64, var: Var, rel: f64) -> f64 {
    match var {
        Var::S1 => {
            let h = rel * s.s1;
            let up = MarketState { s1: s.s1 + h, ..*s };
            let dn = MarketState { s1: s.s1 - h, ..*s };
            (f(&up, tau) - f(&dn, tau)) / (2.0 * h)
        }
        Var::S2 => {
            let h = rel * s.s2;
            let up = MarketState { s2: s.s2 + h, ..*s };
            let dn = MarketState { s2: s.s2 - h, ..*s };
            (f(&up, tau) - f(&dn, tau)) / (2.0 * h)
        }
        Var::Tau => {
            let h = rel * tau;
            (f(s, tau + h) - f(s, tau - h)) / (2.0 * h)
        }
    }
}

/// Central difference at relative bump 1e-4, Richardson-extrapolated with the
/// half bump so the O(h^2) truncation does not swamp the comparison when
/// `sigma sqrt(tau)` is small.
fn central(f: impl Fn(&MarketState, f64) -> f64, s: &MarketState, tau: f64, var: Var) -> f64 {
    let coarse = difference(&f, s, tau, var, 1e-4);
    let fine = difference(&f, s, tau, var, 0.5e-4);
    (4.0 * fine - coarse) / 3.0
}

/// Every Greek against the central difference of the price or of the Greek
/// one order below.
pub fn greek_fd_checks(s: &MarketState, tau: f64, m: &ModelParams) -> Vec<FdCheck> {
    let g = margrabe_greeks(s, tau, m).unwrap();
    let price = |x: &MarketState, t: f64| margrabe_price(x, t, m).unwrap();
    let greek = |pick: fn(&GreeksBundle) -> f64| move |x: &MarketState, t: f64| pick(&margrabe_greeks(x, t, m).unwrap());

    let sigma = flmm_core::effective_vol(m).unwrap();
    let a = sigma * tau.sqrt();
    let d_plus = (s.s1 / s.s2).ln() / a + 0.5 * a;
    let vega_like = s.s1 * (-0.5 * d_plus * d_plus).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let s_min = s.s1.min(s.s2);
    let scale = |n_s: i32, n_t: i32| {
        let spatial = if n_s == 0 {
            1.0
        } else {
            vega_like * a.powi(-(n_s - 1)) / s_min.powi(n_s)
        };
        let base = if n_s == 0 { vega_like } else { spatial };
        base * tau.powi(-n_t)
    };

    use Var::*;
    let mut out = Vec::new();
    let mut push = |name, analytic, fd, sc| {
        out.push(FdCheck {
            name,
            analytic,
            fd,
            scale: sc,
        })
    };
    push("delta1", g.delta1, central(price, s, tau, S1), 1.0);
    push("delta2", g.delta2, central(price, s, tau, S2), 1.0);
    push("theta", g.theta, central(price, s, tau, Tau), scale(0, 1));
    push("gamma11", g.gamma11, central(greek(|g| g.delta1), s, tau, S1), scale(2, 0));
    push("gamma22", g.gamma22, central(greek(|g| g.delta2), s, tau, S2), scale(2, 0));
    push("gamma12", g.gamma12, central(greek(|g| g.delta1), s, tau, S2), scale(2, 0));
    push("charm1", g.charm1, central(greek(|g| g.delta1), s, tau, Tau), scale(1, 1).max(1.0 / tau));
    push("charm2", g.charm2, central(greek(|g| g.delta2), s, tau, Tau), scale(1, 1).max(1.0 / tau));
    push("speed111", g.speed111, central(greek(|g| g.gamma11), s, tau, S1), scale(3, 0));
    push("speed222", g.speed222, central(greek(|g| g.gamma22), s, tau, S2), scale(3, 0));
    push("speed112", g.speed112, central(greek(|g| g.gamma11), s, tau, S2), scale(3, 0));
    push("speed221", g.speed221, central(greek(|g| g.gamma22), s, tau, S1), scale(3, 0));
    push("speed122", g.speed122, central(greek(|g| g.gamma12), s, tau, S2), scale(3, 0));
    push("colour11", g.colour11, central(greek(|g| g.gamma11), s, tau, Tau), scale(2, 1));
    push("colour22", g.colour22, central(greek(|g| g.gamma22), s, tau, Tau), scale(2, 1));
    push("colour12", g.colour12, central(greek(|g| g.gamma12), s, tau, Tau), scale(2, 1));
    push("acc1111", g.acc1111, central(greek(|g| g.speed111), s, tau, S1), scale(4, 0));
    push("acc1112", g.acc1112, central(greek(|g| g.speed111), s, tau, S2), scale(4, 0));
    push("acc1122", g.acc1122, central(greek(|g| g.speed112), s, tau, S2), scale(4, 0));
    push("acc1222", g.acc1222, central(greek(|g| g.speed222), s, tau, S1), scale(4, 0));
    push("acc2222", g.acc2222, central(greek(|g| g.speed222), s, tau, S2), scale(4, 0));
    out
}

/// A random point where `a = sigma sqrt(tau) >= 0.1` and `|ln(s1/s2)| <= 2a`.
pub fn random_greek_point<R: Rng>(rng: &mut R) -> (MarketState, f64, ModelParams) {
    loop {
        let sigma1 = rng.random_range(0.05..0.5);
        let sigma2 = rng.random_range(0.05..0.5);
        let rho = rng.random_range(-0.9..0.9);
        let r = rng.random_range(0.0..0.1);
        let tau = rng.random_range(0.05..2.0);
        let m = ModelParams::new(sigma1, sigma2, rho, r).unwrap();
        let a = flmm_core::effective_vol(&m).unwrap() * f64::sqrt(tau);
        if a < 0.1 {
            continue;
        }
        let s1 = rng.random_range(1.0..200.0);
        let z: f64 = rng.random_range(-2.0..2.0);
        let s2 = s1 * (a * z).exp();
        return (MarketState::new(s1, s2).unwrap(), tau, m);
    }
}

/// Exact two-asset GBM terminal values for total increments `(w1, w2)` of
/// independent Brownian motions, asset 2 loading `rho w1 + sqrt(1-rho^2) w2`.
pub fn gbm_exact(s: &MarketState, tau: f64, w1: f64, w2: f64, m: &ModelParams) -> (f64, f64) {
    let b2 = m.rho * w1 + (1.0 - m.rho * m.rho).sqrt() * w2;
    (
        s.s1 * ((m.r - 0.5 * m.sigma1 * m.sigma1) * tau + m.sigma1 * w1).exp(),
        s.s2 * ((m.r - 0.5 * m.sigma2 * m.sigma2) * tau + m.sigma2 * b2).exp(),
    )
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
