//! Control-variate Monte Carlo estimators for the price and the deltas.
//!
//! Every path of the impact model is paired with a frictionless path driven
//! by the same noise. The frictionless payoff has the closed-form Margrabe
//! expectation and serves as the control:
//!
//! ```text
//! V = mean(Y + c X) - c V_margrabe,    c = -Cov(Y, X) / Var(X)
//! ```
//!
//! The coefficient is fitted on the same sample as the estimate.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FlmmError, Result};
use crate::impact::ImpactParams;
use crate::margrabe::{margrabe_greeks, margrabe_price, MarketState, ModelParams};
use crate::sde::{simulate_coupled_paths, CoupledPaths, GridSpec, SimulationOptions};
use crate::stats::{covariance, mean, variance};

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_3;

/// How the control variate entered an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlStatus {
    /// Control fitted and applied.
    Active,
    /// The adjusted sample has zero variance: the control reproduces the target.
    Degenerate,
    /// The control has zero variance; plain Monte Carlo was used.
    NoControl,
    /// The control covariance was near-singular and a ridge was added.
    Ridge,
}

impl ControlStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlStatus::Active => "active",
            ControlStatus::Degenerate => "degenerate",
            ControlStatus::NoControl => "no-control",
            ControlStatus::Ridge => "ridge",
        }
    }
}

/// A Monte Carlo point estimate with its 99% Gaussian interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_used: usize,
    pub n_discarded: usize,
    pub c_hat: f64,
    /// Plain Monte Carlo variance over control-variate variance.
    pub vr_factor: f64,
    pub status: ControlStatus,
    /// Seconds spent, simulation included. Not part of the CSV rows.
    pub wall_clock: f64,
}

impl EstimateWithCI {
    fn from_sample(value: f64, sample_var: f64, n: usize) -> (f64, f64, f64) {
        let se = (sample_var.max(0.0) / n as f64).sqrt();
        (se, value - Z_99 * se, value + Z_99 * se)
    }

    pub fn ci_length(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub const CSV_HEADER: &'static str = "value,std_error,ci_low,ci_high,n_used,n_discarded,c_hat,vr_factor,status";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.value),
            fmt_f64(self.std_error),
            fmt_f64(self.ci_low),
            fmt_f64(self.ci_high),
            self.n_used,
            self.n_discarded,
            fmt_f64(self.c_hat),
            fmt_f64(self.vr_factor),
            self.status.as_str()
        )
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn check_paths(paths: &CoupledPaths, grid: &GridSpec) -> Result<()> {
    if paths.n_used() == 0 {
        return Err(FlmmError::AllPathsDiscarded {
            n_paths: grid.n_paths,
        });
    }
    Ok(())
}

/// Scalar control-variate fit of `y` on `x` with known `E[x] = mu`.
fn scalar_control(y: &[f64], x: &[f64], mu: f64) -> (f64, f64, f64, f64, ControlStatus) {
    let n = y.len();
    let var_y = variance(y);
    let var_x = variance(x);
    if !(var_x > 0.0) {
        if y == x {
            // Identical arms (no impact): the control is exact even when every payoff is the same.
            return (mean(y) - mean(x) + mu, 0.0, -1.0, f64::INFINITY, ControlStatus::Degenerate);
        }
        let v = mean(y);
        return (v, var_y, 0.0, 1.0, ControlStatus::NoControl);
    }
    let c = -covariance(y, x) / var_x;
    let z: Vec<f64> = y.iter().zip(x).map(|(a, b)| a + c * b).collect();
    let value = mean(&z) - c * mu;
    let var_z = variance(&z);
    // Cancellation floor: Z carries rounding noise of order eps * |Y|.
    let scale = var_y.max(mean(y).powi(2)).max(f64::MIN_POSITIVE);
    if var_z <= 1e-28 * scale || n < 2 {
        return (value, 0.0, c, f64::INFINITY, ControlStatus::Degenerate);
    }
    (value, var_z, c, var_y / var_z, ControlStatus::Active)
}

/// Price of the exchange option under price impact, with the Margrabe
/// payoff on the coupled frictionless path as control.
pub fn price_estimate(
    start: &MarketState,
    model: &ModelParams,
    impact: &ImpactParams,
    grid: &GridSpec,
) -> Result<EstimateWithCI> {
    let clock = Instant::now();
    let tau = grid.tau();
    let v_margrabe = margrabe_price(start, tau, model)?;
    let paths = simulate_coupled_paths(start, grid, model, impact, SimulationOptions::default())?;
    check_paths(&paths, grid)?;
    let disc = (-model.r * tau).exp();
    let y: Vec<f64> = paths
        .terminals
        .iter()
        .map(|t| disc * (t.flmm.s1 - t.flmm.s2).max(0.0))
        .collect();
    let x: Vec<f64> = paths
        .terminals
        .iter()
        .map(|t| disc * (t.cv.s1 - t.cv.s2).max(0.0))
        .collect();
    let n = y.len();
    let (value, var, c_hat, vr_factor, status) = scalar_control(&y, &x, v_margrabe);
    let (std_error, ci_low, ci_high) = EstimateWithCI::from_sample(value, var, n);
    Ok(EstimateWithCI {
        value,
        std_error,
        ci_low,
        ci_high,
        n_used: n,
        n_discarded: paths.discarded.len(),
        c_hat,
        vr_factor,
        status,
        wall_clock: clock.elapsed().as_secs_f64(),
    })
}

/// Pathwise deltas with a two-dimensional control variate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub delta: [f64; 2],
    pub std_error: [f64; 2],
    pub ci_low: [f64; 2],
    pub ci_high: [f64; 2],
    /// Closed-form frictionless deltas used to centre the control.
    pub margrabe: [f64; 2],
    /// `Sigma_YX Sigma_XX^{-1}`.
    pub c_matrix: [[f64; 2]; 2],
    pub n_used: usize,
    pub n_discarded: usize,
    pub status: ControlStatus,
    pub wall_clock: f64,
}

impl DeltaEstimate {
    pub fn excess(&self) -> [f64; 2] {
        [self.delta[0] - self.margrabe[0], self.delta[1] - self.margrabe[1]]
    }
}

fn inverse2(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.is_finite() && det != 0.0) {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Reciprocal condition estimate of a symmetric positive semi-definite 2x2 matrix.
fn rcond_sym2(m: &[[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0]).max(0.0).sqrt();
    let hi = 0.5 * (tr + disc);
    if !(hi > 0.0) {
        return 0.0;
    }
    (det / hi) / hi
}

const RIDGE_RCOND: f64 = 1e-12;

/// `C = Sigma_YX Sigma_XX^{-1}`, ridged when `Sigma_XX` is near singular.
fn fitted_control(y: &[Vec<f64>; 2], x: &[Vec<f64>; 2], status: &mut ControlStatus) -> [[f64; 2]; 2] {
    let mut sxx = [[0.0; 2]; 2];
    let mut syx = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            sxx[a][b] = covariance(&x[a], &x[b]);
            syx[a][b] = covariance(&y[a], &x[b]);
        }
    }
    if rcond_sym2(&sxx) < RIDGE_RCOND {
        let ridge = RIDGE_RCOND * (sxx[0][0] + sxx[1][1]).max(f64::MIN_POSITIVE);
        sxx[0][0] += ridge;
        sxx[1][1] += ridge;
        *status = ControlStatus::Ridge;
    }
    match inverse2(&sxx) {
        Some(inv) => {
            let mut c = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] = syx[a][0] * inv[0][b] + syx[a][1] * inv[1][b];
                }
            }
            c
        }
        None => {
            *status = ControlStatus::NoControl;
            [[0.0; 2]; 2]
        }
    }
}

/// Deltas of the impact-model price via pathwise Jacobians, controlled by
/// the pathwise frictionless deltas, whose mean is the Margrabe delta pair.
pub fn delta_estimate(
    start: &MarketState,
    model: &ModelParams,
    impact: &ImpactParams,
    grid: &GridSpec,
) -> Result<DeltaEstimate> {
    let clock = Instant::now();
    let tau = grid.tau();
    let g = margrabe_greeks(start, tau, model)?;
    let mu = [g.delta1, g.delta2];
    let paths = simulate_coupled_paths(start, grid, model, impact, SimulationOptions { jacobians: true })?;
    check_paths(&paths, grid)?;
    let disc = (-model.r * tau).exp();
    let n = paths.n_used();

    let mut y = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut x = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for t in &paths.terminals {
        let jac = t.jac.expect("jacobians requested").0;
        let jac_cv = t.jac_cv.expect("jacobians requested").0;
        let itm = if t.flmm.s1 > t.flmm.s2 { disc } else { 0.0 };
        let itm_cv = if t.cv.s1 > t.cv.s2 { disc } else { 0.0 };
        for j in 0..2 {
            y[j].push(itm * (jac[0][j] - jac[1][j]));
            x[j].push(itm_cv * (jac_cv[0][j] - jac_cv[1][j]));
        }
    }

    let mut status = ControlStatus::Active;
    let c_matrix = if y == x {
        // Identical arms: the identity control is exact.
        [[1.0, 0.0], [0.0, 1.0]]
    } else {
        fitted_control(&y, &x, &mut status)
    };

    let mut out = DeltaEstimate {
        delta: [0.0; 2],
        std_error: [0.0; 2],
        ci_low: [0.0; 2],
        ci_high: [0.0; 2],
        margrabe: mu,
        c_matrix,
        n_used: n,
        n_discarded: paths.discarded.len(),
        status,
        wall_clock: 0.0,
    };
    let mut all_degenerate = status == ControlStatus::Active;
    for a in 0..2 {
        let c = c_matrix[a];
        let z: Vec<f64> = (0..n).map(|i| y[a][i] - c[0] * x[0][i] - c[1] * x[1][i]).collect();
        let value = mean(&z) + c[0] * mu[0] + c[1] * mu[1];
        let mut var_z = variance(&z);
        let scale = variance(&y[a]).max(mean(&y[a]).powi(2)).max(f64::MIN_POSITIVE);
        if var_z <= 1e-28 * scale {
            var_z = 0.0;
        } else {
            all_degenerate = false;
        }
        let (se, lo, hi) = EstimateWithCI::from_sample(value, var_z, n);
        out.delta[a] = value;
        out.std_error[a] = se;
        out.ci_low[a] = lo;
        out.ci_high[a] = hi;
    }
    if all_degenerate {
        out.status = ControlStatus::Degenerate;
    }
    out.wall_clock = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// One cell of a liquidity valuation adjustment table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvaRow {
    pub s1: f64,
    pub s2: f64,
    pub v_flmm: f64,
    pub v_margrabe: f64,
    pub excess: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl LvaRow {
    pub const CSV_HEADER: &'static str = "s1,s2,v_flmm,v_margrabe,excess,se,ci_low,ci_high";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        for (i, v) in [
            self.s1,
            self.s2,
            self.v_flmm,
            self.v_margrabe,
            self.excess,
            self.std_error,
            self.ci_low,
            self.ci_high,
        ]
        .into_iter()
        .enumerate()
        {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", fmt_f64(v));
        }
        s
    }
}

/// Price estimates and frictionless prices over a list of `(s1, s2)` cells.
///
/// Every cell reuses `grid.seed`, so neighbouring cells share their noise and
/// differences across the table are smooth.
pub fn lva_table(
    cells: &[(f64, f64)],
    model: &ModelParams,
    impact: &ImpactParams,
    grid: &GridSpec,
) -> Result<Vec<LvaRow>> {
    cells
        .iter()
        .map(|&(s1, s2)| {
            let start = MarketState::new(s1, s2)?;
            let est = price_estimate(&start, model, impact, grid)?;
            let v_margrabe = margrabe_price(&start, grid.tau(), model)?;
            Ok(LvaRow {
                s1,
                s2,
                v_flmm: est.value,
                v_margrabe,
                excess: est.value - v_margrabe,
                std_error: est.std_error,
                ci_low: est.ci_low - v_margrabe,
                ci_high: est.ci_high - v_margrabe,
            })
        })
        .collect()
}
