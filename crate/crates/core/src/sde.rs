//! Two-dimensional Milstein engine with Lévy areas.
//!
//! One step maps `S(m)` to
//!
//! ```text
//! S(m+1) = B(m) S(m) + b(m) / 2
//! B(m) S(m) = (1 + r dt) S(m) + Sigma dW
//! b_i(m)   = dW' (J_i Sigma) dW - tr(J_i Sigma) dt - sum_kj (J_i Sigma)_kj A_kj
//! ```
//!
//! where `Sigma[i][k]` is the loading of asset `i` on driver `k`,
//! `J_i[k][l] = d Sigma[i][k] / d s_l` and `A` is the antisymmetric matrix of
//! Lévy areas over the step. Brownian increments and the area of a step are
//! built from the same fine path, so they are jointly consistent.
//!
//! The pathwise Jacobian `d S(m) / d S(0)` is propagated by differentiating
//! exactly this step, including the Lévy-area terms.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlmmError, Result};
use crate::impact::{ImpactParams, LocalDiffusion};
use crate::margrabe::{MarketState, ModelParams};
use crate::rng::stream_rng;

/// Default number of fine sub-steps used to build each Lévy area.
pub const DEFAULT_LEVY_SUBSTEPS: usize = 32;

/// Simulation grid and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub levy_substeps: usize,
    pub seed: u64,
    pub t0: f64,
    pub maturity: f64,
}

impl GridSpec {
    /// Grid over `[0, tau]`.
    pub fn new(n_paths: usize, n_steps: usize, tau: f64, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            levy_substeps: DEFAULT_LEVY_SUBSTEPS,
            seed,
            t0: 0.0,
            maturity: tau,
        }
    }

    pub fn with_levy_substeps(mut self, k: usize) -> Self {
        self.levy_substeps = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(FlmmError::invalid("n_paths", "must be >= 1"));
        }
        if self.n_steps == 0 {
            return Err(FlmmError::invalid("n_steps", "must be >= 1"));
        }
        if self.levy_substeps == 0 {
            return Err(FlmmError::invalid("levy_substeps", "must be >= 1"));
        }
        if !(self.t0.is_finite() && self.maturity.is_finite() && self.t0 < self.maturity) {
            return Err(FlmmError::invalid(
                "t0/maturity",
                format!("need t0 < T, got [{}, {}]", self.t0, self.maturity),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.maturity - self.t0
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.tau() / self.n_steps as f64
    }

    #[inline]
    pub fn time_at(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt()
    }
}

/// Brownian increments of one step and the Lévy area `A12` between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepNoise {
    pub dw: [f64; 2],
    /// `int (W1 - W1(t0)) dW2 - (W2 - W2(t0)) dW1` over the step.
    pub area: f64,
}

impl StepNoise {
    pub fn zero() -> Self {
        Self {
            dw: [0.0; 2],
            area: 0.0,
        }
    }

    /// Increments and area of a fine Brownian path given by its increments.
    pub fn from_fine(inc1: &[f64], inc2: &[f64]) -> Self {
        assert_eq!(inc1.len(), inc2.len());
        let mut acc = NoiseAccumulator::default();
        for (&a, &b) in inc1.iter().zip(inc2) {
            acc.push(a, b);
        }
        acc.finish()
    }

    /// The antisymmetric area matrix `[[0, A12], [-A12, 0]]`.
    #[inline]
    pub fn area_matrix(&self) -> [[f64; 2]; 2] {
        [[0.0, self.area], [-self.area, 0.0]]
    }
}

#[derive(Default)]
struct NoiseAccumulator {
    w1: f64,
    w2: f64,
    area: f64,
}

impl NoiseAccumulator {
    // Left-point sums; the trapezoidal half-increments cancel in the difference.
    #[inline]
    fn push(&mut self, d1: f64, d2: f64) {
        self.area += self.w1 * d2 - self.w2 * d1;
        self.w1 += d1;
        self.w2 += d2;
    }

    #[inline]
    fn finish(self) -> StepNoise {
        StepNoise {
            dw: [self.w1, self.w2],
            area: self.area,
        }
    }
}

/// Fine increments for one step: `k` pairs of `N(0, dt/k)` draws, interleaved.
pub fn sample_fine_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, k: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = (dt / k as f64).sqrt();
    let mut inc1 = Vec::with_capacity(k);
    let mut inc2 = Vec::with_capacity(k);
    for _ in 0..k {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        inc1.push(scale * z1);
        inc2.push(scale * z2);
    }
    (inc1, inc2)
}

/// Samples one step's increments and Lévy area from `k` fine sub-steps.
///
/// Consumes the generator exactly like [`sample_fine_increments`] and yields
/// the same result as `StepNoise::from_fine` on those increments.
#[inline]
pub fn sample_step_noise<R: Rng + ?Sized>(rng: &mut R, dt: f64, k: usize) -> StepNoise {
    let scale = (dt / k as f64).sqrt();
    let mut acc = NoiseAccumulator::default();
    for _ in 0..k {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        acc.push(scale * z1, scale * z2);
    }
    acc.finish()
}

/// Pathwise derivative `d S_i(m) / d S_j(t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathJacobian(pub [[f64; 2]; 2]);

impl PathJacobian {
    pub fn identity() -> Self {
        PathJacobian([[1.0, 0.0], [0.0, 1.0]])
    }
}

impl Default for PathJacobian {
    fn default() -> Self {
        Self::identity()
    }
}

/// Second-order noise weights `Q[k][j] = dW_k dW_j - [k == j] dt - A_kj`.
#[inline]
fn noise_weights(noise: &StepNoise, dt: f64) -> [[f64; 2]; 2] {
    let [w1, w2] = noise.dw;
    let a = noise.area;
    [[w1 * w1 - dt, w1 * w2 - a], [w2 * w1 + a, w2 * w2 - dt]]
}

/// `(J_i Sigma)[k][j] = sum_l jac[i][k][l] sigma[l][j]`.
#[inline]
fn j_sigma(local: &LocalDiffusion, i: usize) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (k, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = local.jac[i][k][0] * local.sigma[0][j] + local.jac[i][k][1] * local.sigma[1][j];
        }
    }
    out
}

#[inline]
fn advance(state: &MarketState, local: &LocalDiffusion, noise: &StepNoise, q: &[[f64; 2]; 2], r: f64, dt: f64) -> [f64; 2] {
    let s = [state.s1, state.s2];
    let mut next = [0.0; 2];
    for i in 0..2 {
        let js = j_sigma(local, i);
        let correction = js[0][0] * q[0][0] + js[0][1] * q[0][1] + js[1][0] * q[1][0] + js[1][1] * q[1][1];
        next[i] = s[i] * (1.0 + r * dt)
            + local.sigma[i][0] * noise.dw[0]
            + local.sigma[i][1] * noise.dw[1]
            + 0.5 * correction;
    }
    next
}

/// Derivative of [`advance`] with respect to the current state.
#[inline]
fn step_derivative(local: &LocalDiffusion, noise: &StepNoise, q: &[[f64; 2]; 2], r: f64, dt: f64) -> [[f64; 2]; 2] {
    let mut d = [[0.0; 2]; 2];
    for i in 0..2 {
        for p in 0..2 {
            let mut v = if i == p { 1.0 + r * dt } else { 0.0 };
            v += local.jac[i][0][p] * noise.dw[0] + local.jac[i][1][p] * noise.dw[1];
            let mut second = 0.0;
            for k in 0..2 {
                for j in 0..2 {
                    // d/ds_p of (J_i Sigma)[k][j]
                    let mut dg = 0.0;
                    for l in 0..2 {
                        let hess = if i == 0 { local.hess[k][l][p] } else { 0.0 };
                        dg += hess * local.sigma[l][j] + local.jac[i][k][l] * local.jac[l][j][p];
                    }
                    second += dg * q[k][j];
                }
            }
            d[i][p] = v + 0.5 * second;
        }
    }
    d
}

#[inline]
fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Coefficient evaluator for one simulation: model, impact and maturity.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a> {
    pub model: &'a ModelParams,
    pub impact: &'a ImpactParams,
    pub maturity: f64,
}

impl Dynamics<'_> {
    /// Local diffusion at time `t` given the in-band impact level for that time.
    #[inline]
    fn local(&self, t: f64, band_level: f64, state: &MarketState) -> Result<LocalDiffusion> {
        let lambda = if self.impact.in_band(state.s1) { band_level } else { 0.0 };
        LocalDiffusion::evaluate(t, self.maturity - t, lambda, state, self.model, self.impact.delta0)
    }

    #[inline]
    fn step_inner(
        &self,
        step: usize,
        t: f64,
        dt: f64,
        band_level: f64,
        state: &MarketState,
        noise: &StepNoise,
        jac: Option<&mut PathJacobian>,
    ) -> Result<MarketState> {
        let local = self.local(t, band_level, state)?;
        let q = noise_weights(noise, dt);
        let r = self.model.r;
        let next = advance(state, &local, noise, &q, r, dt);
        if !(next[0] > 0.0 && next[1] > 0.0) {
            return Err(FlmmError::NonPositivePrice {
                step,
                s1: next[0],
                s2: next[1],
            });
        }
        if let Some(jac) = jac {
            let d = step_derivative(&local, noise, &q, r, dt);
            jac.0 = mat_mul(&d, &jac.0);
        }
        Ok(MarketState {
            s1: next[0],
            s2: next[1],
        })
    }
}

/// One Milstein step of the impact model from time `t` with step `dt`.
pub fn milstein_step(
    state: &MarketState,
    noise: &StepNoise,
    t: f64,
    dt: f64,
    maturity: f64,
    model: &ModelParams,
    impact: &ImpactParams,
) -> Result<MarketState> {
    let dynamics = Dynamics {
        model,
        impact,
        maturity,
    };
    dynamics.step_inner(0, t, dt, impact.band_level(t, maturity), state, noise, None)
}

/// Propagates the pathwise Jacobian through the step [`milstein_step`] takes.
#[allow(clippy::too_many_arguments)]
pub fn jacobian_step(
    jac: &PathJacobian,
    state: &MarketState,
    noise: &StepNoise,
    t: f64,
    dt: f64,
    maturity: f64,
    model: &ModelParams,
    impact: &ImpactParams,
) -> Result<PathJacobian> {
    let dynamics = Dynamics {
        model,
        impact,
        maturity,
    };
    let mut out = *jac;
    dynamics.step_inner(0, t, dt, impact.band_level(t, maturity), state, noise, Some(&mut out))?;
    Ok(out)
}

/// Terminal values of one path under the impact model and its frictionless
/// control, both driven by the same noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledTerminal {
    pub flmm: MarketState,
    pub cv: MarketState,
    pub jac: Option<PathJacobian>,
    pub jac_cv: Option<PathJacobian>,
}

/// A path removed from both arms of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscardedPath {
    pub path: usize,
    pub error: FlmmError,
}

/// Output of [`simulate_coupled_paths`], in path-index order.
#[derive(Debug, Clone, Default)]
pub struct CoupledPaths {
    pub terminals: Vec<CoupledTerminal>,
    pub path_index: Vec<usize>,
    pub discarded: Vec<DiscardedPath>,
}

impl CoupledPaths {
    pub fn n_used(&self) -> usize {
        self.terminals.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimulationOptions {
    /// Propagate pathwise Jacobians alongside the prices.
    pub jacobians: bool,
}

/// Simulates one coupled path from its own random stream.
pub fn simulate_path(
    path: usize,
    start: &MarketState,
    grid: &GridSpec,
    band_levels: &[f64],
    model: &ModelParams,
    impact: &ImpactParams,
    opts: SimulationOptions,
) -> Result<CoupledTerminal> {
    let flmm = Dynamics {
        model,
        impact,
        maturity: grid.maturity,
    };
    let dt = grid.dt();
    let mut rng = stream_rng(grid.seed, path as u64);
    let mut s = *start;
    let mut s_cv = *start;
    let mut jac = opts.jacobians.then(PathJacobian::identity);
    let mut jac_cv = opts.jacobians.then(PathJacobian::identity);
    for (m, &level) in band_levels.iter().enumerate() {
        let t = grid.time_at(m);
        let noise = sample_step_noise(&mut rng, dt, grid.levy_substeps);
        s = flmm.step_inner(m, t, dt, level, &s, &noise, jac.as_mut())?;
        s_cv = flmm.step_inner(m, t, dt, 0.0, &s_cv, &noise, jac_cv.as_mut())?;
    }
    Ok(CoupledTerminal {
        flmm: s,
        cv: s_cv,
        jac,
        jac_cv,
    })
}

/// In-band impact level at the start of every step.
pub fn band_levels(grid: &GridSpec, impact: &ImpactParams) -> Vec<f64> {
    (0..grid.n_steps)
        .map(|m| impact.band_level(grid.time_at(m), grid.maturity))
        .collect()
}

/// Simulates `grid.n_paths` coupled impact/frictionless paths in parallel.
///
/// Path `i` always draws from stream `i` of `grid.seed`, and results are
/// gathered by index, so the output does not depend on the worker count.
pub fn simulate_coupled_paths(
    start: &MarketState,
    grid: &GridSpec,
    model: &ModelParams,
    impact: &ImpactParams,
    opts: SimulationOptions,
) -> Result<CoupledPaths> {
    start.validate()?;
    grid.validate()?;
    model.validate()?;
    impact.validate()?;
    let levels = band_levels(grid, impact);
    let outcomes: Vec<Result<CoupledTerminal>> = (0..grid.n_paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| simulate_path(i, start, grid, &levels, model, impact, opts))
        .collect();

    let mut out = CoupledPaths::default();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(t) => {
                out.terminals.push(t);
                out.path_index.push(i);
            }
            Err(error) => out.discarded.push(DiscardedPath { path: i, error }),
        }
    }
    Ok(out)
}

/// Terminal value of the frictionless GBM pair driven by total increments `w`.
pub fn exact_gbm_terminal(start: &MarketState, tau: f64, w: [f64; 2], model: &ModelParams) -> MarketState {
    let ModelParams {
        sigma1, sigma2, rho, r,
    } = *model;
    let w2 = rho * w[0] + model.rho_bar() * w[1];
    MarketState {
        s1: start.s1 * ((r - 0.5 * sigma1 * sigma1) * tau + sigma1 * w[0]).exp(),
        s2: start.s2 * ((r - 0.5 * sigma2 * sigma2) * tau + sigma2 * w2).exp(),
    }
}

pub const PATH_DUMP_MAGIC: &[u8; 8] = b"FLMMPATH";
pub const PATH_DUMP_VERSION: u32 = 1;

/// Writes terminal states as little-endian `f64` rows `(S1, S2, S1cv, S2cv)`,
/// one per path, after the header `magic, version u32, N u64, M u64, seed u64`.
/// Discarded paths are written as NaN rows so that row `i` is path `i`.
pub fn write_path_dump<W: Write>(mut w: W, grid: &GridSpec, paths: &CoupledPaths) -> io::Result<()> {
    w.write_all(PATH_DUMP_MAGIC)?;
    w.write_all(&PATH_DUMP_VERSION.to_le_bytes())?;
    w.write_all(&(grid.n_paths as u64).to_le_bytes())?;
    w.write_all(&(grid.n_steps as u64).to_le_bytes())?;
    w.write_all(&grid.seed.to_le_bytes())?;
    let mut rows = vec![[f64::NAN; 4]; grid.n_paths];
    for (t, &i) in paths.terminals.iter().zip(&paths.path_index) {
        rows[i] = [t.flmm.s1, t.flmm.s2, t.cv.s1, t.cv.s2];
    }
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
