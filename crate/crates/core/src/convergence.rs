//! Strong-error study of the frictionless Milstein scheme.
//!
//! Every path draws one fine Brownian path of `finest_steps * k` increments.
//! A level with `m` steps groups `finest_steps / m` fine steps into one
//! Milstein step, so each coarse step sees the fine increments as Lévy
//! sub-steps and all levels share the same noise as the exact GBM solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlmmError, Result};
use crate::impact::ImpactParams;
use crate::margrabe::{MarketState, ModelParams};
use crate::rng::stream_rng;
use crate::sde::{exact_gbm_terminal, milstein_step, sample_fine_increments, StepNoise};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub n_paths: usize,
    pub finest_steps: usize,
    /// Lévy sub-steps of a finest-level step.
    pub substeps: usize,
    pub levels: Vec<usize>,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<usize>,
    pub dts: Vec<f64>,
    /// Mean of `|S1 - S1_exact| + |S2 - S2_exact|` at maturity.
    pub errors: Vec<f64>,
    pub slope: f64,
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.finest_steps == 0 || self.substeps == 0 {
            return Err(FlmmError::invalid("convergence", "paths, steps and substeps must be positive"));
        }
        if self.levels.len() < 2 {
            return Err(FlmmError::invalid("levels", "need at least two levels"));
        }
        if let Some(bad) = self.levels.iter().find(|&&m| m == 0 || !self.finest_steps.is_multiple_of(m)) {
            return Err(FlmmError::invalid(
                "levels",
                format!("level {bad} does not divide the finest grid of {} steps", self.finest_steps),
            ));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(FlmmError::invalid("tau", "must be > 0"));
        }
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn path_errors(start: &MarketState, model: &ModelParams, spec: &ConvergenceSpec, path: u64) -> Result<Vec<f64>> {
    let free = ImpactParams::frictionless();
    let mut rng = stream_rng(spec.seed, path);
    let fine_dt = spec.tau / spec.finest_steps as f64;
    let fine: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.finest_steps)
        .map(|_| sample_fine_increments(&mut rng, fine_dt, spec.substeps))
        .collect();
    let w = [
        fine.iter().flat_map(|f| &f.0).sum::<f64>(),
        fine.iter().flat_map(|f| &f.1).sum::<f64>(),
    ];
    let exact = exact_gbm_terminal(start, spec.tau, w, model);
    spec.levels
        .iter()
        .map(|&m| {
            let group = spec.finest_steps / m;
            let dt = spec.tau / m as f64;
            let mut s = *start;
            for c in 0..m {
                let chunk = &fine[c * group..(c + 1) * group];
                let a: Vec<f64> = chunk.iter().flat_map(|f| f.0.iter().copied()).collect();
                let b: Vec<f64> = chunk.iter().flat_map(|f| f.1.iter().copied()).collect();
                s = milstein_step(&s, &StepNoise::from_fine(&a, &b), c as f64 * dt, dt, spec.tau, model, &free)?;
            }
            Ok((s.s1 - exact.s1).abs() + (s.s2 - exact.s2).abs())
        })
        .collect()
}

pub fn strong_convergence(start: &MarketState, model: &ModelParams, spec: &ConvergenceSpec) -> Result<ConvergenceReport> {
    start.validate()?;
    model.validate()?;
    spec.validate()?;
    let per_path: Vec<Vec<f64>> = (0..spec.n_paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|p| path_errors(start, model, spec, p as u64))
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = (0..spec.levels.len())
        .map(|l| mean(&per_path.iter().map(|e| e[l]).collect::<Vec<_>>()))
        .collect();
    let dts: Vec<f64> = spec.levels.iter().map(|&m| spec.tau / m as f64).collect();
    Ok(ConvergenceReport {
        levels: spec.levels.clone(),
        slope: log_log_slope(&dts, &errors),
        dts,
        errors,
    })
}
