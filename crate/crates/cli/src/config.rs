//! Flat run configuration: a JSON object file merged with command-line flags.
//!
//! Keys are the snake_case field names below; flags use the kebab-case form
//! (`n_paths` becomes `--n-paths`). Lists are JSON arrays in the file and
//! comma-separated on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use flmm_core::{GridSpec, ImpactParams, MarketState, ModelParams};
use flmm_surrogate::{DatasetConfig, EngineSpec, LognormalScheme, NetConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// How the Lévy sub-step count follows the step count in `bench`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LevyScaling {
    /// `K = levy_substeps * M / 100`, keeping the area error per unit time fixed.
    Proportional,
    /// `K = levy_substeps` at every M.
    Fixed,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy_substeps: Option<usize>,

    /// Values used for both axes of an (s1, s2) grid.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy_scaling: Option<LevyScaling>,
    /// Finest grid of the convergence study (defaults to the largest level).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finest_steps: Option<usize>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_size: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_mean: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_var: Option<f64>,

    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_adam: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stopping: Option<bool>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_ratio: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,

    /// Dataset stem (or CSV file for `eval`).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Report timings in `predict` output (makes the output run-dependent).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,

    #[arg(long, short)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Keys left out of the configuration hash: they do not change results.
const UNHASHED: [&str; 3] = ["output", "threads", "format"];

fn to_map(p: &Params) -> Map<String, Value> {
    match serde_json::to_value(p) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

impl Params {
    pub fn from_json(text: &str, origin: &Path) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| {
            CliError::new(
                crate::error::Category::Validation,
                "invalid_config",
                format!("cannot parse config: {e}"),
                serde_json::json!({ "path": origin.display().to_string() }),
            )
        })
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Field-wise merge; values set in `over` win.
    pub fn merged(&self, over: &Params) -> Params {
        let mut base = to_map(self);
        base.extend(to_map(over));
        serde_json::from_value(Value::Object(base)).unwrap_or_else(|_| over.clone())
    }

    /// Canonical JSON of the result-relevant keys (sorted keys, no whitespace).
    pub fn canonical_json(&self) -> String {
        let mut m = to_map(self);
        for k in UNHASHED {
            m.remove(k);
        }
        Value::Object(m).to_string()
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::validation("seed", "this command is randomized and needs an explicit `seed`"))
    }

    pub fn require_path<'a>(&'a self, field: &str, v: &'a Option<PathBuf>) -> CliResult<&'a Path> {
        v.as_deref().ok_or_else(|| CliError::validation(field, format!("`{field}` is required")))
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(0.5)
    }

    pub fn state(&self) -> CliResult<MarketState> {
        Ok(MarketState::new(self.s1.unwrap_or(60.0), self.s2.unwrap_or(80.0))?)
    }

    pub fn model(&self) -> CliResult<ModelParams> {
        Ok(ModelParams::new(
            self.sigma1.unwrap_or(0.4),
            self.sigma2.unwrap_or(0.2),
            self.rho.unwrap_or(0.5),
            self.r.unwrap_or(0.05),
        )?)
    }

    pub fn impact(&self) -> CliResult<ImpactParams> {
        let d = ImpactParams::default();
        let p = ImpactParams {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            beta: self.beta.unwrap_or(d.beta),
            floor: self.floor.unwrap_or(d.floor),
            cap: self.cap.unwrap_or(d.cap),
            delta0: self.delta0.unwrap_or(d.delta0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn levy_substeps(&self) -> usize {
        self.levy_substeps.unwrap_or(32)
    }

    pub fn engine(&self) -> EngineSpec {
        EngineSpec {
            n_paths: self.n_paths.unwrap_or(10_000),
            n_steps: self.n_steps.unwrap_or(100),
            levy_substeps: self.levy_substeps(),
        }
    }

    pub fn grid(&self, n_paths: usize, seed: u64) -> CliResult<GridSpec> {
        let e = self.engine();
        let g = GridSpec::new(n_paths, e.n_steps, self.tau(), seed).with_levy_substeps(e.levy_substeps);
        g.validate()?;
        Ok(g)
    }

    /// `(s1, s2)` cells: the cross product of the s1 and s2 axes, s2 outer.
    pub fn cells(&self) -> CliResult<Vec<(f64, f64)>> {
        let axis = |own: &Option<Vec<f64>>, single: Option<f64>, fallback: f64| {
            own.clone()
                .or_else(|| self.s_grid.clone())
                .unwrap_or_else(|| vec![single.unwrap_or(fallback)])
        };
        let xs = axis(&self.s1_list, self.s1, 60.0);
        let ys = axis(&self.s2_list, self.s2, 80.0);
        if xs.is_empty() || ys.is_empty() {
            return Err(CliError::validation("s_grid", "grid axes must not be empty"));
        }
        Ok(ys.iter().flat_map(|&s2| xs.iter().map(move |&s1| (s1, s2))).collect())
    }

    pub fn dataset_config(&self, seed: u64) -> CliResult<DatasetConfig> {
        let d = LognormalScheme::default();
        let cfg = DatasetConfig {
            count: self.count.unwrap_or(1000),
            seed,
            engine: EngineSpec {
                n_paths: self.n_paths.unwrap_or(100),
                ..self.engine()
            },
            impact: self.impact()?,
            scheme: LognormalScheme {
                center: self.center.unwrap_or(d.center),
                x_mean: self.x_mean.unwrap_or(d.x_mean),
                x_var: self.x_var.unwrap_or(d.x_var),
            },
            shard_size: self.shard_size.unwrap_or(5000),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self, seed: u64) -> CliResult<NetConfig> {
        let d = NetConfig::default();
        let cfg = NetConfig {
            widths: self.widths.clone().unwrap_or(d.widths),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps_adam: self.eps_adam.unwrap_or(d.eps_adam),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            early_stopping: self.early_stopping.unwrap_or(d.early_stopping),
            validation_ratio: self.validation_ratio.unwrap_or(d.validation_ratio),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = Params::from_json(r#"{"s1": 10, "seed": 3, "n_list": [100, 200]}"#, Path::new("x")).unwrap();
        let flags = Params {
            s1: Some(20.0),
            ..Params::default()
        };
        let p = file.merged(&flags);
        assert_eq!(p.s1, Some(20.0));
        assert_eq!(p.seed, Some(3));
        assert_eq!(p.n_list, Some(vec![100, 200]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Params::from_json(r#"{"sigma": 0.2}"#, Path::new("x")).is_err());
    }

    #[test]
    fn hash_ignores_output_and_threads() {
        let a = Params {
            seed: Some(1),
            ..Params::default()
        };
        let b = Params {
            output: Some("out.csv".into()),
            threads: Some(4),
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = Params { seed: Some(2), ..a.clone() };
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn grid_cells_put_s2_outer() {
        let p = Params {
            s_grid: Some(vec![10.0, 20.0]),
            ..Params::default()
        };
        assert_eq!(p.cells().unwrap(), vec![(10.0, 10.0), (20.0, 10.0), (10.0, 20.0), (20.0, 20.0)]);
    }
}
