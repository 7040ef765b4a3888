//! Desk-scale surrogate study: datasets, training, test metrics and the
//! reference grid, cached under one artifact directory.
//!
//! Every step is keyed by file name and skipped when its output exists, so an
//! interrupted study resumes where it stopped. Dataset shards resume
//! individually.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flmm_core::mc::fmt_f64;
use flmm_core::rng::derive_seed;
use flmm_core::{price_estimate, ImpactParams};
use flmm_surrogate::dataset::ShardReport;
use flmm_surrogate::net::Table;
use flmm_surrogate::{
    build_dataset, evaluate, load_dataset, load_model, save_model, train, Dataset, DatasetConfig, EngineSpec,
    LognormalScheme, Metrics, NetConfig, SampleInput, TrainedModel,
};

use crate::error::{CliError, CliResult};

pub const STUDY_SEED: u64 = 20_240_501;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub train: DatasetConfig,
    pub val: DatasetConfig,
    pub test: DatasetConfig,
    pub net: NetConfig,
    pub grid: Vec<SampleInput>,
    pub grid_engine: EngineSpec,
    pub grid_seed: u64,
}

const LEVY: usize = 32;

fn dataset(count: usize, seed: u64, n_paths: usize, shard_size: usize) -> DatasetConfig {
    DatasetConfig {
        count,
        seed,
        engine: EngineSpec {
            n_paths,
            n_steps: 100,
            levy_substeps: LEVY,
        },
        impact: ImpactParams::default(),
        scheme: LognormalScheme::default(),
        shard_size,
    }
}

/// Reference grid: s1=60, s2=80, sigma=(0.4, 0.2), r=0.05 over rho and tau.
pub fn reference_grid() -> Vec<SampleInput> {
    let mut out = Vec::new();
    for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for tau in [0.5, 1.0, 2.0] {
            out.push(SampleInput {
                s1: 60.0,
                s2: 80.0,
                sigma1: 0.4,
                sigma2: 0.2,
                r: 0.05,
                rho,
                tau,
            });
        }
    }
    out
}

impl StudyPlan {
    /// 1e5 desk labels (N=100), 1e3 validation labels (N=1e4), 1e3 test
    /// labels (N=1e5); M=100 and K=32 throughout.
    pub fn desk() -> Self {
        let seed = |k| derive_seed(STUDY_SEED, k);
        Self {
            train: dataset(100_000, seed(1), 100, 5_000),
            val: dataset(1_000, seed(2), 10_000, 100),
            test: dataset(1_000, seed(3), 100_000, 25),
            net: NetConfig {
                lr_decay: 0.995,
                seed: seed(4),
                ..NetConfig::default()
            },
            grid: reference_grid(),
            grid_engine: EngineSpec {
                n_paths: 100_000,
                n_steps: 100,
                levy_substeps: LEVY,
            },
            grid_seed: seed(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub input: SampleInput,
    pub mc: f64,
    pub mc_se: f64,
    pub prediction: f64,
}

impl GridRow {
    pub const CSV_HEADER: &'static str = "rho,tau,mc,mc_se,prediction,rel_err";

    pub fn rel_err(&self) -> f64 {
        (self.prediction - self.mc).abs() / self.mc.abs()
    }

    pub fn csv_row(&self) -> String {
        [self.input.rho, self.input.tau, self.mc, self.mc_se, self.prediction, self.rel_err()]
            .map(fmt_f64)
            .join(",")
    }
}

pub struct StudyOutcome {
    pub model: TrainedModel,
    pub test: Metrics,
    pub grid: Vec<GridRow>,
    pub train_seconds: Option<f64>,
}

pub struct Study {
    pub dir: PathBuf,
    pub plan: StudyPlan,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

impl Study {
    pub fn new(dir: impl Into<PathBuf>, plan: StudyPlan) -> Self {
        Self { dir: dir.into(), plan }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn datasets(&self, mut log: impl FnMut(&str)) -> CliResult<[Dataset; 3]> {
        let mut out = Vec::new();
        for (name, cfg) in [("train", &self.plan.train), ("val", &self.plan.val), ("test", &self.plan.test)] {
            let stem = self.path(name);
            let clock = Instant::now();
            build_dataset(cfg, &stem, |r: &ShardReport| {
                if !r.resumed {
                    log(&format!("{name} shard {} rows {} ({:.0} s)", r.shard, r.n_rows, clock.elapsed().as_secs_f64()));
                }
            })?;
            out.push(load_dataset(&stem)?);
        }
        let [a, b, c]: [Dataset; 3] = out.try_into().map_err(|_| CliError::internal("dataset count"))?;
        Ok([a, b, c])
    }

    /// Trains once; later calls load the saved model.
    pub fn model(&self, train_set: &Dataset, val: &Dataset, mut log: impl FnMut(&str)) -> CliResult<(TrainedModel, Option<f64>)> {
        let path = self.path("model.flmmnet");
        if path.exists() {
            return Ok((load_model(&path)?, None));
        }
        let clock = Instant::now();
        let model = train(
            &Table::from_samples(&train_set.samples),
            Some(&Table::from_samples(&val.samples)),
            &self.plan.net,
            |r| {
                if r.epoch % 10 == 0 {
                    log(&format!(
                        "epoch {} train_mse {:.4e} val_mse {:.4e} ({:.0} s)",
                        r.epoch,
                        r.train_mse,
                        r.val_mse,
                        clock.elapsed().as_secs_f64()
                    ));
                }
            },
        )?;
        let seconds = clock.elapsed().as_secs_f64();
        save_model(&model, &path)?;
        write(&self.path("history.csv"), &model.history_csv())?;
        write(&self.path("train_seconds.txt"), &format!("{seconds}\n"))?;
        Ok((model, Some(seconds)))
    }

    /// Training wall time recorded when the model was trained.
    pub fn recorded_train_seconds(&self) -> Option<f64> {
        read(&self.path("train_seconds.txt")).ok()?.trim().parse().ok()
    }

    /// Fresh high-accuracy Monte Carlo values on the reference grid.
    pub fn grid_reference(&self, mut log: impl FnMut(&str)) -> CliResult<Vec<(f64, f64)>> {
        let path = self.path("grid_mc.csv");
        if let Ok(text) = read(&path) {
            let rows: Option<Vec<(f64, f64)>> = text
                .lines()
                .skip(1)
                .map(|l| {
                    let v: Vec<f64> = l.split(',').filter_map(|x| x.parse().ok()).collect();
                    (v.len() == 4).then(|| (v[2], v[3]))
                })
                .collect();
            if let Some(rows) = rows.filter(|r| r.len() == self.plan.grid.len()) {
                return Ok(rows);
            }
        }
        let impact = self.plan.train.impact;
        let mut text = String::from("rho,tau,mc,mc_se\n");
        let mut rows = Vec::new();
        for (i, s) in self.plan.grid.iter().enumerate() {
            let grid = self.plan.grid_engine.grid(s.tau, derive_seed(self.plan.grid_seed, i as u64));
            let est = price_estimate(&s.state(), &s.model(), &impact, &grid)?;
            log(&format!("grid rho={} tau={} mc={:.6}", s.rho, s.tau, est.value));
            text.push_str(&[s.rho, s.tau, est.value, est.std_error].map(fmt_f64).join(","));
            text.push('\n');
            rows.push((est.value, est.std_error));
        }
        write(&path, &text)?;
        Ok(rows)
    }

    pub fn run(&self, mut log: impl FnMut(&str)) -> CliResult<StudyOutcome> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let [train_set, val, test] = self.datasets(&mut log)?;
        let (model, fresh) = self.model(&train_set, &val, &mut log)?;
        let metrics = evaluate(&model.net, &Table::from_samples(&test.samples))?;
        let reference = self.grid_reference(&mut log)?;
        let grid = self
            .plan
            .grid
            .iter()
            .zip(reference)
            .map(|(s, (mc, mc_se))| {
                Ok(GridRow {
                    input: *s,
                    mc,
                    mc_se,
                    prediction: model.predict(s)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(StudyOutcome {
            train_seconds: fresh.or_else(|| self.recorded_train_seconds()),
            model,
            test: metrics,
            grid,
        })
    }
}
