//! Training inputs for the surrogate: the two sampling schemes, Monte Carlo
//! labelling and the sharded on-disk format.
//!
//! A shard file `<stem>.<k>.flmmds` is a header followed by rows of nine
//! little-endian `f64` (the seven features, label, label standard error).
//! Every shard repeats the full generation config so that a partially built
//! dataset can be resumed and a stray file from another run is detected.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flmm_core::rng::{derive_seed, stream_rng};
use flmm_core::{price_estimate, GridSpec, ImpactParams, MarketState, ModelParams};
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::{Decoder, Encoder};
use crate::error::{Result, SurrogateError};

pub const N_FEATURES: usize = 7;
pub const ROW_WIDTH: usize = N_FEATURES + 2;
pub const DATASET_MAGIC: &[u8; 8] = b"FLMMDSET";
pub const DATASET_VERSION: u32 = 1;
pub const SHARD_EXT: &str = "flmmds";
pub const CSV_HEADER: &str = "s1,s2,sigma1,sigma2,r,rho,tau,label,label_se";

const STREAM_METHOD1: u64 = 0x4d31;
const STREAM_METHOD2: u64 = 0x4d32;
const LABEL_STREAM: u64 = 0x4c41_4245_4c00_0000;
const TAU_MIN: f64 = 1e-3;

/// The seven surrogate features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleInput {
    pub s1: f64,
    pub s2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub r: f64,
    pub rho: f64,
    pub tau: f64,
}

impl SampleInput {
    pub const FEATURE_NAMES: [&'static str; N_FEATURES] = ["s1", "s2", "sigma1", "sigma2", "r", "rho", "tau"];

    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.s1, self.s2, self.sigma1, self.sigma2, self.r, self.rho, self.tau]
    }

    pub fn from_features(f: &[f64]) -> Self {
        Self {
            s1: f[0],
            s2: f[1],
            sigma1: f[2],
            sigma2: f[3],
            r: f[4],
            rho: f[5],
            tau: f[6],
        }
    }

    pub fn state(&self) -> MarketState {
        MarketState {
            s1: self.s1,
            s2: self.s2,
        }
    }

    pub fn model(&self) -> ModelParams {
        ModelParams {
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            rho: self.rho,
            r: self.r,
        }
    }

    /// Checks the sampling-domain invariants.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, v: f64, range: &str| {
            if ok {
                Ok(())
            } else {
                Err(SurrogateError::config(name, format!("{v} outside {range}")))
            }
        };
        check(self.s1.is_finite() && self.s1 > 0.0, "s1", self.s1, "(0, inf)")?;
        check(self.s2.is_finite() && self.s2 > 0.0, "s2", self.s2, "(0, inf)")?;
        check(self.sigma1 > 0.0 && self.sigma1 <= 0.5, "sigma1", self.sigma1, "(0, 0.5]")?;
        check(self.sigma2 > 0.0 && self.sigma2 <= 0.5, "sigma2", self.sigma2, "(0, 0.5]")?;
        check((0.0..=0.1).contains(&self.r), "r", self.r, "[0, 0.1]")?;
        check((-1.0..=1.0).contains(&self.rho), "rho", self.rho, "[-1, 1]")?;
        check(self.tau > 0.0 && self.tau <= 2.0, "tau", self.tau, "(0, 2]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub input: SampleInput,
    pub label: f64,
    pub label_se: f64,
}

impl LabeledSample {
    pub fn row(&self) -> [f64; ROW_WIDTH] {
        let f = self.input.features();
        [f[0], f[1], f[2], f[3], f[4], f[5], f[6], self.label, self.label_se]
    }

    pub fn from_row(row: &[f64]) -> Self {
        Self {
            input: SampleInput::from_features(&row[..N_FEATURES]),
            label: row[N_FEATURES],
            label_se: row[N_FEATURES + 1],
        }
    }

    pub fn csv_row(&self) -> String {
        self.row().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    /// Every feature uniform over its range.
    Uniform,
    /// Co-moving lognormal spots and a Beta-skewed correlation.
    Lognormal,
}

/// Parameters of the lognormal scheme: `s1 = c e^{X1}`, `s2 = c e^{X1 - X2}`
/// with `X1, X2 ~ N(x_mean, x_var)` independent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalScheme {
    pub center: f64,
    pub x_mean: f64,
    pub x_var: f64,
}

impl Default for LognormalScheme {
    fn default() -> Self {
        Self {
            center: 50.0,
            x_mean: 0.5,
            x_var: 0.25,
        }
    }
}

impl LognormalScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.center.is_finite() && self.center > 0.0) {
            return Err(SurrogateError::config("center", "must be > 0"));
        }
        if !self.x_mean.is_finite() {
            return Err(SurrogateError::config("x_mean", "must be finite"));
        }
        if !(self.x_var.is_finite() && self.x_var > 0.0) {
            return Err(SurrogateError::config("x_var", "must be > 0"));
        }
        Ok(())
    }
}

/// `hi * (1 - u)` lies in `(0, hi]`.
fn open_at_zero<R: Rng + ?Sized>(rng: &mut R, hi: f64) -> f64 {
    hi * (1.0 - rng.random::<f64>())
}

fn draw_tau<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let tau = open_at_zero(rng, 2.0);
        if tau >= TAU_MIN {
            return tau;
        }
    }
}

pub fn sample_inputs<R: Rng + ?Sized>(
    method: SamplingMethod,
    count: usize,
    scheme: &LognormalScheme,
    rng: &mut R,
) -> Vec<SampleInput> {
    let x = Normal::new(scheme.x_mean, scheme.x_var.sqrt()).expect("validated scheme");
    let beta = Beta::new(5.0, 2.0).unwrap();
    (0..count)
        .map(|_| match method {
            SamplingMethod::Uniform => SampleInput {
                s1: open_at_zero(rng, 100.0),
                s2: open_at_zero(rng, 100.0),
                sigma1: open_at_zero(rng, 0.5),
                sigma2: open_at_zero(rng, 0.5),
                r: 0.1 * rng.random::<f64>(),
                rho: 2.0 * rng.random::<f64>() - 1.0,
                tau: draw_tau(rng),
            },
            SamplingMethod::Lognormal => {
                let x1 = x.sample(rng);
                let x2 = x.sample(rng);
                SampleInput {
                    s1: scheme.center * x1.exp(),
                    s2: scheme.center * (x1 - x2).exp(),
                    sigma1: open_at_zero(rng, 0.5),
                    sigma2: open_at_zero(rng, 0.5),
                    r: 0.1 * rng.random::<f64>(),
                    rho: 2.0 * (beta.sample(rng) - 0.5),
                    tau: draw_tau(rng),
                }
            }
        })
        .collect()
}

/// Paths, time steps and Lévy sub-steps of the labelling engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub levy_substeps: usize,
}

impl EngineSpec {
    pub fn grid(&self, tau: f64, seed: u64) -> GridSpec {
        GridSpec::new(self.n_paths, self.n_steps, tau, seed).with_levy_substeps(self.levy_substeps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub engine: EngineSpec,
    pub impact: ImpactParams,
    pub scheme: LognormalScheme,
    pub shard_size: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SurrogateError::config("count", "must be >= 1"));
        }
        if self.shard_size == 0 {
            return Err(SurrogateError::config("shard_size", "must be >= 1"));
        }
        self.engine.grid(1.0, self.seed).validate()?;
        self.impact.validate()?;
        self.scheme.validate()
    }

    /// Samples drawn with the uniform scheme; the rest use the lognormal one.
    pub fn n_uniform(&self) -> usize {
        self.count - self.count / 2
    }

    pub fn n_shards(&self) -> usize {
        self.count.div_ceil(self.shard_size)
    }

    pub fn shard_range(&self, shard: usize) -> std::ops::Range<usize> {
        let lo = shard * self.shard_size;
        lo..(lo + self.shard_size).min(self.count)
    }
}

/// All unlabelled inputs of a dataset, uniform-scheme samples first.
pub fn plan_inputs(cfg: &DatasetConfig) -> Vec<(SamplingMethod, SampleInput)> {
    let n1 = cfg.n_uniform();
    let mut rng1 = stream_rng(cfg.seed, STREAM_METHOD1);
    let mut rng2 = stream_rng(cfg.seed, STREAM_METHOD2);
    let first = sample_inputs(SamplingMethod::Uniform, n1, &cfg.scheme, &mut rng1);
    let second = sample_inputs(SamplingMethod::Lognormal, cfg.count - n1, &cfg.scheme, &mut rng2);
    first
        .into_iter()
        .map(|s| (SamplingMethod::Uniform, s))
        .chain(second.into_iter().map(|s| (SamplingMethod::Lognormal, s)))
        .collect()
}

/// Monte Carlo label for sample `index`; `None` when the engine rejects the
/// point or discards any path.
pub fn label_sample(
    input: &SampleInput,
    index: usize,
    seed: u64,
    engine: &EngineSpec,
    impact: &ImpactParams,
) -> Option<LabeledSample> {
    let grid = engine.grid(input.tau, derive_seed(seed ^ LABEL_STREAM, index as u64));
    let est = price_estimate(&input.state(), &input.model(), impact, &grid).ok()?;
    if est.n_discarded > 0 {
        return None;
    }
    Some(LabeledSample {
        input: *input,
        label: est.value.clamp(0.0, input.s1),
        label_se: est.std_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShardHeader {
    pub config: DatasetConfig,
    pub shard: usize,
    pub first: usize,
    pub n_inputs: usize,
    pub n_rows: usize,
    pub n_dropped: usize,
}

impl ShardHeader {
    fn encode(&self, e: &mut Encoder) {
        let c = &self.config;
        e.bytes(DATASET_MAGIC);
        e.u32(DATASET_VERSION);
        e.u64(c.seed);
        e.u64(c.count as u64);
        e.u64(c.engine.n_paths as u64);
        e.u64(c.engine.n_steps as u64);
        e.u64(c.engine.levy_substeps as u64);
        e.f64s(&[c.impact.epsilon, c.impact.beta, c.impact.floor, c.impact.cap, c.impact.delta0]);
        e.f64s(&[c.scheme.center, c.scheme.x_mean, c.scheme.x_var]);
        e.u64(c.shard_size as u64);
        for v in [self.shard, self.first, self.n_inputs, self.n_rows, self.n_dropped] {
            e.u64(v as u64);
        }
    }

    fn decode(d: &mut Decoder) -> Result<Self> {
        if d.take(8)? != DATASET_MAGIC {
            return Err(d.corrupt("bad magic"));
        }
        let version = d.u32()?;
        if version != DATASET_VERSION {
            return Err(SurrogateError::Version {
                path: d.path().to_path_buf(),
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let seed = d.u64()?;
        let count = d.usize()?;
        let engine = EngineSpec {
            n_paths: d.usize()?,
            n_steps: d.usize()?,
            levy_substeps: d.usize()?,
        };
        let impact = ImpactParams {
            epsilon: d.f64()?,
            beta: d.f64()?,
            floor: d.f64()?,
            cap: d.f64()?,
            delta0: d.f64()?,
        };
        let scheme = LognormalScheme {
            center: d.f64()?,
            x_mean: d.f64()?,
            x_var: d.f64()?,
        };
        let shard_size = d.usize()?;
        Ok(Self {
            config: DatasetConfig {
                count,
                seed,
                engine,
                impact,
                scheme,
                shard_size,
            },
            shard: d.usize()?,
            first: d.usize()?,
            n_inputs: d.usize()?,
            n_rows: d.usize()?,
            n_dropped: d.usize()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub header: ShardHeader,
    pub samples: Vec<LabeledSample>,
}

pub fn shard_path(stem: &Path, shard: usize, ext: &str) -> PathBuf {
    PathBuf::from(format!("{}.{shard}.{ext}", stem.display()))
}

pub fn encode_shard(shard: &Shard) -> Vec<u8> {
    let mut e = Encoder::default();
    shard.header.encode(&mut e);
    for s in &shard.samples {
        e.f64s(&s.row());
    }
    e.buf
}

pub fn decode_shard(bytes: &[u8], path: &Path) -> Result<Shard> {
    let mut d = Decoder::new(bytes, path);
    let header = ShardHeader::decode(&mut d)?;
    if header.n_rows + header.n_dropped != header.n_inputs {
        return Err(d.corrupt("row and drop counts do not add up"));
    }
    let flat = d.f64s(header.n_rows * ROW_WIDTH)?;
    d.finish()?;
    let samples = flat.chunks_exact(ROW_WIDTH).map(LabeledSample::from_row).collect();
    Ok(Shard { header, samples })
}

pub fn load_shard(path: &Path) -> Result<Shard> {
    let bytes = fs::read(path).map_err(|e| SurrogateError::io(path, e))?;
    decode_shard(&bytes, path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| SurrogateError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| SurrogateError::io(&tmp, e))?;
    f.sync_all().map_err(|e| SurrogateError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SurrogateError::io(path, e))
}

pub fn shard_csv(samples: &[LabeledSample]) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardReport {
    pub shard: usize,
    pub path: PathBuf,
    pub n_rows: usize,
    pub n_dropped: usize,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub shards: Vec<ShardReport>,
    pub n_rows: usize,
    pub n_dropped: usize,
}

/// Labels and writes every missing shard of `stem`. Shards already on disk
/// with the same configuration are kept as they are.
pub fn build_dataset(
    cfg: &DatasetConfig,
    stem: &Path,
    mut on_shard: impl FnMut(&ShardReport),
) -> Result<DatasetSummary> {
    cfg.validate()?;
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SurrogateError::io(dir, e))?;
    }
    let inputs = plan_inputs(cfg);
    let mut shards = Vec::with_capacity(cfg.n_shards());
    for k in 0..cfg.n_shards() {
        let range = cfg.shard_range(k);
        let path = shard_path(stem, k, SHARD_EXT);
        if path.exists() {
            if let Ok(existing) = load_shard(&path) {
                let h = existing.header;
                if h.config != *cfg || h.shard != k || h.first != range.start {
                    return Err(SurrogateError::config(
                        "output",
                        format!("{} belongs to a dataset with a different configuration", path.display()),
                    ));
                }
                let report = ShardReport {
                    shard: k,
                    path,
                    n_rows: h.n_rows,
                    n_dropped: h.n_dropped,
                    resumed: true,
                };
                on_shard(&report);
                shards.push(report);
                continue;
            }
        }
        let labelled: Vec<Option<LabeledSample>> = inputs[range.clone()]
            .par_iter()
            .enumerate()
            .map(|(j, (_, input))| {
                label_sample(input, range.start + j, cfg.seed, &cfg.engine, &cfg.impact)
            })
            .collect();
        let samples: Vec<LabeledSample> = labelled.iter().flatten().copied().collect();
        let shard = Shard {
            header: ShardHeader {
                config: *cfg,
                shard: k,
                first: range.start,
                n_inputs: range.len(),
                n_rows: samples.len(),
                n_dropped: range.len() - samples.len(),
            },
            samples,
        };
        let csv = shard_path(stem, k, "csv");
        fs::write(&csv, shard_csv(&shard.samples)).map_err(|e| SurrogateError::io(&csv, e))?;
        write_atomic(&path, &encode_shard(&shard))?;
        let report = ShardReport {
            shard: k,
            path,
            n_rows: shard.header.n_rows,
            n_dropped: shard.header.n_dropped,
            resumed: false,
        };
        on_shard(&report);
        shards.push(report);
    }
    Ok(DatasetSummary {
        n_rows: shards.iter().map(|s| s.n_rows).sum(),
        n_dropped: shards.iter().map(|s| s.n_dropped).sum(),
        shards,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<LabeledSample>,
    pub n_dropped: usize,
}

impl Dataset {
    /// SHA-256 over the little-endian rows.
    pub fn content_hash(&self) -> [u8; 32] {
        content_hash(&self.samples)
    }
}

pub fn content_hash(samples: &[LabeledSample]) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in samples {
        for v in s.row() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Reads every shard of `stem` and checks that together they cover the
/// whole configured dataset.
pub fn load_dataset(stem: &Path) -> Result<Dataset> {
    let first = shard_path(stem, 0, SHARD_EXT);
    let shard0 = load_shard(&first)?;
    let config = shard0.header.config;
    let mut samples = Vec::with_capacity(config.count);
    let mut n_dropped = 0;
    for k in 0..config.n_shards() {
        let shard = if k == 0 {
            shard0.clone()
        } else {
            load_shard(&shard_path(stem, k, SHARD_EXT))?
        };
        let h = shard.header;
        if h.config != config || h.shard != k || h.first != config.shard_range(k).start {
            return Err(SurrogateError::Corrupt {
                path: shard_path(stem, k, SHARD_EXT),
                reason: "shard header disagrees with shard 0".into(),
            });
        }
        n_dropped += h.n_dropped;
        samples.extend(shard.samples);
    }
    Ok(Dataset {
        config,
        samples,
        n_dropped,
    })
}

/// Row-major feature matrix and label vector.
pub fn design_matrix(samples: &[LabeledSample]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(samples.len() * N_FEATURES);
    let mut y = Vec::with_capacity(samples.len());
    for s in samples {
        x.extend_from_slice(&s.input.features());
        y.push(s.label);
    }
    (x, y)
}
