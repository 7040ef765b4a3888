use std::path::Path;
use std::time::Instant;

use flmm_core::{
    delta_estimate, lva_table, margrabe_greeks, margrabe_price, price_estimate, strong_convergence, ConvergenceSpec,
    ImpactParams,
};
use flmm_surrogate::net::{Table, HISTORY_CSV_HEADER};
use flmm_surrogate::{
    build_dataset, evaluate, load_dataset, load_model, save_model, train, LabeledSample, SampleInput, SurrogateError,
};
use serde_json::json;

use crate::config::{LevyScaling, Params};
use crate::error::{Category, CliError, CliResult};
use crate::output::{Cell, Report};

pub fn price(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let (start, model, impact) = (p.state()?, p.model()?, p.impact()?);
    let v_margrabe = margrabe_price(&start, p.tau(), &model)?;
    let mut rep = Report::new(
        "price",
        &[
            "s1", "s2", "tau", "epsilon", "n_paths", "n_steps", "levy_substeps", "value", "std_error", "ci_low",
            "ci_high", "ci_length", "n_used", "n_discarded", "c_hat", "vr_factor", "status", "v_margrabe",
        ],
    );
    let ns = p.n_list.clone().unwrap_or_else(|| vec![p.engine().n_paths]);
    for n in ns {
        let grid = p.grid(n, seed)?;
        let e = price_estimate(&start, &model, &impact, &grid)?;
        rep.push(vec![
            start.s1.into(),
            start.s2.into(),
            grid.tau().into(),
            impact.epsilon.into(),
            n.into(),
            grid.n_steps.into(),
            grid.levy_substeps.into(),
            e.value.into(),
            e.std_error.into(),
            e.ci_low.into(),
            e.ci_high.into(),
            e.ci_length().into(),
            e.n_used.into(),
            e.n_discarded.into(),
            e.c_hat.into(),
            e.vr_factor.into(),
            e.status.as_str().into(),
            v_margrabe.into(),
        ]);
    }
    Ok(rep)
}

pub fn greeks(p: &Params) -> CliResult<Report> {
    let (start, model, tau) = (p.state()?, p.model()?, p.tau());
    let g = margrabe_greeks(&start, tau, &model)?;
    let mut rep = Report::new("greeks", &["name", "value"]);
    rep.push(vec!["price".into(), margrabe_price(&start, tau, &model)?.into()]);
    for (name, v) in g.named_fields() {
        rep.push(vec![name.into(), v.into()]);
    }
    Ok(rep)
}

pub fn lva(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let (model, base) = (p.model()?, p.impact()?);
    let grid = p.grid(p.engine().n_paths, seed)?;
    let cells = p.cells()?;
    let mut rep = Report::new(
        "lva",
        &["epsilon", "s1", "s2", "v_flmm", "v_margrabe", "excess", "se", "ci_low", "ci_high"],
    );
    for eps in p.epsilons.clone().unwrap_or_else(|| vec![base.epsilon]) {
        let impact = ImpactParams { epsilon: eps, ..base };
        impact.validate()?;
        for row in lva_table(&cells, &model, &impact, &grid)? {
            let mut cells: Vec<Cell> = vec![eps.into()];
            cells.extend(
                [row.s1, row.s2, row.v_flmm, row.v_margrabe, row.excess, row.std_error, row.ci_low, row.ci_high]
                    .map(Cell::from),
            );
            rep.push(cells);
        }
    }
    Ok(rep)
}

pub fn delta(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let (model, impact) = (p.model()?, p.impact()?);
    let grid = p.grid(p.engine().n_paths, seed)?;
    let mut rep = Report::new(
        "delta",
        &[
            "s1", "s2", "delta1", "se1", "ci_low1", "ci_high1", "margrabe1", "excess1", "delta2", "se2", "ci_low2",
            "ci_high2", "margrabe2", "excess2", "n_used", "n_discarded", "status",
        ],
    );
    for (s1, s2) in p.cells()? {
        let start = flmm_core::MarketState::new(s1, s2)?;
        let d = delta_estimate(&start, &model, &impact, &grid)?;
        let ex = d.excess();
        let mut row: Vec<Cell> = vec![s1.into(), s2.into()];
        for i in 0..2 {
            row.extend([d.delta[i], d.std_error[i], d.ci_low[i], d.ci_high[i], d.margrabe[i], ex[i]].map(Cell::from));
        }
        row.extend([d.n_used.into(), d.n_discarded.into(), d.status.as_str().into()]);
        rep.push(row);
    }
    Ok(rep)
}

/// Lévy sub-steps used at `m` steps.
pub fn bench_substeps(scaling: LevyScaling, base: usize, m: usize) -> usize {
    match scaling {
        LevyScaling::Fixed => base,
        LevyScaling::Proportional => (base * m / 100).max(1),
    }
}

/// Appends one timing row; returns the time ratio to the previous row.
fn bench_row(rep: &mut Report, sweep: &str, mkn: [usize; 3], t: f64, prev: Option<(f64, f64)>, size: f64, est: [f64; 2]) -> f64 {
    let (ratio, lin) = match prev {
        Some((pt, ps)) => (t / pt, (t / pt) / (size / ps)),
        None => (f64::NAN, f64::NAN),
    };
    let mut row: Vec<Cell> = vec![sweep.into()];
    row.extend(mkn.map(Cell::from));
    row.extend([t, ratio, lin, est[0], est[1]].map(Cell::from));
    rep.push(row);
    ratio
}

pub fn bench(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let (start, model, impact) = (p.state()?, p.model()?, p.impact()?);
    let scaling = p.levy_scaling.unwrap_or(LevyScaling::Proportional);
    let n_paths = p.n_paths.unwrap_or(1000);
    let base_k = p.levy_substeps();
    let run = |n: usize, m: usize, k: usize| -> CliResult<(f64, f64, f64)> {
        let grid = flmm_core::GridSpec::new(n, m, p.tau(), seed).with_levy_substeps(k);
        let clock = Instant::now();
        let e = price_estimate(&start, &model, &impact, &grid)?;
        Ok((clock.elapsed().as_secs_f64(), e.value, e.ci_length()))
    };
    // Warm-up: thread pool start and page faults stay out of the first timing.
    run(n_paths.min(100), 10, 1)?;

    let mut rep = Report::new(
        "bench",
        &["sweep", "n_steps", "levy_substeps", "n_paths", "seconds", "ratio", "ratio_vs_linear", "value", "ci_length"],
    );
    let ms = p.m_list.clone().unwrap_or_else(|| vec![100, 200, 400, 800]);
    let mut prev = None;
    let mut m_ratios = Vec::new();
    for &m in &ms {
        let k = bench_substeps(scaling, base_k, m);
        let (t, v, ci) = run(n_paths, m, k)?;
        let ratio = bench_row(&mut rep, "M", [m, k, n_paths], t, prev, m as f64, [v, ci]);
        if prev.is_some() {
            m_ratios.push((ratio, m));
        }
        prev = Some((t, m as f64));
    }

    let mut n_ok = true;
    if let Some(ns) = &p.n_list {
        let m = p.engine().n_steps;
        let mut prev = None;
        for &n in ns {
            let (t, v, ci) = run(n, m, base_k)?;
            let ratio = bench_row(&mut rep, "N", [m, base_k, n], t, prev, n as f64, [v, ci]);
            if let Some((_, pn)) = prev {
                let lin = ratio / (n as f64 / pn);
                n_ok &= (0.8..=1.3).contains(&lin);
            }
            prev = Some((t, n as f64));
        }
        rep.note("n_linear", if n_ok { "true" } else { "false" });
    }

    let doubling: Vec<f64> = m_ratios
        .iter()
        .zip(&ms)
        .filter(|((_, m), prev_m)| *m == 2 * **prev_m)
        .map(|((r, _), _)| *r)
        .collect();
    let superlinear = doubling.iter().all(|&r| r > 2.0);
    let quadratic = doubling.iter().all(|&r| (3.0..=5.0).contains(&r));
    rep.note("levy_scaling", if scaling == LevyScaling::Proportional { "proportional" } else { "fixed" });
    rep.note("superlinear", if superlinear { "true" } else { "false" });
    rep.note("near_quadratic", if quadratic { "true" } else { "false" });
    Ok(rep)
}

/// Fails a proportional-scaling benchmark whose doubling ratios are not above 2.
pub fn check_bench(rep: &Report) -> CliResult<()> {
    let flag = |k: &str| rep.summary.iter().any(|(key, v)| *key == k && *v == Cell::from("true"));
    let proportional = rep.summary.iter().any(|(k, v)| *k == "levy_scaling" && *v == Cell::from("proportional"));
    if proportional && !flag("superlinear") {
        return Err(CliError::new(
            Category::Numerical,
            "not_superlinear",
            "time ratio for M -> 2M is not above 2",
            json!({}),
        ));
    }
    Ok(())
}

pub fn convergence(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let (start, model) = (p.state()?, p.model()?);
    let levels = p.m_list.clone().unwrap_or_else(|| vec![8, 16, 32, 64, 128]);
    let spec = ConvergenceSpec {
        n_paths: p.n_paths.unwrap_or(10_000),
        finest_steps: p.finest_steps.unwrap_or_else(|| levels.iter().copied().max().unwrap_or(0)),
        substeps: p.levy_substeps.unwrap_or(4),
        levels,
        tau: p.tau(),
        seed,
    };
    let out = strong_convergence(&start, &model, &spec)?;
    let mut rep = Report::new("convergence", &["n_steps", "dt", "mean_abs_error"]);
    for i in 0..out.levels.len() {
        rep.push(vec![out.levels[i].into(), out.dts[i].into(), out.errors[i].into()]);
    }
    rep.note("slope", out.slope);
    Ok(rep)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dataset(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let stem = p.require_path("data", &p.data)?;
    let cfg = p.dataset_config(seed)?;
    let mut rep = Report::new("dataset", &["shard", "file", "n_rows", "n_dropped", "resumed"]);
    let summary = build_dataset(&cfg, stem, |r| {
        let file = r.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        rep.push(vec![
            r.shard.into(),
            file.into(),
            r.n_rows.into(),
            r.n_dropped.into(),
            if r.resumed { "true" } else { "false" }.into(),
        ]);
    })?;
    let ds = load_dataset(stem)?;
    rep.note("n_rows", summary.n_rows);
    rep.note("n_dropped", summary.n_dropped);
    rep.note("content_sha256", hex(&ds.content_hash()));
    Ok(rep)
}

/// Samples from a dataset stem, or from a CSV file with feature and label columns.
pub fn load_samples(path: &Path, need_label: bool) -> CliResult<Vec<LabeledSample>> {
    let is_csv = path.extension().is_some_and(|e| e == "csv");
    if !is_csv {
        return Ok(load_dataset(path)?.samples);
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = Vec::new();
    for name in SampleInput::FEATURE_NAMES {
        cols.push(find(name).ok_or_else(|| missing_column(path, name))?);
    }
    let label = find("label");
    if need_label && label.is_none() {
        return Err(missing_column(path, "label"));
    }
    let label_se = find("label_se");
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let get = |i: usize| -> CliResult<f64> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                CliError::new(
                    Category::Validation,
                    "bad_value",
                    format!("row {} column {} is not a number", line + 1, headers.get(i).unwrap_or("?")),
                    json!({ "path": path.display().to_string(), "row": line + 1 }),
                )
            })
        };
        let f: Vec<f64> = cols.iter().map(|&i| get(i)).collect::<CliResult<_>>()?;
        let input = SampleInput::from_features(&f);
        input.validate()?;
        out.push(LabeledSample {
            input,
            label: label.map(get).transpose()?.unwrap_or(f64::NAN),
            label_se: label_se.map(get).transpose()?.unwrap_or(0.0),
        });
    }
    if out.is_empty() {
        return Err(SurrogateError::Empty("input file").into());
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let category = if e.is_io_error() { Category::Io } else { Category::Validation };
    CliError::new(category, "csv", e.to_string(), json!({ "path": path.display().to_string() }))
}

fn missing_column(path: &Path, name: &str) -> CliError {
    CliError::new(
        Category::Validation,
        "missing_column",
        format!("column `{name}` not found"),
        json!({ "path": path.display().to_string(), "column": name }),
    )
}

pub fn train_cmd(p: &Params) -> CliResult<Report> {
    let seed = p.require_seed()?;
    let data = load_dataset(p.require_path("data", &p.data)?)?;
    let val = p.val.as_deref().map(load_dataset).transpose()?;
    let dest = p.require_path("model", &p.model)?;
    let cfg = p.net_config(seed)?;
    let table = Table::from_samples(&data.samples);
    let val_table = val.as_ref().map(|v| Table::from_samples(&v.samples));
    let model = train(&table, val_table.as_ref(), &cfg, |_| {})?;
    save_model(&model, dest)?;
    let mut rep = Report::new("train", &HISTORY_CSV_HEADER.split(',').collect::<Vec<_>>());
    for r in &model.history {
        rep.push(
            [r.train_mse, r.train_mae, r.val_mse, r.val_mae, r.learning_rate]
                .into_iter()
                .fold(vec![r.epoch.into()], |mut v, x| {
                    v.push(x.into());
                    v
                }),
        );
    }
    rep.note("best_epoch", model.best_epoch);
    rep.note("stop", model.stop.as_str());
    rep.note("n_params", model.net.n_params());
    rep.note("train_rows", table.len());
    rep.note("val_rows", val_table.as_ref().map_or(0, Table::len));
    rep.note("dataset_sha256", hex(&model.dataset_hash));
    Ok(rep)
}

pub fn eval(p: &Params) -> CliResult<Report> {
    let model = load_model(p.require_path("model", &p.model)?)?;
    let samples = load_samples(p.require_path("data", &p.data)?, true)?;
    let m = evaluate(&model.net, &Table::from_samples(&samples))?;
    let mut rep = Report::new(
        "eval",
        &[
            "n", "mse", "mae", "mean_label", "mae_rel", "residual_mean", "residual_sd", "residual_mean_se",
            "beyond_3sd", "beyond_3sd_frac",
        ],
    );
    rep.push(vec![
        m.n.into(),
        m.mse.into(),
        m.mae.into(),
        m.mean_label.into(),
        m.mae_rel().into(),
        m.residual_mean.into(),
        m.residual_sd.into(),
        m.residual_mean_se().into(),
        m.beyond_3sd.into(),
        m.beyond_3sd_frac().into(),
    ]);
    Ok(rep)
}

pub fn predict(p: &Params) -> CliResult<Report> {
    let model = load_model(p.require_path("model", &p.model)?)?;
    let samples = load_samples(p.require_path("input", &p.input)?, false)?;
    let timing = p.timing.unwrap_or(false);
    let mut cols: Vec<&'static str> = SampleInput::FEATURE_NAMES.to_vec();
    cols.push("prediction");
    if timing {
        cols.push("latency_us");
    }
    let mut rep = Report::new("predict", &cols);
    let mut total = 0.0;
    for s in &samples {
        let clock = Instant::now();
        let y = model.predict(&s.input)?;
        let us = clock.elapsed().as_secs_f64() * 1e6;
        total += us;
        let mut row: Vec<Cell> = s.input.features().map(Cell::from).to_vec();
        row.push(y.into());
        if timing {
            row.push(us.into());
        }
        rep.push(row);
    }
    if timing {
        rep.note("mean_latency_us", total / samples.len() as f64);
    }
    Ok(rep)
}
