mod oracle;

use flmm_core::rng::stream_rng;
use flmm_core::sde::{
    jacobian_step, milstein_step, sample_fine_increments, sample_step_noise, simulate_coupled_paths, simulate_path,
    band_levels, write_path_dump, SimulationOptions,
};
use flmm_core::stats::{covariance, mean, variance};
use flmm_core::{price_estimate, FlmmError, GridSpec, ImpactParams, MarketState, ModelParams, PathJacobian, StepNoise};
use oracle::{gbm_exact, log_log_slope};

fn table_model() -> ModelParams {
    ModelParams::new(0.4, 0.2, 0.5, 0.05).unwrap()
}

fn table_state() -> MarketState {
    MarketState::new(60.0, 80.0).unwrap()
}

#[test]
fn levy_area_moments() {
    let dt = 0.01;
    let n = 100_000;
    let mut rng = stream_rng(17, 0);
    let areas: Vec<f64> = (0..n).map(|_| sample_step_noise(&mut rng, dt, 256).area).collect();
    let m = mean(&areas);
    let v = variance(&areas);
    let se = (v / n as f64).sqrt();
    assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
    assert!((v / (dt * dt) - 1.0).abs() < 0.05, "var/dt^2 = {}", v / (dt * dt));
}

#[test]
fn levy_area_matches_direct_double_sum() {
    // A12 = sum_{i<j} (d1_i d2_j - d2_i d1_j), written out independently.
    let mut rng = stream_rng(5, 9);
    let (i1, i2) = sample_fine_increments(&mut rng, 0.3, 40);
    let mut direct = 0.0;
    for j in 0..40 {
        for i in 0..j {
            direct += i1[i] * i2[j] - i2[i] * i1[j];
        }
    }
    let noise = StepNoise::from_fine(&i1, &i2);
    assert!((noise.area - direct).abs() < 1e-14);
}

#[test]
fn strong_order_one_against_exact_gbm() {
    let m = table_model();
    let s0 = table_state();
    let tau = 0.5;
    let fine_steps = 128;
    let k = 4;
    let n_paths = 10_000;
    let levels = [8usize, 16, 32, 64, 128];
    let mut err = vec![0.0; levels.len()];
    let frictionless = ImpactParams::frictionless();
    for p in 0..n_paths {
        let mut rng = stream_rng(31, p);
        let fine: Vec<(Vec<f64>, Vec<f64>)> = (0..fine_steps)
            .map(|_| sample_fine_increments(&mut rng, tau / fine_steps as f64, k))
            .collect();
        let w1: f64 = fine.iter().flat_map(|f| f.0.iter()).sum();
        let w2: f64 = fine.iter().flat_map(|f| f.1.iter()).sum();
        let (e1, e2) = gbm_exact(&s0, tau, w1, w2, &m);
        for (li, &steps) in levels.iter().enumerate() {
            let group = fine_steps / steps;
            let dt = tau / steps as f64;
            let mut s = s0;
            for c in 0..steps {
                let chunk = &fine[c * group..(c + 1) * group];
                let a: Vec<f64> = chunk.iter().flat_map(|f| f.0.iter().copied()).collect();
                let b: Vec<f64> = chunk.iter().flat_map(|f| f.1.iter().copied()).collect();
                let noise = StepNoise::from_fine(&a, &b);
                s = milstein_step(&s, &noise, c as f64 * dt, dt, tau, &m, &frictionless).unwrap();
            }
            err[li] += ((s.s1 - e1).abs() + (s.s2 - e2).abs()) / n_paths as f64;
        }
    }
    let dts: Vec<f64> = levels.iter().map(|&s| tau / s as f64).collect();
    let slope = log_log_slope(&dts, &err);
    assert!((0.8..=1.2).contains(&slope), "slope {slope}, errors {err:?}");
}

#[test]
fn frictionless_arms_coincide() {
    let grid = GridSpec::new(500, 50, 0.5, 77);
    let paths = simulate_coupled_paths(&table_state(), &grid, &table_model(), &ImpactParams::frictionless(), SimulationOptions { jacobians: true }).unwrap();
    assert!(paths.discarded.is_empty());
    for t in &paths.terminals {
        assert_eq!(t.flmm, t.cv);
        assert_eq!(t.jac, t.jac_cv);
    }
}

#[test]
fn gbm_pathwise_jacobian_is_multiplicative() {
    let grid = GridSpec::new(200, 100, 0.5, 8);
    let s0 = table_state();
    let paths = simulate_coupled_paths(&s0, &grid, &table_model(), &ImpactParams::frictionless(), SimulationOptions { jacobians: true }).unwrap();
    for t in &paths.terminals {
        let j = t.jac.unwrap().0;
        assert!((j[0][0] / (t.flmm.s1 / s0.s1) - 1.0).abs() < 1e-10);
        assert!((j[1][1] / (t.flmm.s2 / s0.s2) - 1.0).abs() < 1e-10);
        assert_eq!(j[0][1], 0.0);
        assert_eq!(j[1][0], 0.0);
    }
}

#[test]
fn jacobian_matches_common_random_number_bumps() {
    let m = table_model();
    let impact = ImpactParams::default();
    for (s1, s2) in [(60.0, 80.0), (10.0, 10.0), (30.0, 27.0)] {
        let s0 = MarketState::new(s1, s2).unwrap();
        let grid = GridSpec::new(20, 50, 0.5, 4242).with_levy_substeps(8);
        let levels = band_levels(&grid, &impact);
        let opts = SimulationOptions { jacobians: true };
        for path in 0..grid.n_paths {
            let base = simulate_path(path, &s0, &grid, &levels, &m, &impact, opts).unwrap();
            let j = base.jac.unwrap().0;
            for col in 0..2 {
                let h = 1e-4 * [s1, s2][col];
                let bump = |sign: f64| {
                    let mut s = s0;
                    if col == 0 {
                        s.s1 += sign * h;
                    } else {
                        s.s2 += sign * h;
                    }
                    simulate_path(path, &s, &grid, &levels, &m, &impact, SimulationOptions::default()).unwrap().flmm
                };
                let (up, dn) = (bump(1.0), bump(-1.0));
                let fd = [(up.s1 - dn.s1) / (2.0 * h), (up.s2 - dn.s2) / (2.0 * h)];
                let scale = j[0][0].abs().max(j[1][1].abs());
                for row in 0..2 {
                    let tol = 1e-4 * j[row][col].abs().max(1e-3 * scale);
                    assert!((j[row][col] - fd[row]).abs() <= tol, "({s1},{s2}) path {path} d{row}/d{col}: {} vs {}", j[row][col], fd[row]);
                }
            }
        }
    }
}

#[test]
fn jacobian_step_composes_with_milstein_step() {
    let m = table_model();
    let impact = ImpactParams::default();
    let mut rng = stream_rng(3, 0);
    let (tau, steps) = (0.5, 20);
    let dt = tau / steps as f64;
    let mut s = MarketState::new(10.0, 10.5).unwrap();
    let mut jac = PathJacobian::identity();
    let grid = GridSpec::new(1, steps, tau, 3).with_levy_substeps(8);
    for step in 0..steps {
        let noise = sample_step_noise(&mut rng, dt, 8);
        let t = step as f64 * dt;
        jac = jacobian_step(&jac, &s, &noise, t, dt, tau, &m, &impact).unwrap();
        s = milstein_step(&s, &noise, t, dt, tau, &m, &impact).unwrap();
    }
    let levels = band_levels(&grid, &impact);
    let path = simulate_path(0, &MarketState::new(10.0, 10.5).unwrap(), &grid, &levels, &m, &impact, SimulationOptions { jacobians: true }).unwrap();
    assert_eq!(path.flmm, s);
    assert_eq!(path.jac.unwrap(), jac);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let grid = GridSpec::new(3000, 20, 0.5, 99).with_levy_substeps(4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let paths = simulate_coupled_paths(&table_state(), &grid, &table_model(), &ImpactParams::default(), SimulationOptions::default()).unwrap();
            let mut buf = Vec::new();
            write_path_dump(&mut buf, &grid, &paths).unwrap();
            let est = price_estimate(&table_state(), &table_model(), &ImpactParams::default(), &grid).unwrap();
            (buf, est.csv_row())
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(8));
}

#[test]
fn asset_two_is_an_exact_martingale_under_impact() {
    let m = table_model();
    let grid = GridSpec::new(100_000, 100, 0.5, 1234).with_levy_substeps(4);
    let paths = simulate_coupled_paths(&table_state(), &grid, &m, &ImpactParams::default(), SimulationOptions::default()).unwrap();
    assert!(paths.discarded.is_empty());
    let s2: Vec<f64> = paths.terminals.iter().map(|t| t.flmm.s2).collect();
    let se = (variance(&s2) / s2.len() as f64).sqrt();
    let want = 80.0 * (0.05f64 * 0.5).exp();
    assert!((mean(&s2) - want).abs() < 3.0 * se, "{} vs {want} (se {se})", mean(&s2));
}

#[test]
fn frictionless_log_return_correlation() {
    let m = table_model();
    let grid = GridSpec::new(100_000, 100, 0.5, 4321).with_levy_substeps(4);
    let s0 = table_state();
    let paths = simulate_coupled_paths(&s0, &grid, &m, &ImpactParams::frictionless(), SimulationOptions::default()).unwrap();
    let l1: Vec<f64> = paths.terminals.iter().map(|t| (t.cv.s1 / s0.s1).ln()).collect();
    let l2: Vec<f64> = paths.terminals.iter().map(|t| (t.cv.s2 / s0.s2).ln()).collect();
    let corr = covariance(&l1, &l2) / (variance(&l1) * variance(&l2)).sqrt();
    let se = (1.0 - 0.25) / (l1.len() as f64).sqrt();
    assert!((corr - 0.5).abs() < 3.0 * se, "corr {corr} se {se}");
}

#[test]
fn regularity_failures_discard_paths() {
    let m = ModelParams::new(0.2, 0.2, 0.95, 0.0).unwrap();
    let impact = ImpactParams {
        epsilon: 1.0,
        ..ImpactParams::default()
    };
    let s0 = MarketState::new(0.5, 0.5).unwrap();
    let grid = GridSpec::new(10, 10, 0.5, 1);
    let paths = simulate_coupled_paths(&s0, &grid, &m, &impact, SimulationOptions::default()).unwrap();
    assert_eq!(paths.n_used(), 0);
    assert_eq!(paths.discarded.len(), 10);
    assert!(matches!(paths.discarded[0].error, FlmmError::Regularity { .. }));
    let mut buf = Vec::new();
    write_path_dump(&mut buf, &grid, &paths).unwrap();
    assert!(f64::from_le_bytes(buf[36..44].try_into().unwrap()).is_nan());
    assert!(matches!(price_estimate(&s0, &m, &impact, &grid), Err(FlmmError::AllPathsDiscarded { n_paths: 10 })));
}
