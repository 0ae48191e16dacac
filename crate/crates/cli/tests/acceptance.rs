//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use funsurvey_core::design::InclusionProbabilities;
use funsurvey_core::linalg::{regularized_inverse, spectral_norm, sym_eigen};
use funsurvey_core::rng::stream;
use funsurvey_core::*;
use rand::Rng;

const DESK_SEED: u64 = 2;
const DESK_UNITS: usize = 2000;
const DESK_TIMES: usize = 48;
const RESIDUAL_SD: f64 = 0.18;
const RESIDUAL_LOG_SD: f64 = 0.8;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn naive_mean(pop: &FunctionalPopulation) -> Vec<f64> {
    let d = pop.n_times();
    let mut mu = vec![0.0; d];
    for k in 0..pop.n_units() {
        for t in 0..d {
            mu[t] += pop.values()[(k, t)];
        }
    }
    mu.iter().map(|v| v / pop.n_units() as f64).collect()
}

/// Random curves with an intercept and one uniform covariate.
fn random_population(n_units: usize, d: usize, seed: u64) -> FunctionalPopulation {
    let mut rng = stream(seed, 500);
    let grid = TimeGrid::uniform(d, 1.0).unwrap();
    let mut aux = Vec::new();
    let mut values = Vec::new();
    for _ in 0..n_units {
        let z: f64 = rng.random_range(0.0..3.0);
        aux.extend([1.0, z]);
        for t in 0..d {
            values.push(1.0 + z * (1.0 + 0.2 * t as f64) + rng.random_range(-1.0..1.0));
        }
    }
    FunctionalPopulation::new(
        grid,
        Matrix::new(n_units, d, values).unwrap(),
        Matrix::new(n_units, 2, aux).unwrap(),
    )
    .unwrap()
}

fn desk_population() -> FunctionalPopulation {
    let grid = TimeGrid::uniform(DESK_TIMES, 24.0).unwrap();
    let mut cfg = SuperpopulationConfig::load_curves(&grid, RESIDUAL_SD, DESK_SEED);
    cfg.residual_scale = ResidualScale::LogNormal {
        log_sd: RESIDUAL_LOG_SD,
    };
    generate_population(&cfg, DESK_UNITS, &grid).unwrap()
}

/// Average over grid points of the correlation between the covariate and the curve value.
fn aux_correlation(pop: &FunctionalPopulation) -> f64 {
    let n = pop.n_units() as f64;
    let z: Vec<f64> = (0..pop.n_units()).map(|k| pop.aux_row(k)[1]).collect();
    let zm = z.iter().sum::<f64>() / n;
    let mut total = 0.0;
    for t in 0..pop.n_times() {
        let y: Vec<f64> = (0..pop.n_units()).map(|k| pop.values()[(k, t)]).collect();
        let ym = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (zk, yk) in z.iter().zip(&y) {
            sxy += (zk - zm) * (yk - ym);
            sxx += (zk - zm).powi(2);
            syy += (yk - ym).powi(2);
        }
        total += sxy / (sxx * syy).sqrt();
    }
    total / pop.n_times() as f64
}

const FIXTURES: [(usize, usize); 6] = [(4, 2), (5, 2), (5, 3), (6, 3), (7, 3), (8, 4)];

/// Enumerated expectation and covariance of an estimator, computed by plain summation.
fn enumerate<F: Fn(&Sample) -> Vec<f64>>(design: &SamplingDesign, f: F) -> (Vec<f64>, Vec<f64>) {
    let samples = design.enumerate_samples(1_000_000).unwrap();
    let curves: Vec<Vec<f64>> = samples.iter().map(|(s, _)| f(s)).collect();
    let d = curves[0].len();
    let mut mean = vec![0.0; d];
    for ((_, p), c) in samples.iter().zip(&curves) {
        for t in 0..d {
            mean[t] += p * c[t];
        }
    }
    let mut cov = vec![0.0; d * d];
    for ((_, p), c) in samples.iter().zip(&curves) {
        for r in 0..d {
            for t in 0..d {
                cov[r * d + t] += p * (c[r] - mean[r]) * (c[t] - mean[t]);
            }
        }
    }
    (mean, cov)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for (i, &(big_n, n)) in FIXTURES.iter().enumerate() {
        let pop = random_population(big_n, 4, i as u64);
        let design = SamplingDesign::srswor(big_n, n).unwrap();
        let mu = naive_mean(&pop);
        let (e_ht, _) = enumerate(&design, |s| ht_mean(&pop, &design, s).unwrap().curve);
        let (e_diff, _) = enumerate(&design, |s| difference_mean(&pop, &design, s).unwrap().curve);
        worst = worst.max(max_gap(&e_ht, &mu)).max(max_gap(&e_diff, &mu));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        format!("{} fixtures, max |E - mu| = {worst:.2e}, runtime {elapsed:.2?}", FIXTURES.len()),
    )
}

fn criterion_2() -> Outcome {
    let mut worst_ht = 0.0_f64;
    let mut worst_ma = 0.0_f64;
    for (i, &(big_n, n)) in FIXTURES.iter().enumerate() {
        let pop = random_population(big_n, 4, i as u64);
        let design = SamplingDesign::srswor(big_n, n).unwrap();
        let (_, c_ht) = enumerate(&design, |s| ht_mean(&pop, &design, s).unwrap().curve);
        let (_, c_diff) = enumerate(&design, |s| difference_mean(&pop, &design, s).unwrap().curve);
        let f_ht = ht_covariance_exact(&pop, &design).unwrap();
        let f_ma = ma_covariance_approx(&pop, &design).unwrap();
        worst_ht = worst_ht.max(max_gap(f_ht.matrix.as_matrix().as_slice(), &c_ht));
        worst_ma = worst_ma.max(max_gap(f_ma.matrix.as_matrix().as_slice(), &c_diff));
    }
    outcome(
        worst_ht <= 1e-12 && worst_ma <= 1e-12,
        format!("HT formula gap {worst_ht:.2e}, MA formula gap {worst_ma:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (p, (big_n, n)) in [(60usize, 10usize), (150, 25), (400, 40)].into_iter().enumerate() {
        let base = random_population(big_n, 6, 100 + p as u64);
        let pop = base.with_aux(Matrix::new(big_n, 1, vec![1.0; big_n]).unwrap()).unwrap();
        let design = SamplingDesign::srswor(big_n, n).unwrap();
        for i in 0..100 {
            let s = design.draw(&mut stream(300 + p as u64, i));
            let ma = model_assisted_mean_for(&pop, &design, &s, Regularization::None).unwrap();
            // ratio estimator computed directly
            let w = 1.0 / design.first_order(0);
            let mut hajek = vec![0.0; pop.n_times()];
            for &k in s.indices() {
                for t in 0..pop.n_times() {
                    hajek[t] += w * pop.values()[(k, t)];
                }
            }
            let total_w = w * s.len() as f64;
            hajek.iter_mut().for_each(|v| *v /= total_w);
            worst = worst.max(max_gap(&ma.curve, &hajek));
            count += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{count} samples over 3 populations, max gap {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut worst_mean = 0.0_f64;
    let mut worst_eq = 0.0_f64;
    for i in 0..100u64 {
        let big_n = 30 + (i as usize % 5) * 20;
        let n = 6 + (i as usize % 7);
        let pop = random_population(big_n, 5, 1000 + i);
        let design = SamplingDesign::srswor(big_n, n).unwrap();
        let s = design.draw(&mut stream(2000 + i, 0));
        let data = SampleData::extract(&pop, &s).unwrap();
        let totals = pop.aux_totals();
        let ma = model_assisted_mean(&totals, &data, &design, Regularization::None).unwrap();
        let w = calibration_weights(&totals, &data, &design).unwrap();
        let mut weighted = vec![0.0; pop.n_times()];
        let mut calibrated = [0.0; 2];
        for (r, &k) in s.indices().iter().enumerate() {
            for t in 0..pop.n_times() {
                weighted[t] += w.weights[r] * pop.values()[(k, t)] / big_n as f64;
            }
            for j in 0..2 {
                calibrated[j] += w.weights[r] * pop.aux_row(k)[j];
            }
        }
        worst_mean = worst_mean.max(max_gap(&weighted, &ma.curve));
        for j in 0..2 {
            worst_eq = worst_eq.max((calibrated[j] - totals[j]).abs() / totals[j].abs());
        }
    }
    outcome(
        worst_mean <= 1e-8 && worst_eq <= 1e-8,
        format!("100 pairs, max mean gap {worst_mean:.2e}, max calibration rel. error {worst_eq:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = stream(5, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut exact_cases = 0;
    let mut exact_failures = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=6);
        let rank = rng.random_range(0..=dim);
        let shift: f64 = if rng.random_bool(0.5) { rng.random_range(0.0..2.0) } else { 0.0 };
        let mut m = Matrix::zeros(dim, dim);
        for _ in 0..rank {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            for r in 0..dim {
                for c in 0..dim {
                    m.row_mut(r)[c] += v[r] * v[c];
                }
            }
        }
        for r in 0..dim {
            m.row_mut(r)[r] += shift;
        }
        let m = SymmetricMatrix::symmetrize(m);
        let min_eig = sym_eigen(&m).min_value();
        for a in [1e-3, 1e-1, 1.0] {
            let r = regularized_inverse(&m, a).unwrap();
            worst_excess = worst_excess.max(spectral_norm(&r.inverse) - 1.0 / a);
            if min_eig >= a {
                exact_cases += 1;
                if r.regularized != m {
                    exact_failures += 1;
                }
            }
        }
    }
    outcome(
        worst_excess <= 1e-10 && exact_failures == 0 && exact_cases > 0,
        format!(
            "3000 cases, max(||G_a^-1|| - 1/a) = {worst_excess:.2e}, {exact_cases} unfloored cases, {exact_failures} altered"
        ),
    )
}

fn criterion_6(pop: &FunctionalPopulation) -> Outcome {
    let design = SamplingDesign::srswor(DESK_UNITS, 400).unwrap();
    let cfg = CampaignConfig {
        replicates: 1000,
        estimator: CampaignEstimator::ModelAssisted(Regularization::Auto),
        bands: None,
        master_seed: 6,
    };
    let start = Instant::now();
    let report = pool(1).install(|| run_campaign(pop, &design, &cfg)).unwrap();
    let elapsed = start.elapsed();
    let target = ma_covariance_approx(pop, &design).unwrap().diagonal();
    let worst = report
        .gamma_mean
        .diagonal()
        .iter()
        .zip(&target)
        .map(|(g, t)| ((g - t) / t).abs())
        .fold(0.0, f64::max);
    let corr = aux_correlation(pop);
    outcome(
        worst <= 0.10 && elapsed < Duration::from_secs(120) && (0.93..=0.97).contains(&corr),
        format!("aux corr {corr:.3}, worst relative error {worst:.4}, runtime {elapsed:.2?} at 1 worker"),
    )
}

fn criterion_7(pop: &FunctionalPopulation) -> Outcome {
    let design = SamplingDesign::srswor(DESK_UNITS, 200).unwrap();
    let cfg = CampaignConfig {
        replicates: 2000,
        estimator: CampaignEstimator::ModelAssisted(Regularization::Auto),
        bands: Some(BandSettings {
            alpha: 0.05,
            n_sims: 5000,
        }),
        master_seed: 7,
    };
    let start = Instant::now();
    let report = pool(4).install(|| run_campaign(pop, &design, &cfg)).unwrap();
    let elapsed = start.elapsed();
    let coverage = report.coverage.unwrap_or(f64::NAN);
    outcome(
        (0.93..=0.97).contains(&coverage) && elapsed < Duration::from_secs(300),
        format!(
            "coverage {coverage:.4} over {} replicates, runtime {elapsed:.2?} at 4 workers",
            report.replicates - report.degenerate_replicates - report.failed_replicates
        ),
    )
}

fn criterion_8() -> Outcome {
    let c = simulate_sup_quantile(&SymmetricMatrix::identity(1), 0.05, 200_000, 8).unwrap();
    outcome((1.945..=1.975).contains(&c), format!("c_alpha = {c:.4}"))
}

fn criterion_9(pop: &FunctionalPopulation) -> Outcome {
    let mut rows = Vec::new();
    for n in [50, 100, 300] {
        let design = SamplingDesign::srswor(DESK_UNITS, n).unwrap();
        let cfg = CampaignConfig {
            replicates: 1000,
            estimator: CampaignEstimator::ModelAssisted(Regularization::Auto),
            bands: None,
            master_seed: 9,
        };
        rows.push(run_campaign(pop, &design, &cfg).unwrap());
    }
    let rmse_dec = rows.windows(2).all(|w| w[1].rmse < w[0].rmse);
    let median_dec = rows.windows(2).all(|w| w[1].er_quantiles.median < w[0].er_quantiles.median);
    let ratio_ok = rows.iter().all(|r| r.rb_squared <= 0.1 * r.rmse);
    let identity = rows
        .iter()
        .map(|r| (r.rmse - r.rb_squared - r.vr).abs())
        .fold(0.0, f64::max);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "n={} RMSE={:.4} RB2/RMSE={:.3} median={:.4}",
                r.sample_size,
                r.rmse,
                r.rb_squared / r.rmse,
                r.er_quantiles.median
            )
        })
        .collect();
    outcome(
        rmse_dec && median_dec && ratio_ok && identity <= 1e-10,
        format!("{}; identity gap {identity:.1e}", summary.join("; ")),
    )
}

fn criterion_10(pop: &FunctionalPopulation) -> Outcome {
    let design = SamplingDesign::srswor(DESK_UNITS, 100).unwrap();
    let cfg = |estimator| CampaignConfig {
        replicates: 2000,
        estimator,
        bands: None,
        master_seed: 10,
    };
    let ma = run_campaign(pop, &design, &cfg(CampaignEstimator::ModelAssisted(Regularization::Auto))).unwrap();
    let ht = run_campaign(pop, &design, &cfg(CampaignEstimator::HorvitzThompson)).unwrap();
    let corr = aux_correlation(pop);
    let ratio = ma.integrated_mse / ht.integrated_mse;
    outcome(
        corr >= 0.9 && ratio <= 0.5,
        format!("aux corr {corr:.3}, MSE(MA)/MSE(HT) = {ratio:.4}"),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("campaign.toml");
    fs::write(
        &config,
        "[input.synthetic]\nunits = 400\ntimes = 12\nresidual_log_sd = 0.8\n\n\
         [campaign]\nreplicates = 300\nsample_sizes = [20, 60]\nbands = true\n\n\
         [band]\nn_sims = 500\n",
    )
    .unwrap();
    let run = |workers: usize| {
        let out = dir.path().join(format!("w{workers}"));
        let code = funsurvey_cli::run_from([
            "funsurvey".to_string(),
            "montecarlo".into(),
            "--config".into(),
            config.display().to_string(),
            "--seed".into(),
            "11".into(),
            "--workers".into(),
            workers.to_string(),
            "--out".into(),
            out.display().to_string(),
        ]);
        (code, read_dir_sorted(&out))
    };
    let (c1, one) = run(1);
    let (c8, eight) = run(8);
    let identical = one == eight;
    outcome(
        c1 == 0 && c8 == 0 && identical && !one.is_empty(),
        format!("{} files, identical at 1 and 8 workers: {identical}", one.len()),
    )
}

fn main() {
    let pop = desk_population();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("exhaustive unbiasedness", Box::new(criterion_1)),
        ("covariance formula oracle", Box::new(criterion_2)),
        ("Hajek reduction", Box::new(criterion_3)),
        ("calibration equivalence", Box::new(criterion_4)),
        ("regularization bound", Box::new(criterion_5)),
        ("variance-estimator consistency", Box::new(|| criterion_6(&pop))),
        ("band coverage", Box::new(|| criterion_7(&pop))),
        ("univariate quantile", Box::new(criterion_8)),
        ("campaign trend", Box::new(|| criterion_9(&pop))),
        ("variance reduction", Box::new(|| criterion_10(&pop))),
        ("determinism across workers", Box::new(criterion_11)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
