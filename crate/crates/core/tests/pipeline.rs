use funsurvey_core::design::{InclusionProbabilities, Stratum};
use funsurvey_core::montecarlo::empirical_covariance;
use funsurvey_core::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_population(n_units: usize, d: usize, p: usize, seed: u64) -> FunctionalPopulation {
    let mut rng = rng::stream(seed, 99);
    let grid = TimeGrid::uniform(d, 1.0).unwrap();
    let values: Vec<f64> = (0..n_units * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut aux = Vec::new();
    for _ in 0..n_units {
        aux.push(1.0);
        for _ in 1..p {
            aux.push(rng.random_range(0.0..4.0));
        }
    }
    FunctionalPopulation::new(
        grid,
        Matrix::new(n_units, d, values).unwrap(),
        Matrix::new(n_units, p, aux).unwrap(),
    )
    .unwrap()
}

fn noiseless(n_units: usize, d: usize, seed: u64) -> FunctionalPopulation {
    let grid = TimeGrid::uniform(d, 1.0).unwrap();
    let mut cfg = SuperpopulationConfig::load_curves(&grid, 0.0, seed);
    cfg.residual_kernel = ResidualKernel::WhiteNoise { variance: 0.0 };
    generate_population(&cfg, n_units, &grid).unwrap()
}

#[test]
fn ht_covariance_matches_naive_double_loop() {
    let pop = random_population(5, 3, 2, 1);
    let design = SamplingDesign::srswor(5, 3).unwrap();
    let got = ht_covariance_exact(&pop, &design).unwrap();
    let (pi, pi2) = (3.0 / 5.0, 3.0 * 2.0 / (5.0 * 4.0));
    for r in 0..3 {
        for t in 0..3 {
            let mut acc = 0.0;
            for k in 0..5 {
                for l in 0..5 {
                    let delta = if k == l { pi - pi * pi } else { pi2 - pi * pi };
                    acc += delta * pop.values()[(k, r)] * pop.values()[(l, t)] / (pi * pi);
                }
            }
            acc /= 25.0;
            assert!((got.matrix[(r, t)] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn population_beta_matches_cramer_solve() {
    let pop = random_population(6, 4, 2, 2);
    let beta = beta_population(&pop).unwrap();
    let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
    for k in 0..6 {
        let x = pop.aux_row(k);
        s11 += x[0] * x[0];
        s12 += x[0] * x[1];
        s22 += x[1] * x[1];
    }
    let det = s11 * s22 - s12 * s12;
    for t in 0..4 {
        let (mut r1, mut r2) = (0.0, 0.0);
        for k in 0..6 {
            let x = pop.aux_row(k);
            r1 += x[0] * pop.values()[(k, t)];
            r2 += x[1] * pop.values()[(k, t)];
        }
        let b0 = (s22 * r1 - s12 * r2) / det;
        let b1 = (s11 * r2 - s12 * r1) / det;
        assert!((beta.coefficients[(0, t)] - b0).abs() < 1e-10);
        assert!((beta.coefficients[(1, t)] - b1).abs() < 1e-10);
    }
}

#[test]
fn white_noise_variance_concentrates() {
    let grid = TimeGrid::uniform(4, 1.0).unwrap();
    let cfg = SuperpopulationConfig {
        beta_curves: Matrix::zeros(1, 4),
        residual_kernel: ResidualKernel::WhiteNoise { variance: 1.0 },
        aux_distribution: AuxDistribution::InterceptOnly,
        residual_scale: ResidualScale::Constant,
        seed: 11,
    };
    let pop = generate_population(&cfg, 10_000, &grid).unwrap();
    let mean = population_mean(&pop);
    for t in 0..4 {
        let var: f64 = (0..10_000).map(|k| (pop.values()[(k, t)] - mean[t]).powi(2)).sum::<f64>() / 9_999.0;
        assert!((0.94..=1.06).contains(&var), "variance {var} at {t}");
    }
}

#[test]
fn generation_is_reproducible() {
    let grid = TimeGrid::uniform(6, 1.0).unwrap();
    let cfg = SuperpopulationConfig::load_curves(&grid, 0.4, 5);
    assert_eq!(
        generate_population(&cfg, 50, &grid).unwrap(),
        generate_population(&cfg, 50, &grid).unwrap()
    );
}

#[test]
fn noiseless_population_is_recovered_exactly() {
    let pop = noiseless(30, 5, 3);
    let mu = population_mean(&pop);
    let design = SamplingDesign::srswor(30, 6).unwrap();
    for i in 0..20 {
        let s = design.draw(&mut rng::stream(4, i));
        let est = model_assisted_mean_for(&pop, &design, &s, Regularization::None).unwrap();
        for (a, b) in est.curve.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-8);
        }
        let data = SampleData::extract(&pop, &s).unwrap();
        let cov = ma_covariance_estimate(&data, &design, Regularization::None).unwrap();
        assert!(cov.matrix.as_matrix().max_abs() < 1e-8);
    }
    assert!(ma_covariance_approx(&pop, &design).unwrap().matrix.as_matrix().max_abs() < 1e-8);
    let beta = beta_population(&pop).unwrap();
    let grid = TimeGrid::uniform(5, 1.0).unwrap();
    let truth = SuperpopulationConfig::load_curves(&grid, 0.0, 3).beta_curves;
    assert!(beta.coefficients.sub(&truth).unwrap().max_abs() < 1e-8);
}

#[test]
fn ma_approx_equals_ht_covariance_of_residual_population() {
    let pop = random_population(7, 3, 2, 6);
    let design = SamplingDesign::srswor(7, 3).unwrap();
    let beta = beta_population(&pop).unwrap();
    let mut resid = pop.values().clone();
    for k in 0..7 {
        let fit = beta.predict(pop.aux_row(k));
        for (e, f) in resid.row_mut(k).iter_mut().zip(fit) {
            *e -= f;
        }
    }
    let a = ma_covariance_approx(&pop, &design).unwrap();
    let b = ht_covariance_exact(&pop.with_values(resid).unwrap(), &design).unwrap();
    assert!(a.matrix.as_matrix().sub(b.matrix.as_matrix()).unwrap().max_abs() < 1e-12);
}

#[test]
fn model_assisted_bias_is_the_totals_gap_term() {
    // mu_MA - mu_diff = (1/N) (t_x - t_x_HT)' (beta_hat - beta_tilde) sample by sample
    let pop = random_population(4, 3, 2, 8);
    let design = SamplingDesign::srswor(4, 2).unwrap();
    let beta_t = beta_population(&pop).unwrap();
    let totals = pop.aux_totals();
    let mu = population_mean(&pop);
    let (mut e_ma, mut e_diff) = (vec![0.0; 3], vec![0.0; 3]);
    for (s, p) in design.enumerate_samples(100).unwrap() {
        let data = SampleData::extract(&pop, &s).unwrap();
        let Ok(beta_h) = beta_sampled(&data, &design, Regularization::None) else {
            continue;
        };
        let ma = model_assisted_mean(&totals, &data, &design, Regularization::None).unwrap().curve;
        let diff = difference_mean(&pop, &design, &s).unwrap().curve;
        let mut gap = totals.clone();
        for &k in s.indices() {
            for (g, x) in gap.iter_mut().zip(pop.aux_row(k)) {
                *g -= x / design.first_order(k);
            }
        }
        for t in 0..3 {
            let bias: f64 = (0..2)
                .map(|j| gap[j] * (beta_h.coefficients[(j, t)] - beta_t.coefficients[(j, t)]))
                .sum::<f64>()
                / 4.0;
            assert!((ma[t] - diff[t] - bias).abs() < 1e-10);
            e_ma[t] += p * ma[t];
            e_diff[t] += p * diff[t];
        }
    }
    let scale = mu.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    assert!(e_diff.iter().zip(&mu).all(|(a, b)| (a - b).abs() < 1e-12 * scale));
    assert!(e_ma.iter().all(|v| v.is_finite()));
}

#[test]
fn calibration_matches_model_assisted_on_random_instance() {
    let pop = random_population(20, 5, 2, 9);
    let design = SamplingDesign::srswor(20, 6).unwrap();
    let s = design.draw(&mut rng::stream(9, 0));
    let data = SampleData::extract(&pop, &s).unwrap();
    let totals = pop.aux_totals();
    let w = calibration_weights(&totals, &data, &design).unwrap();
    let ma = model_assisted_mean(&totals, &data, &design, Regularization::None).unwrap();
    for (a, b) in w.weighted_mean(&data, 20).iter().zip(&ma.curve) {
        assert!((a - b).abs() < 1e-8);
    }
    for (a, b) in w.aux_totals(&data).iter().zip(&totals) {
        assert!((a - b).abs() <= 1e-8 * b.abs());
    }
}

#[test]
fn stratified_enumeration_is_product_design() {
    let design = SamplingDesign::stratified(
        4,
        vec![
            Stratum {
                units: vec![0, 1],
                sample_size: 1,
            },
            Stratum {
                units: vec![2, 3],
                sample_size: 1,
            },
        ],
    )
    .unwrap();
    let samples = design.enumerate_samples(100).unwrap();
    assert_eq!(samples.len(), 4);
    assert!(samples.iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));
    assert_eq!(design.first_order(0), 0.5);
    assert_eq!(design.second_order(0, 2), 0.25);
    assert_eq!(design.second_order(0, 1), 0.0);
}

#[test]
fn empirical_covariance_of_standard_normal_rows() {
    let mut rng = rng::stream(12, 0);
    let data: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
    let c = empirical_covariance(&Matrix::new(1000, 3, data).unwrap()).unwrap();
    for r in 0..3 {
        for t in 0..3 {
            let v = c.matrix[(r, t)];
            if r == t {
                assert!((0.9..=1.1).contains(&v));
            } else {
                assert!(v.abs() <= 0.1);
            }
        }
    }
}

#[test]
fn census_campaign_is_degenerate() {
    let pop = random_population(12, 3, 2, 13);
    let design = SamplingDesign::srswor(12, 12).unwrap();
    let cfg = CampaignConfig {
        replicates: 20,
        estimator: CampaignEstimator::ModelAssisted(Regularization::None),
        bands: Some(BandSettings { alpha: 0.05, n_sims: 200 }),
        master_seed: 1,
    };
    let report = run_campaign(&pop, &design, &cfg).unwrap();
    assert_eq!(report.rmse, 0.0);
    assert_eq!(report.degenerate_replicates, 20);
    assert_eq!(report.coverage, None);
    assert!(report.integrated_mse < 1e-24);
}

#[test]
fn campaign_independent_of_thread_count() {
    let grid = TimeGrid::uniform(8, 1.0).unwrap();
    let pop = generate_population(&SuperpopulationConfig::load_curves(&grid, 0.3, 2), 300, &grid).unwrap();
    let design = SamplingDesign::srswor(300, 30).unwrap();
    let cfg = CampaignConfig {
        replicates: 300,
        estimator: CampaignEstimator::ModelAssisted(Regularization::Auto),
        bands: Some(BandSettings { alpha: 0.1, n_sims: 200 }),
        master_seed: 77,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_campaign(&pop, &design, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(5));
    assert_eq!(a, b);
    assert!((a.rmse - a.rb_squared - a.vr).abs() < 1e-10);
    assert!(a.coverage.is_some());
}
