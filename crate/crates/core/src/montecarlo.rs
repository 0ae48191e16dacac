//! Replication harness: repeated sampling from a fixed population to measure
//! how well the covariance estimator tracks the true sampling variability.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bands::{build_band, contains, degenerate_point};
use crate::covariance::{ht_covariance_estimator, CovarianceEstimate, CovarianceKind};
use crate::curve::{population_mean, FunctionalPopulation};
use crate::design::{InclusionProbabilities, SamplingDesign};
use crate::estimators::{beta_sampled, corrected_mean, ht_mean_of, residuals, MeanEstimate, EstimatorKind, Regularization, SampleData};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricMatrix};
use crate::rng;

/// Replicates processed per parallel batch before the ordered reduction.
const BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CampaignEstimator {
    HorvitzThompson,
    ModelAssisted(Regularization),
}

impl CampaignEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            CampaignEstimator::HorvitzThompson => EstimatorKind::HorvitzThompson.name(),
            CampaignEstimator::ModelAssisted(_) => EstimatorKind::ModelAssisted.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSettings {
    pub alpha: f64,
    pub n_sims: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig {
    pub replicates: usize,
    pub estimator: CampaignEstimator,
    /// Build a band per replicate and record simultaneous coverage.
    pub bands: Option<BandSettings>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErQuantiles {
    pub q5: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub estimator: &'static str,
    pub sample_size: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Covariance of the replicated mean estimates (1/I normalization).
    pub gamma_emp: CovarianceEstimate,
    /// Average of the per-replicate covariance estimates.
    pub gamma_mean: CovarianceEstimate,
    /// Relative error of each non-degenerate replicate, in replicate order.
    pub er_values: Vec<f64>,
    pub rmse: f64,
    pub rb_squared: f64,
    pub vr: f64,
    pub er_quantiles: ErQuantiles,
    /// Fraction of non-degenerate replicates whose band covered the true mean.
    pub coverage: Option<f64>,
    /// Mean over replicates of `(1/D) sum_i (mu_hat(t_i) - mu(t_i))^2`.
    pub integrated_mse: f64,
    /// Replicates whose estimated variance vanished somewhere on the grid.
    pub degenerate_replicates: usize,
    /// Replicates whose estimator failed numerically (e.g. singular moment matrix).
    pub failed_replicates: usize,
}

impl MonteCarloReport {
    pub const CSV_HEADER: &'static str =
        "estimator,n,replicates,rmse,rb2,vr,q5,q25,median,q75,q95,coverage,integrated_mse,degenerate,failed,seed";

    pub fn csv_row(&self) -> String {
        let q = &self.er_quantiles;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.estimator,
            self.sample_size,
            self.replicates,
            self.rmse,
            self.rb_squared,
            self.vr,
            q.q5,
            q.q25,
            q.median,
            q.q75,
            q.q95,
            self.coverage.map_or(String::new(), |c| c.to_string()),
            self.integrated_mse,
            self.degenerate_replicates,
            self.failed_replicates,
            self.seed
        )
    }

    /// Human-readable table, one row per report.
    pub fn table(reports: &[MonteCarloReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9} {:>6}",
            "n", "RMSE", "RB^2", "q5", "q25", "Median", "q75", "q95", "coverage", "degen"
        );
        for r in reports {
            let q = &r.er_quantiles;
            let _ = writeln!(
                out,
                "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9} {:>6}",
                r.sample_size,
                r.rmse,
                r.rb_squared,
                q.q5,
                q.q25,
                q.median,
                q.q75,
                q.q95,
                r.coverage.map_or("-".to_string(), |c| format!("{c:.4}")),
                r.degenerate_replicates
            );
        }
        out
    }
}

/// `(1/I) sum_i (mu_i - mu_bar)(mu_i - mu_bar)'` over replicate rows.
pub fn empirical_covariance(estimates: &Matrix) -> Result<CovarianceEstimate> {
    let reps = estimates.rows();
    if reps < 2 {
        return Err(Error::Validation(format!("empirical covariance needs at least 2 replicates, got {reps}")));
    }
    let d = estimates.cols();
    let mut mean = vec![0.0; d];
    for i in 0..reps {
        for (m, v) in mean.iter_mut().zip(estimates.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= reps as f64);
    let mut out = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..reps {
        for ((c, v), m) in centered.iter_mut().zip(estimates.row(i)).zip(&mean) {
            *c = v - m;
        }
        for r in 0..d {
            let cr = centered[r];
            for (o, ct) in out.row_mut(r).iter_mut().zip(&centered) {
                *o += cr * ct;
            }
        }
    }
    Ok(CovarianceEstimate {
        matrix: SymmetricMatrix::symmetrize(out.scaled(1.0 / reps as f64)),
        kind: CovarianceKind::Empirical,
    })
}

/// Mean over the grid of squared relative deviations of the variance functions.
pub fn relative_error(estimated: &CovarianceEstimate, reference: &CovarianceEstimate) -> Result<f64> {
    relative_error_diag(&estimated.diagonal(), &reference.diagonal())
}

fn relative_error_diag(estimated: &[f64], reference: &[f64]) -> Result<f64> {
    if estimated.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "relative error grids",
            expected: reference.len(),
            actual: estimated.len(),
        });
    }
    let mut acc = 0.0;
    for (i, (e, r)) in estimated.iter().zip(reference).enumerate() {
        if !(*r > 0.0) {
            return Err(Error::DegenerateVariance { index: i, value: *r });
        }
        acc += (e - r).powi(2) / (r * r);
    }
    Ok(acc / reference.len() as f64)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Replicate {
    curve: Vec<f64>,
    cov: SymmetricMatrix,
    degenerate: bool,
    covered: Option<bool>,
}

fn run_replicate(
    index: usize,
    pop: &FunctionalPopulation,
    aux_totals: &[f64],
    truth: &[f64],
    design: &SamplingDesign,
    cfg: &CampaignConfig,
) -> Result<Option<Replicate>> {
    let sample = design.draw(&mut rng::stream(cfg.master_seed, index as u64));
    let data = SampleData::extract(pop, &sample)?;
    let (curve, cov) = match cfg.estimator {
        CampaignEstimator::HorvitzThompson => {
            let cov = ht_covariance_estimator(data.indices(), data.values(), design)?;
            (ht_mean_of(&data, design), cov)
        }
        CampaignEstimator::ModelAssisted(reg) => {
            let beta = match beta_sampled(&data, design, reg) {
                Ok(b) => b,
                Err(e) if e.is_numerical() => return Ok(None),
                Err(e) => return Err(e),
            };
            let curve = corrected_mean(aux_totals, &data, design, &beta);
            let cov = ht_covariance_estimator(data.indices(), &residuals(&data, &beta), design)?;
            (curve, cov)
        }
    };
    let degenerate = degenerate_point(&cov.diagonal()).is_some();
    let covered = match (&cfg.bands, degenerate) {
        (Some(b), false) => {
            let estimate = MeanEstimate {
                curve: curve.clone(),
                kind: EstimatorKind::ModelAssisted,
                sample_indices: Vec::new(),
                a_used: None,
            };
            let cov = CovarianceEstimate {
                matrix: cov.clone(),
                kind: CovarianceKind::MaEstimated,
            };
            let seed = rng::derive_seed(cfg.master_seed, index as u64);
            match build_band(&estimate, &cov, design.sample_size(), b.alpha, b.n_sims, seed) {
                Ok(band) => Some(contains(&band, truth)?),
                Err(e) if e.is_numerical() => None,
                Err(e) => return Err(e),
            }
        }
        _ => None,
    };
    Ok(Some(Replicate {
        curve,
        cov,
        degenerate,
        covered,
    }))
}

/// Draws `cfg.replicates` samples and summarizes estimator and variance-estimator accuracy.
///
/// Replicate `i` uses random stream `i` of the master seed, and results are
/// reduced in replicate order, so the report is identical for any thread count.
pub fn run_campaign(pop: &FunctionalPopulation, design: &SamplingDesign, cfg: &CampaignConfig) -> Result<MonteCarloReport> {
    if cfg.replicates < 2 {
        return Err(Error::Validation(format!("a campaign needs at least 2 replicates, got {}", cfg.replicates)));
    }
    if pop.n_units() != design.population_size() {
        return Err(Error::DimensionMismatch {
            context: "population size vs design",
            expected: design.population_size(),
            actual: pop.n_units(),
        });
    }
    let d = pop.n_times();
    let truth = population_mean(pop);
    let aux_totals = pop.aux_totals();

    let mut curves: Vec<f64> = Vec::with_capacity(cfg.replicates * d);
    let mut diags: Vec<Vec<f64>> = Vec::new();
    let mut cov_sum = Matrix::zeros(d, d);
    let mut n_ok = 0usize;
    let mut failed = 0usize;
    let mut degenerate = 0usize;
    let mut covered = 0usize;
    let mut band_trials = 0usize;
    let mut sq_err = 0.0;

    for start in (0..cfg.replicates).step_by(BATCH) {
        let end = (start + BATCH).min(cfg.replicates);
        let batch: Vec<Result<Option<Replicate>>> = (start..end)
            .into_par_iter()
            .map(|i| {
                run_replicate(i, pop, &aux_totals, &truth, design, cfg).map_err(|e| Error::Replicate {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect();
        for outcome in batch {
            let Some(rep) = outcome? else {
                failed += 1;
                continue;
            };
            n_ok += 1;
            sq_err += rep.curve.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d as f64;
            curves.extend_from_slice(&rep.curve);
            if rep.degenerate {
                degenerate += 1;
                continue;
            }
            if let Some(c) = rep.covered {
                band_trials += 1;
                covered += usize::from(c);
            }
            for r in 0..d {
                for (o, v) in cov_sum.row_mut(r).iter_mut().zip(rep.cov.as_matrix().row(r)) {
                    *o += v;
                }
            }
            diags.push(rep.cov.diagonal());
        }
    }

    let estimates = Matrix::new(n_ok, d, curves)?;
    let gamma_emp = if n_ok >= 2 {
        empirical_covariance(&estimates)?
    } else {
        CovarianceEstimate {
            matrix: SymmetricMatrix::zeros(d),
            kind: CovarianceKind::Empirical,
        }
    };
    let included = diags.len();
    let gamma_mean = CovarianceEstimate {
        matrix: SymmetricMatrix::symmetrize(cov_sum.scaled(if included > 0 { 1.0 / included as f64 } else { 0.0 })),
        kind: CovarianceKind::MeanEstimated,
    };

    let emp_diag = gamma_emp.diagonal();
    let mean_diag = gamma_mean.diagonal();
    let (er_values, rmse, rb_squared, vr) = if included == 0 {
        (Vec::new(), 0.0, 0.0, 0.0)
    } else {
        let er: Vec<f64> = diags
            .iter()
            .map(|g| relative_error_diag(g, &emp_diag))
            .collect::<Result<_>>()?;
        let rmse = er.iter().sum::<f64>() / included as f64;
        let rb_squared = relative_error_diag(&mean_diag, &emp_diag)?;
        let mut vr = 0.0;
        for (t, (&e, &m)) in emp_diag.iter().zip(&mean_diag).enumerate() {
            let spread: f64 = diags.iter().map(|g| (g[t] - m).powi(2)).sum::<f64>() / included as f64;
            vr += spread / (e * e);
        }
        (er, rmse, rb_squared, vr / d as f64)
    };

    let mut sorted = er_values.clone();
    sorted.sort_by(f64::total_cmp);
    let er_quantiles = ErQuantiles {
        q5: quantile_sorted(&sorted, 0.05),
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        q95: quantile_sorted(&sorted, 0.95),
    };

    Ok(MonteCarloReport {
        estimator: cfg.estimator.name(),
        sample_size: design.sample_size(),
        replicates: cfg.replicates,
        seed: cfg.master_seed,
        gamma_emp,
        gamma_mean,
        er_values,
        rmse,
        rb_squared,
        vr,
        er_quantiles,
        coverage: (band_trials > 0).then(|| covered as f64 / band_trials as f64),
        integrated_mse: if n_ok > 0 { sq_err / n_ok as f64 } else { 0.0 },
        degenerate_replicates: degenerate,
        failed_replicates: failed,
    })
}
