//! Simultaneous confidence bands from simulated Gaussian processes.
//!
//! The critical value is the `1 - alpha` quantile of
//! `max_i |Z(t_i)| / sigma(t_i)` where `Z` is a centered Gaussian vector with
//! the (sample-size scaled) estimated covariance.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::covariance::CovarianceEstimate;
use crate::curve::TimeGrid;
use crate::error::{Error, Result};
use crate::estimators::MeanEstimate;
use crate::linalg::{cholesky_psd, psd_project, SymmetricMatrix};
use crate::rng;

pub const DEFAULT_N_SIMS: usize = 10_000;
pub const MIN_N_SIMS: usize = 100;

/// Simulations per random stream. Block `b` always reads stream `b`, so the
/// sup sample does not depend on how blocks are spread over threads.
const SIM_BLOCK: usize = 1024;

/// Diagonal entries at or below this fraction of the largest one count as zero.
const DEGENERATE_REL: f64 = 1e-12;

/// Sorted simulated values of the normalized supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct SupSample {
    values: Vec<f64>,
    pub seed: u64,
}

impl SupSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Order statistic at rank `ceil((1 - alpha) * n_sims)`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let n = self.values.len();
        let rank = (((1.0 - alpha) * n as f64) - 1e-9).ceil() as usize;
        Ok(self.values[rank.clamp(1, n) - 1])
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "miscoverage level must lie in (0, 1)",
        })
    }
}

fn check_n_sims(n_sims: usize) -> Result<()> {
    if n_sims >= MIN_N_SIMS {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "n_sims",
            value: n_sims as f64,
            reason: "at least 100 simulations are required",
        })
    }
}

/// First grid point whose variance is zero, negative or negligible.
pub(crate) fn degenerate_point(diag: &[f64]) -> Option<(usize, f64)> {
    let max = diag.iter().fold(0.0_f64, |m, v| m.max(*v));
    diag.iter()
        .enumerate()
        .find(|(_, &v)| !(v > DEGENERATE_REL * max) || v <= 0.0)
        .map(|(i, &v)| (i, v))
}

/// Simulates the normalized supremum `n_sims` times.
///
/// `cov` is the covariance of the scaled process (already multiplied by `n`).
pub fn simulate_sup_sample(cov: &SymmetricMatrix, n_sims: usize, seed: u64) -> Result<SupSample> {
    check_n_sims(n_sims)?;
    let raw_diag = cov.diagonal();
    if let Some((index, value)) = degenerate_point(&raw_diag) {
        return Err(Error::DegenerateVariance { index, value });
    }
    let projected = psd_project(cov);
    if let Some((index, value)) = degenerate_point(&projected.diagonal()) {
        return Err(Error::DegenerateVariance { index, value });
    }
    let factor = cholesky_psd(&projected)?;
    let sigma: Vec<f64> = raw_diag.iter().map(|v| v.sqrt()).collect();
    let d = sigma.len();

    let n_blocks = n_sims.div_ceil(SIM_BLOCK);
    let blocks: Vec<Vec<f64>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let count = SIM_BLOCK.min(n_sims - b * SIM_BLOCK);
            let mut stream = rng::stream(seed, b as u64);
            let mut g = vec![0.0; d];
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                for gi in g.iter_mut() {
                    *gi = stream.sample(StandardNormal);
                }
                let mut sup = 0.0_f64;
                for i in 0..d {
                    let row = &factor.row(i)[..=i];
                    let z: f64 = row.iter().zip(&g).map(|(l, gj)| l * gj).sum();
                    sup = sup.max(z.abs() / sigma[i]);
                }
                out.push(sup);
            }
            out
        })
        .collect();
    let mut values: Vec<f64> = blocks.into_iter().flatten().collect();
    values.sort_by(f64::total_cmp);
    Ok(SupSample { values, seed })
}

/// Critical value `c_alpha` for a simultaneous band.
pub fn simulate_sup_quantile(cov: &SymmetricMatrix, alpha: f64, n_sims: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    simulate_sup_sample(cov, n_sims, seed)?.quantile(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    pub center: Vec<f64>,
    /// `c_alpha * sigma_hat(t_i) / sqrt(n)`.
    pub half_width: Vec<f64>,
    /// `sqrt(n * gamma_hat(t_i, t_i))`.
    pub sigma_hat: Vec<f64>,
    pub c_alpha: f64,
    pub alpha: f64,
    pub n_sims: usize,
    pub seed: u64,
    pub sample_size: usize,
}

impl ConfidenceBand {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }

    /// Columns `t, center, lower, upper, sigma_hat`.
    pub fn to_csv<W: Write>(&self, grid: &TimeGrid, writer: W) -> Result<()> {
        if grid.len() != self.center.len() {
            return Err(Error::DimensionMismatch {
                context: "band export grid",
                expected: self.center.len(),
                actual: grid.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "center", "lower", "upper", "sigma_hat"])?;
        let (lower, upper) = (self.lower(), self.upper());
        for i in 0..grid.len() {
            w.write_record([
                grid.points()[i].to_string(),
                self.center[i].to_string(),
                lower[i].to_string(),
                upper[i].to_string(),
                self.sigma_hat[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar metadata as `key=value` lines.
    pub fn metadata(&self) -> String {
        format!(
            "c_alpha={}\nalpha={}\nn_sims={}\nsim_seed={}\nsample_size={}\n",
            self.c_alpha, self.alpha, self.n_sims, self.seed, self.sample_size
        )
    }
}

/// Band `estimate +/- c_alpha * sigma_hat / sqrt(n)` from an unscaled covariance estimate.
pub fn build_band(
    estimate: &MeanEstimate,
    cov: &CovarianceEstimate,
    sample_size: usize,
    alpha: f64,
    n_sims: usize,
    seed: u64,
) -> Result<ConfidenceBand> {
    check_alpha(alpha)?;
    if cov.dim() != estimate.curve.len() {
        return Err(Error::DimensionMismatch {
            context: "covariance vs estimate length",
            expected: estimate.curve.len(),
            actual: cov.dim(),
        });
    }
    if sample_size == 0 {
        return Err(Error::Validation("sample size must be positive".into()));
    }
    let n = sample_size as f64;
    let scaled = cov.matrix.scaled(n);
    let c_alpha = simulate_sup_quantile(&scaled, alpha, n_sims, seed)?;
    let sigma_hat: Vec<f64> = scaled.diagonal().iter().map(|v| v.sqrt()).collect();
    let half_width = sigma_hat.iter().map(|s| c_alpha * s / n.sqrt()).collect();
    Ok(ConfidenceBand {
        center: estimate.curve.clone(),
        half_width,
        sigma_hat,
        c_alpha,
        alpha,
        n_sims,
        seed,
        sample_size,
    })
}

/// True when `truth` lies inside the closed band at every grid point.
pub fn contains(band: &ConfidenceBand, truth: &[f64]) -> Result<bool> {
    if truth.len() != band.center.len() {
        return Err(Error::DimensionMismatch {
            context: "band containment",
            expected: band.center.len(),
            actual: truth.len(),
        });
    }
    Ok(truth
        .iter()
        .zip(&band.center)
        .zip(&band.half_width)
        .all(|((t, c), h)| (t - c).abs() <= *h))
}
