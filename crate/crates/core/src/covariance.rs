//! Design covariance functions of the mean estimators on the time grid.
//!
//! All matrices are stored unscaled, i.e. as covariances of the mean
//! estimator itself. Scaling by the sample size happens in [`crate::bands`].

use std::io::Write;

use crate::curve::{FunctionalPopulation, TimeGrid};
use crate::design::InclusionProbabilities;
use crate::estimators::{beta_population, beta_sampled, residuals, Regularization, SampleData};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    /// Exact Horvitz-Thompson covariance from the full population.
    HtExact,
    /// HT covariance of the population regression residuals.
    MaApprox,
    /// Sample estimator built from estimated residuals.
    MaEstimated,
    /// Sample HT covariance estimator applied to the raw curves.
    HtEstimated,
    /// Monte Carlo covariance of replicated estimates.
    Empirical,
    /// Average of per-replicate estimates.
    MeanEstimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: SymmetricMatrix,
    pub kind: CovarianceKind,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Variance function on the grid.
    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal()
    }

    /// CSV with a header row of grid times and one leading time column.
    pub fn to_csv<W: Write>(&self, grid: &TimeGrid, writer: W) -> Result<()> {
        if grid.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "covariance export grid",
                expected: self.dim(),
                actual: grid.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(grid.points().iter().map(|t| t.to_string()))
            .collect();
        w.write_record(&header)?;
        for (i, t) in grid.points().iter().enumerate() {
            let row: Vec<String> = std::iter::once(t.to_string())
                .chain(self.matrix.as_matrix().row(i).iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(1/N^2) sum_{a,b} c(k_a, k_b) (y_a / pi_{k_a}) (y_b / pi_{k_b})'` over the listed units.
///
/// Evaluated as `Z' (C Z)` with `Z` the probability-scaled rows, so each
/// entry is accumulated in a fixed order.
fn weighted_cross_product<D, F>(units: &[usize], rows: &Matrix, design: &D, coef: F) -> SymmetricMatrix
where
    D: InclusionProbabilities + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    let d = rows.cols();
    let mut z = rows.clone();
    for (a, &k) in units.iter().enumerate() {
        let inv = 1.0 / design.first_order(k);
        z.row_mut(a).iter_mut().for_each(|v| *v *= inv);
    }
    let big_n = design.population_size() as f64;
    let mut out = Matrix::zeros(d, d);
    let mut w = vec![0.0; d];
    for (a, &k) in units.iter().enumerate() {
        w.iter_mut().for_each(|v| *v = 0.0);
        for (b, &l) in units.iter().enumerate() {
            let c = coef(k, l);
            if c == 0.0 {
                continue;
            }
            for (wv, zv) in w.iter_mut().zip(z.row(b)) {
                *wv += c * zv;
            }
        }
        let za = z.row(a);
        for r in 0..d {
            let zr = za[r];
            if zr == 0.0 {
                continue;
            }
            for (o, wv) in out.row_mut(r).iter_mut().zip(&w) {
                *o += zr * wv;
            }
        }
    }
    SymmetricMatrix::symmetrize(out.scaled(1.0 / (big_n * big_n)))
}

fn check_population<D: InclusionProbabilities + ?Sized>(pop: &FunctionalPopulation, design: &D) -> Result<()> {
    if pop.n_units() != design.population_size() {
        return Err(Error::DimensionMismatch {
            context: "population size vs design",
            expected: design.population_size(),
            actual: pop.n_units(),
        });
    }
    Ok(())
}

/// Exact design covariance of the HT mean estimator, `(1/N^2) sum_{k,l in U} Delta_kl Y_k Y_l' / (pi_k pi_l)`.
pub fn ht_covariance_exact<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
) -> Result<CovarianceEstimate> {
    check_population(pop, design)?;
    let units: Vec<usize> = (0..pop.n_units()).collect();
    Ok(CovarianceEstimate {
        matrix: weighted_cross_product(&units, pop.values(), design, |k, l| design.delta(k, l)),
        kind: CovarianceKind::HtExact,
    })
}

/// Approximate covariance of the model-assisted estimator: the exact HT
/// covariance of the population least squares residuals.
pub fn ma_covariance_approx<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
) -> Result<CovarianceEstimate> {
    check_population(pop, design)?;
    let beta = beta_population(pop)?;
    let mut resid = pop.values().clone();
    for k in 0..pop.n_units() {
        let fitted = beta.predict(pop.aux_row(k));
        for (e, f) in resid.row_mut(k).iter_mut().zip(fitted) {
            *e -= f;
        }
    }
    let units: Vec<usize> = (0..pop.n_units()).collect();
    Ok(CovarianceEstimate {
        matrix: weighted_cross_product(&units, &resid, design, |k, l| design.delta(k, l)),
        kind: CovarianceKind::MaApprox,
    })
}

/// HT covariance estimator `(1/N^2) sum_{k,l in s} (Delta_kl / pi_kl) e_k e_l' / (pi_k pi_l)`
/// for arbitrary per-unit curves `e_k` (one row per sampled unit).
pub fn ht_covariance_estimator<D: InclusionProbabilities + ?Sized>(
    units: &[usize],
    rows: &Matrix,
    design: &D,
) -> Result<SymmetricMatrix> {
    if rows.rows() != units.len() {
        return Err(Error::DimensionMismatch {
            context: "residual rows vs sampled units",
            expected: units.len(),
            actual: rows.rows(),
        });
    }
    for (a, &k) in units.iter().enumerate() {
        for &l in &units[a + 1..] {
            let pkl = design.second_order(k, l);
            if !(pkl > 0.0) {
                return Err(Error::Validation(format!(
                    "second-order inclusion probability of units {k} and {l} is {pkl}"
                )));
            }
        }
    }
    Ok(weighted_cross_product(units, rows, design, |k, l| {
        design.delta(k, l) / design.second_order(k, l)
    }))
}

/// Sample estimator of the model-assisted covariance from the estimated residuals.
pub fn ma_covariance_estimate<D: InclusionProbabilities + ?Sized>(
    data: &SampleData,
    design: &D,
    reg: Regularization,
) -> Result<CovarianceEstimate> {
    let beta = beta_sampled(data, design, reg)?;
    let resid = residuals(data, &beta);
    Ok(CovarianceEstimate {
        matrix: ht_covariance_estimator(data.indices(), &resid, design)?,
        kind: CovarianceKind::MaEstimated,
    })
}

/// Sample HT covariance estimator of the plain HT mean.
pub fn ht_covariance_estimate<D: InclusionProbabilities + ?Sized>(
    data: &SampleData,
    design: &D,
) -> Result<CovarianceEstimate> {
    data.check_against(design)?;
    Ok(CovarianceEstimate {
        matrix: ht_covariance_estimator(data.indices(), data.values(), design)?,
        kind: CovarianceKind::HtEstimated,
    })
}
