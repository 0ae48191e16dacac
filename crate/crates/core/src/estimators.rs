//! Mean-curve estimators: Horvitz-Thompson, Hájek, the generalized difference
//! estimator, the (regularized) model-assisted estimator and calibration weights.

use crate::curve::{interpolate, FunctionalPopulation, TimeGrid};
use crate::design::{InclusionProbabilities, Sample};
use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, lu_solve, regularized_inverse, Matrix, SymmetricMatrix};

/// Relative singularity threshold: a moment matrix whose smallest eigenvalue is
/// at most this times `trace / p` is refused when no floor is in effect.
pub const SINGULAR_REL_THRESHOLD: f64 = 1e-12;

/// Relative floor used by [`Regularization::Auto`].
pub const AUTO_FLOOR_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    HorvitzThompson,
    Hajek,
    ModelAssisted,
    Difference,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::HorvitzThompson => "horvitz_thompson",
            EstimatorKind::Hajek => "hajek",
            EstimatorKind::ModelAssisted => "model_assisted",
            EstimatorKind::Difference => "difference",
        }
    }
}

/// Eigenvalue floor applied to the sampled moment matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Plain inverse; singular matrices are an error.
    None,
    /// Floor eigenvalues at `a`. `Floor(0.0)` behaves like `None`.
    Floor(f64),
    /// Floor at `1e-8 * trace / p`.
    Auto,
}

impl Regularization {
    fn floor_for(&self, ghat: &SymmetricMatrix) -> Result<f64> {
        match *self {
            Regularization::None => Ok(0.0),
            Regularization::Floor(a) if a >= 0.0 && a.is_finite() => Ok(a),
            Regularization::Floor(a) => Err(Error::InvalidParameter {
                name: "a",
                value: a,
                reason: "regularization floor must be non-negative",
            }),
            Regularization::Auto => Ok(AUTO_FLOOR_REL * ghat.trace() / ghat.dim() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub curve: Vec<f64>,
    pub kind: EstimatorKind,
    pub sample_indices: Vec<usize>,
    /// Floor actually used by the model-assisted estimator.
    pub a_used: Option<f64>,
}

/// What the sampler sees: the auxiliary vectors and curves of sampled units only.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    indices: Vec<usize>,
    aux: Matrix,
    values: Matrix,
}

impl SampleData {
    pub fn new(indices: Vec<usize>, aux: Matrix, values: Matrix) -> Result<Self> {
        if aux.rows() != indices.len() || values.rows() != indices.len() {
            return Err(Error::DimensionMismatch {
                context: "sample data rows vs indices",
                expected: indices.len(),
                actual: aux.rows().min(values.rows()),
            });
        }
        Ok(Self { indices, aux, values })
    }

    /// Pulls the sampled rows out of a fully known population.
    pub fn extract(pop: &FunctionalPopulation, sample: &Sample) -> Result<Self> {
        if sample.population_size() != pop.n_units() {
            return Err(Error::DimensionMismatch {
                context: "sample population size vs population",
                expected: pop.n_units(),
                actual: sample.population_size(),
            });
        }
        let idx = sample.indices();
        let mut aux = Vec::with_capacity(idx.len() * pop.n_aux());
        let mut values = Vec::with_capacity(idx.len() * pop.n_times());
        for &k in idx {
            aux.extend_from_slice(pop.aux_row(k));
            values.extend_from_slice(pop.curve(k));
        }
        Ok(Self {
            indices: idx.to_vec(),
            aux: Matrix::new(idx.len(), pop.n_aux(), aux)?,
            values: Matrix::new(idx.len(), pop.n_times(), values)?,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn aux(&self) -> &Matrix {
        &self.aux
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.values.cols()
    }

    pub fn n_aux(&self) -> usize {
        self.aux.cols()
    }

    pub(crate) fn check_against<D: InclusionProbabilities + ?Sized>(&self, design: &D) -> Result<()> {
        if self.indices.len() != design.sample_size() {
            return Err(Error::DimensionMismatch {
                context: "sample size vs design",
                expected: design.sample_size(),
                actual: self.indices.len(),
            });
        }
        if let Some(&k) = self.indices.iter().find(|&&k| k >= design.population_size()) {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: design.population_size(),
            });
        }
        Ok(())
    }
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

fn check_inputs<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
    sample: &Sample,
) -> Result<SampleData> {
    check_population(pop, design)?;
    let data = SampleData::extract(pop, sample)?;
    data.check_against(design)?;
    Ok(data)
}

/// Horvitz-Thompson mean curve `(1/N) sum_s Y_k / pi_k`.
pub fn ht_mean<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
    sample: &Sample,
) -> Result<MeanEstimate> {
    let data = check_inputs(pop, design, sample)?;
    Ok(MeanEstimate {
        curve: ht_mean_of(&data, design),
        kind: EstimatorKind::HorvitzThompson,
        sample_indices: data.indices,
        a_used: None,
    })
}

pub(crate) fn ht_mean_of<D: InclusionProbabilities + ?Sized>(data: &SampleData, design: &D) -> Vec<f64> {
    let big_n = design.population_size() as f64;
    let mut curve = vec![0.0; data.n_times()];
    for (r, &k) in data.indices.iter().enumerate() {
        let w = 1.0 / design.first_order(k);
        for (c, y) in curve.iter_mut().zip(data.values.row(r)) {
            *c += w * y;
        }
    }
    curve.iter_mut().for_each(|c| *c /= big_n);
    curve
}

/// Hájek mean curve: HT total divided by the HT estimate of `N`.
pub fn hajek_mean<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
    sample: &Sample,
) -> Result<MeanEstimate> {
    let data = check_inputs(pop, design, sample)?;
    let mut curve = vec![0.0; data.n_times()];
    let mut weight_sum = 0.0;
    for (r, &k) in data.indices.iter().enumerate() {
        let w = 1.0 / design.first_order(k);
        weight_sum += w;
        for (c, y) in curve.iter_mut().zip(data.values.row(r)) {
            *c += w * y;
        }
    }
    curve.iter_mut().for_each(|c| *c /= weight_sum);
    Ok(MeanEstimate {
        curve,
        kind: EstimatorKind::Hajek,
        sample_indices: data.indices,
        a_used: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaKind {
    /// Least squares on the whole population.
    Population,
    /// Design-weighted least squares on the sample, possibly regularized.
    Sampled,
}

/// Regression coefficient curves on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    /// `p x D`; column `i` holds the coefficients at `t_i`.
    pub coefficients: Matrix,
    /// The moment matrix that was inverted (`G` or the sampled `G hat`).
    pub ghat: SymmetricMatrix,
    pub kind: BetaKind,
    pub a_used: f64,
    pub floor_applied: bool,
    pub min_eigenvalue: f64,
}

impl BetaEstimate {
    /// Fitted curve `x' beta(t_i)` for one auxiliary vector.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coefficients.cols()];
        for (j, xj) in x.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.coefficients.row(j)) {
                *o += xj * b;
            }
        }
        out
    }

    /// Coefficients at an arbitrary time, by linear interpolation between grid columns.
    pub fn at(&self, grid: &TimeGrid, t: f64) -> Result<Vec<f64>> {
        (0..self.coefficients.rows())
            .map(|j| interpolate(self.coefficients.row(j), grid, t))
            .collect()
    }
}

/// Ordinary least squares fit of every grid column on the auxiliary variables.
pub fn beta_population(pop: &FunctionalPopulation) -> Result<BetaEstimate> {
    let big_n = pop.n_units() as f64;
    let weights = vec![1.0 / big_n; pop.n_units()];
    let (g, rhs) = weighted_moments(pop.aux(), pop.values(), &weights);
    let min_eigenvalue = crate::linalg::sym_eigen(&g).min_value();
    let inverse = checked_inverse(&g, SINGULAR_REL_THRESHOLD)?;
    Ok(BetaEstimate {
        coefficients: inverse.as_matrix().matmul(&rhs)?,
        ghat: g,
        kind: BetaKind::Population,
        a_used: 0.0,
        floor_applied: false,
        min_eigenvalue,
    })
}

/// `(sum_r w_r x_r x_r', sum_r w_r x_r Y_r')`.
fn weighted_moments(aux: &Matrix, values: &Matrix, weights: &[f64]) -> (SymmetricMatrix, Matrix) {
    let p = aux.cols();
    let d = values.cols();
    let mut g = Matrix::zeros(p, p);
    let mut rhs = Matrix::zeros(p, d);
    for (r, &w) in weights.iter().enumerate() {
        let x = aux.row(r);
        let y = values.row(r);
        for a in 0..p {
            let wx = w * x[a];
            for b in a..p {
                g[(a, b)] += wx * x[b];
            }
            for (o, yi) in rhs.row_mut(a).iter_mut().zip(y) {
                *o += wx * yi;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    (SymmetricMatrix::symmetrize(g), rhs)
}

/// Design-weighted regression coefficients with an eigenvalue floor on `G hat`.
pub fn beta_sampled<D: InclusionProbabilities + ?Sized>(
    data: &SampleData,
    design: &D,
    reg: Regularization,
) -> Result<BetaEstimate> {
    data.check_against(design)?;
    let big_n = design.population_size() as f64;
    let weights: Vec<f64> = data
        .indices
        .iter()
        .map(|&k| 1.0 / (big_n * design.first_order(k)))
        .collect();
    let (ghat, rhs) = weighted_moments(&data.aux, &data.values, &weights);
    let a = reg.floor_for(&ghat)?;
    let (inverse, floor_applied, min_eigenvalue) = if a > 0.0 {
        let r = regularized_inverse(&ghat, a)?;
        (r.inverse, r.floor_applied, r.min_eigenvalue)
    } else {
        let min_eigenvalue = crate::linalg::sym_eigen(&ghat).min_value();
        (checked_inverse(&ghat, SINGULAR_REL_THRESHOLD)?, false, min_eigenvalue)
    };
    Ok(BetaEstimate {
        coefficients: inverse.as_matrix().matmul(&rhs)?,
        ghat,
        kind: BetaKind::Sampled,
        a_used: a,
        floor_applied,
        min_eigenvalue,
    })
}

/// Residuals `Y_k - x_k' beta` for every sampled unit.
pub(crate) fn residuals(data: &SampleData, beta: &BetaEstimate) -> Matrix {
    let mut out = data.values.clone();
    for r in 0..data.len() {
        let fitted = beta.predict(data.aux.row(r));
        for (o, f) in out.row_mut(r).iter_mut().zip(fitted) {
            *o -= f;
        }
    }
    out
}

/// Difference-type estimator `(1/N) [t_x' beta - sum_s (x_k' beta - Y_k) / pi_k]`.
pub(crate) fn corrected_mean<D: InclusionProbabilities + ?Sized>(
    aux_totals: &[f64],
    data: &SampleData,
    design: &D,
    beta: &BetaEstimate,
) -> Vec<f64> {
    let big_n = design.population_size() as f64;
    let mut curve = beta.predict(aux_totals);
    let resid = residuals(data, beta);
    for (r, &k) in data.indices.iter().enumerate() {
        let w = 1.0 / design.first_order(k);
        for (c, e) in curve.iter_mut().zip(resid.row(r)) {
            *c += w * e;
        }
    }
    curve.iter_mut().for_each(|c| *c /= big_n);
    curve
}

/// Model-assisted mean curve.
///
/// Uses only the sampled units and the population totals of the auxiliary variables.
pub fn model_assisted_mean<D: InclusionProbabilities + ?Sized>(
    aux_totals: &[f64],
    data: &SampleData,
    design: &D,
    reg: Regularization,
) -> Result<MeanEstimate> {
    if aux_totals.len() != data.n_aux() {
        return Err(Error::DimensionMismatch {
            context: "auxiliary totals",
            expected: data.n_aux(),
            actual: aux_totals.len(),
        });
    }
    let beta = beta_sampled(data, design, reg)?;
    let curve = corrected_mean(aux_totals, data, design, &beta);
    debug_assert!(
        beta.floor_applied || !has_intercept(&data.aux) || {
            let synthetic = beta.predict(aux_totals);
            let big_n = design.population_size() as f64;
            curve
                .iter()
                .zip(&synthetic)
                .all(|(c, s)| (c - s / big_n).abs() <= 1e-8 * (1.0 + c.abs()))
        },
        "HT sum of residuals must vanish with an intercept"
    );
    Ok(MeanEstimate {
        curve,
        kind: EstimatorKind::ModelAssisted,
        sample_indices: data.indices.clone(),
        a_used: Some(beta.a_used),
    })
}

/// [`model_assisted_mean`] for a fully known population.
pub fn model_assisted_mean_for<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
    sample: &Sample,
    reg: Regularization,
) -> Result<MeanEstimate> {
    let data = check_inputs(pop, design, sample)?;
    model_assisted_mean(&pop.aux_totals(), &data, design, reg)
}

fn has_intercept(aux: &Matrix) -> bool {
    (0..aux.cols()).any(|j| (0..aux.rows()).all(|r| aux[(r, j)] == 1.0))
}

/// Generalized difference estimator built on the population least squares fit.
pub fn difference_mean<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    design: &D,
    sample: &Sample,
) -> Result<MeanEstimate> {
    let beta = beta_population(pop)?;
    difference_mean_with(pop, &beta, design, sample)
}

/// [`difference_mean`] with a precomputed population fit.
pub fn difference_mean_with<D: InclusionProbabilities + ?Sized>(
    pop: &FunctionalPopulation,
    beta: &BetaEstimate,
    design: &D,
    sample: &Sample,
) -> Result<MeanEstimate> {
    let data = check_inputs(pop, design, sample)?;
    let curve = corrected_mean(&pop.aux_totals(), &data, design, beta);
    Ok(MeanEstimate {
        curve,
        kind: EstimatorKind::Difference,
        sample_indices: data.indices,
        a_used: None,
    })
}

/// Chi-square distance calibration weights, one per sampled unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationWeights {
    pub units: Vec<usize>,
    pub weights: Vec<f64>,
}

impl CalibrationWeights {
    /// `(1/N) sum_s w_k Y_k`.
    pub fn weighted_mean(&self, data: &SampleData, population_size: usize) -> Vec<f64> {
        let mut curve = vec![0.0; data.n_times()];
        for (r, w) in self.weights.iter().enumerate() {
            for (c, y) in curve.iter_mut().zip(data.values.row(r)) {
                *c += w * y;
            }
        }
        curve.iter_mut().for_each(|c| *c /= population_size as f64);
        curve
    }

    /// `sum_s w_k x_k`.
    pub fn aux_totals(&self, data: &SampleData) -> Vec<f64> {
        let mut totals = vec![0.0; data.n_aux()];
        for (r, w) in self.weights.iter().enumerate() {
            for (t, x) in totals.iter_mut().zip(data.aux.row(r)) {
                *t += w * x;
            }
        }
        totals
    }
}

/// Weights closest to `1 / pi_k` in chi-square distance that reproduce the
/// auxiliary population totals exactly.
pub fn calibration_weights<D: InclusionProbabilities + ?Sized>(
    aux_totals: &[f64],
    data: &SampleData,
    design: &D,
) -> Result<CalibrationWeights> {
    data.check_against(design)?;
    let p = data.n_aux();
    if aux_totals.len() != p {
        return Err(Error::DimensionMismatch {
            context: "auxiliary totals",
            expected: p,
            actual: aux_totals.len(),
        });
    }
    let mut moment = Matrix::zeros(p, p);
    let mut gap = Matrix::zeros(p, 1);
    for (r, &k) in data.indices.iter().enumerate() {
        let w = 1.0 / design.first_order(k);
        let x = data.aux.row(r);
        for a in 0..p {
            gap[(a, 0)] += w * x[a];
            for b in 0..p {
                moment[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    for (a, t) in aux_totals.iter().enumerate() {
        gap[(a, 0)] -= t;
    }
    let lambda = lu_solve(&moment, &gap)?;
    let weights = data
        .indices
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            let x = data.aux.row(r);
            let shift: f64 = (0..p).map(|a| lambda[(a, 0)] * x[a]).sum();
            (1.0 - shift) / design.first_order(k)
        })
        .collect();
    Ok(CalibrationWeights {
        units: data.indices.clone(),
        weights,
    })
}
