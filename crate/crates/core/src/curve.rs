//! Time grids, discretized trajectories and the synthetic population generator.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix, SymmetricMatrix, PSD_TOL};
use crate::rng;

/// Strictly increasing measurement times `t_1 < ... < t_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    /// Needs at least one point; a single-point grid only interpolates at that point.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("time grid needs at least one point".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("time grid has non-finite points".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "time grid must be strictly increasing: {} followed by {}",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    /// `d` equally spaced points on `[0, horizon]`.
    pub fn uniform(d: usize, horizon: f64) -> Result<Self> {
        match d {
            0 => Err(Error::Validation("time grid needs at least one point".into())),
            1 => Self::new(vec![0.0]),
            _ => Self::new((0..d).map(|i| horizon * i as f64 / (d - 1) as f64).collect()),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Position of each point rescaled to `[0, 1]`.
    fn relative_positions(&self) -> Vec<f64> {
        let span = self.end() - self.start();
        self.points
            .iter()
            .map(|t| if span > 0.0 { (t - self.start()) / span } else { 0.0 })
            .collect()
    }
}

/// Piecewise-linear interpolation of a discretized trajectory.
pub fn interpolate(curve: &[f64], grid: &TimeGrid, t: f64) -> Result<f64> {
    let pts = grid.points();
    if curve.len() != pts.len() {
        return Err(Error::DimensionMismatch {
            context: "curve length vs grid",
            expected: pts.len(),
            actual: curve.len(),
        });
    }
    if !(t >= grid.start() && t <= grid.end()) {
        return Err(Error::Domain {
            t,
            lo: grid.start(),
            hi: grid.end(),
        });
    }
    // first index with pts[i] > t, so pts[i - 1] <= t
    let upper = pts.partition_point(|&p| p <= t);
    if upper == pts.len() {
        return Ok(curve[pts.len() - 1]);
    }
    let i = upper - 1;
    let slope = (curve[i + 1] - curve[i]) / (pts[i + 1] - pts[i]);
    Ok(curve[i] + slope * (t - pts[i]))
}

/// `N` discretized curves on a shared grid plus an `N x p` auxiliary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalPopulation {
    grid: TimeGrid,
    values: Matrix,
    aux: Matrix,
    aux_names: Vec<String>,
}

impl FunctionalPopulation {
    pub fn new(grid: TimeGrid, values: Matrix, aux: Matrix) -> Result<Self> {
        let names = (0..aux.cols()).map(|j| format!("x{}", j + 1)).collect();
        Self::with_aux_names(grid, values, aux, names)
    }

    pub fn with_aux_names(grid: TimeGrid, values: Matrix, aux: Matrix, aux_names: Vec<String>) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Validation("population has no units".into()));
        }
        if values.cols() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "curve values columns vs grid",
                expected: grid.len(),
                actual: values.cols(),
            });
        }
        if aux.rows() != values.rows() {
            return Err(Error::DimensionMismatch {
                context: "auxiliary rows vs units",
                expected: values.rows(),
                actual: aux.rows(),
            });
        }
        if aux.cols() == 0 {
            return Err(Error::Validation("at least one auxiliary variable is required".into()));
        }
        if aux_names.len() != aux.cols() {
            return Err(Error::DimensionMismatch {
                context: "auxiliary names",
                expected: aux.cols(),
                actual: aux_names.len(),
            });
        }
        if !values.is_finite() || !aux.is_finite() {
            return Err(Error::Validation("population contains non-finite values".into()));
        }
        Ok(Self {
            grid,
            values,
            aux,
            aux_names,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn aux(&self) -> &Matrix {
        &self.aux
    }

    pub fn aux_names(&self) -> &[String] {
        &self.aux_names
    }

    pub fn n_units(&self) -> usize {
        self.values.rows()
    }

    pub fn n_times(&self) -> usize {
        self.values.cols()
    }

    pub fn n_aux(&self) -> usize {
        self.aux.cols()
    }

    pub fn curve(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    pub fn aux_row(&self, k: usize) -> &[f64] {
        self.aux.row(k)
    }

    /// Population totals `sum_U x_k`.
    pub fn aux_totals(&self) -> Vec<f64> {
        column_sums(&self.aux)
    }

    /// Same units and auxiliaries, different curves.
    pub fn with_values(&self, values: Matrix) -> Result<Self> {
        Self::with_aux_names(self.grid.clone(), values, self.aux.clone(), self.aux_names.clone())
    }

    /// Same units and curves, different auxiliaries.
    pub fn with_aux(&self, aux: Matrix) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.clone(), aux)
    }

    /// Reads the CSV layout: header `t=<time>` for curve columns, any other
    /// name for auxiliary columns. `label_column`, when given, is pulled out
    /// as a string label per unit instead of an auxiliary variable.
    pub fn from_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<(Self, Option<Vec<String>>)> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();

        let mut time_cols = Vec::new();
        let mut times = Vec::new();
        let mut aux_cols = Vec::new();
        let mut aux_names = Vec::new();
        let mut label_idx = None;
        for (i, h) in headers.iter().enumerate() {
            if Some(h) == label_column {
                label_idx = Some(i);
            } else if let Some(t) = h.strip_prefix("t=") {
                let t: f64 = t.parse().map_err(|_| Error::Parse {
                    line: 1,
                    message: format!("bad grid time in header `{h}`"),
                })?;
                time_cols.push(i);
                times.push(t);
            } else {
                aux_cols.push(i);
                aux_names.push(h.to_string());
            }
        }
        if let (Some(name), None) = (label_column, label_idx) {
            return Err(Error::Parse {
                line: 1,
                message: format!("label column `{name}` not found"),
            });
        }
        let grid = TimeGrid::new(times)?;

        let mut values = Vec::new();
        let mut aux = Vec::new();
        let mut labels = label_idx.map(|_| Vec::new());
        let mut n = 0;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{}`: cannot parse `{raw}` as a number", &headers[i]),
                })
            };
            for &i in &time_cols {
                values.push(field(i)?);
            }
            for &i in &aux_cols {
                aux.push(field(i)?);
            }
            if let (Some(labels), Some(i)) = (labels.as_mut(), label_idx) {
                labels.push(record.get(i).unwrap_or("").to_string());
            }
            n += 1;
        }
        let values = Matrix::new(n, time_cols.len(), values)?;
        let aux = Matrix::new(n, aux_cols.len(), aux)?;
        Ok((Self::with_aux_names(grid, values, aux, aux_names)?, labels))
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = self
            .grid
            .points()
            .iter()
            .map(|t| format!("t={t}"))
            .chain(self.aux_names.iter().cloned())
            .collect();
        w.write_record(&header)?;
        for k in 0..self.n_units() {
            let row: Vec<String> = self
                .curve(k)
                .iter()
                .chain(self.aux_row(k))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column-wise arithmetic mean of the population curves.
pub fn population_mean(pop: &FunctionalPopulation) -> Vec<f64> {
    let n = pop.n_units() as f64;
    column_sums(pop.values()).into_iter().map(|s| s / n).collect()
}

pub(crate) fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (s, v) in sums.iter_mut().zip(m.row(i)) {
            *s += v;
        }
    }
    sums
}

/// Covariance function of the residual process, evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualKernel {
    /// `variance * 1{t = r}`
    WhiteNoise { variance: f64 },
    /// `variance * exp(-|t - r| / length_scale)`
    Exponential { variance: f64, length_scale: f64 },
    /// Periodic component `exp(-2 sin^2(pi |t - r| / period))` plus an exponential one.
    PeriodicExponential {
        periodic_variance: f64,
        period: f64,
        exp_variance: f64,
        length_scale: f64,
    },
    /// Explicit `D x D` matrix on the grid.
    Matrix(Matrix),
}

impl ResidualKernel {
    pub fn matrix_on(&self, grid: &TimeGrid) -> Result<Matrix> {
        let pts = grid.points();
        let d = pts.len();
        let positive = |name: &'static str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be positive",
                })
            }
        };
        let non_negative = |name: &'static str, v: f64| -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be non-negative",
                })
            }
        };
        let eval = |f: &dyn Fn(f64) -> f64| {
            let mut m = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = f((pts[i] - pts[j]).abs());
                }
            }
            m
        };
        match *self {
            ResidualKernel::WhiteNoise { variance } => {
                non_negative("variance", variance)?;
                Ok(eval(&|h| if h == 0.0 { variance } else { 0.0 }))
            }
            ResidualKernel::Exponential { variance, length_scale } => {
                non_negative("variance", variance)?;
                positive("length_scale", length_scale)?;
                Ok(eval(&|h| variance * (-h / length_scale).exp()))
            }
            ResidualKernel::PeriodicExponential {
                periodic_variance,
                period,
                exp_variance,
                length_scale,
            } => {
                non_negative("periodic_variance", periodic_variance)?;
                non_negative("exp_variance", exp_variance)?;
                positive("period", period)?;
                positive("length_scale", length_scale)?;
                Ok(eval(&|h| {
                    let s = (PI * h / period).sin();
                    periodic_variance * (-2.0 * s * s).exp() + exp_variance * (-h / length_scale).exp()
                }))
            }
            ResidualKernel::Matrix(ref m) => {
                if m.rows() != d || m.cols() != d {
                    return Err(Error::DimensionMismatch {
                        context: "kernel matrix vs grid",
                        expected: d,
                        actual: m.rows(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

/// How the auxiliary vectors `x_k` are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxDistribution {
    /// `x_k = (1)`.
    InterceptOnly,
    /// `x_k = (1, z_k)` where `z_k` is the mean over the grid of a noisy
    /// previous-period curve `level_k * (1 + 0.3 sin(2 pi u)) + past_noise_sd * g`,
    /// with `level_k` log-normal with log-scale `level_log_sd`.
    PastPeriod { level_log_sd: f64, past_noise_sd: f64 },
    /// Supplied `N x p` matrix.
    Fixed(Matrix),
}

/// Multiplier applied to each unit's residual vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualScale {
    Constant,
    /// `s_k = exp(log_sd * g - log_sd^2)`, so that `E[s_k^2] = 1`.
    LogNormal { log_sd: f64 },
}

/// Parameters of the working linear model used to generate synthetic populations.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpopulationConfig {
    /// `p x D` matrix; row `j` holds `beta_j(t_1..t_D)`.
    pub beta_curves: Matrix,
    pub residual_kernel: ResidualKernel,
    pub aux_distribution: AuxDistribution,
    pub residual_scale: ResidualScale,
    pub seed: u64,
}

impl SuperpopulationConfig {
    /// Load-curve flavoured defaults: intercept plus a past-period covariate
    /// with daily-cycle coefficient curves and exponential residual kernel.
    pub fn load_curves(grid: &TimeGrid, residual_sd: f64, seed: u64) -> Self {
        let u = grid.relative_positions();
        let d = u.len();
        let mut beta = Matrix::zeros(2, d);
        for (i, &ui) in u.iter().enumerate() {
            beta[(0, i)] = 1.0 + 0.5 * (2.0 * PI * ui).sin();
            beta[(1, i)] = 1.0 + 0.4 * (2.0 * PI * ui).cos();
        }
        let span = (grid.end() - grid.start()).max(1.0);
        Self {
            beta_curves: beta,
            residual_kernel: ResidualKernel::Exponential {
                variance: residual_sd * residual_sd,
                length_scale: 0.1 * span,
            },
            aux_distribution: AuxDistribution::PastPeriod {
                level_log_sd: 0.5,
                past_noise_sd: 0.2,
            },
            residual_scale: ResidualScale::Constant,
            seed,
        }
    }

    fn n_aux(&self) -> usize {
        match &self.aux_distribution {
            AuxDistribution::InterceptOnly => 1,
            AuxDistribution::PastPeriod { .. } => 2,
            AuxDistribution::Fixed(m) => m.cols(),
        }
    }
}

/// Draws `Y_k(t_i) = x_k' beta(t_i) + eps_k(t_i)` for `n_units` units.
///
/// Residual vectors are Gaussian with the kernel's covariance on the grid,
/// sampled through its eigendecomposition with negative eigenvalues clipped.
pub fn generate_population(cfg: &SuperpopulationConfig, n_units: usize, grid: &TimeGrid) -> Result<FunctionalPopulation> {
    if n_units == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    let d = grid.len();
    let p = cfg.n_aux();
    if cfg.beta_curves.rows() != p || cfg.beta_curves.cols() != d {
        return Err(Error::Config(format!(
            "beta curves must be {p} x {d}, got {} x {}",
            cfg.beta_curves.rows(),
            cfg.beta_curves.cols()
        )));
    }
    if !cfg.beta_curves.is_finite() {
        return Err(Error::Config("beta curves contain non-finite values".into()));
    }

    let kernel = SymmetricMatrix::new(cfg.residual_kernel.matrix_on(grid)?)
        .map_err(|e| Error::Config(format!("residual kernel: {e}")))?;
    let eig = sym_eigen(&kernel);
    let tol = PSD_TOL * eig.max_abs_value();
    if eig.min_value() < -tol {
        return Err(Error::Config(format!(
            "residual kernel is not positive semidefinite on the grid (eigenvalue {:e})",
            eig.min_value()
        )));
    }
    // factor F = V sqrt(max(eta, 0)), so F F' = clipped kernel
    let mut factor = eig.vectors.clone();
    for (j, &eta) in eig.values.iter().enumerate() {
        let s = eta.max(0.0).sqrt();
        for i in 0..d {
            factor[(i, j)] *= s;
        }
    }

    let aux = generate_aux(&cfg.aux_distribution, n_units, grid, cfg.seed)?;
    let mut residual_rng = rng::stream(cfg.seed, 1);
    let mut scale_rng = rng::stream(cfg.seed, 2);
    let mut values = Matrix::zeros(n_units, d);
    let mut g = vec![0.0; d];
    for k in 0..n_units {
        let scale = match cfg.residual_scale {
            ResidualScale::Constant => 1.0,
            ResidualScale::LogNormal { log_sd } => {
                let z: f64 = scale_rng.sample(StandardNormal);
                (log_sd * z - log_sd * log_sd).exp()
            }
        };
        for gi in g.iter_mut() {
            *gi = residual_rng.sample(StandardNormal);
        }
        let x = aux.row(k);
        let row = values.row_mut(k);
        for i in 0..d {
            let mut mean = 0.0;
            for (j, xj) in x.iter().enumerate() {
                mean += xj * cfg.beta_curves[(j, i)];
            }
            let mut eps = 0.0;
            for (j, gj) in g.iter().enumerate() {
                eps += factor[(i, j)] * gj;
            }
            row[i] = mean + scale * eps;
        }
    }
    FunctionalPopulation::new(grid.clone(), values, aux)
}

fn generate_aux(dist: &AuxDistribution, n_units: usize, grid: &TimeGrid, seed: u64) -> Result<Matrix> {
    match dist {
        AuxDistribution::InterceptOnly => Ok(Matrix::new(n_units, 1, vec![1.0; n_units])?),
        AuxDistribution::Fixed(m) => {
            if m.rows() != n_units {
                return Err(Error::Config(format!(
                    "fixed auxiliary matrix has {} rows for {n_units} units",
                    m.rows()
                )));
            }
            Ok(m.clone())
        }
        &AuxDistribution::PastPeriod {
            level_log_sd,
            past_noise_sd,
        } => {
            if !(level_log_sd >= 0.0 && past_noise_sd >= 0.0) {
                return Err(Error::Config("past-period spreads must be non-negative".into()));
            }
            let mut rng = rng::stream(seed, 0);
            let shape: Vec<f64> = grid
                .relative_positions()
                .iter()
                .map(|u| 1.0 + 0.3 * (2.0 * PI * u).sin())
                .collect();
            let mut aux = Matrix::zeros(n_units, 2);
            for k in 0..n_units {
                let level = (level_log_sd * rng.sample::<f64, _>(StandardNormal)).exp();
                let mut total = 0.0;
                for s in &shape {
                    total += level * s + past_noise_sd * rng.sample::<f64, _>(StandardNormal);
                }
                aux[(k, 0)] = 1.0;
                aux[(k, 1)] = total / shape.len() as f64;
            }
            Ok(aux)
        }
    }
}
