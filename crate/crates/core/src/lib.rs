//! Design-based estimation of the mean curve of a finite population of
//! discretized functional data.
//!
//! Horvitz-Thompson, Hájek, difference and model-assisted (GREG) estimators,
//! their design covariances, simultaneous confidence bands, a Monte Carlo
//! harness and an exhaustive enumeration oracle for tiny populations.

pub mod bands;
pub mod covariance;
pub mod curve;
pub mod design;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod montecarlo;
pub mod oracle;
pub mod rng;

pub use bands::{build_band, contains, simulate_sup_quantile, simulate_sup_sample, ConfidenceBand, SupSample};
pub use covariance::{
    ht_covariance_estimate, ht_covariance_estimator, ht_covariance_exact, ma_covariance_approx,
    ma_covariance_estimate, CovarianceEstimate, CovarianceKind,
};
pub use curve::{
    generate_population, interpolate, population_mean, AuxDistribution, FunctionalPopulation, ResidualKernel,
    ResidualScale, SuperpopulationConfig, TimeGrid,
};
pub use design::{DesignKind, InclusionProbabilities, Sample, SamplingDesign, Stratum};
pub use error::{Error, Result};
pub use estimators::{
    beta_population, beta_sampled, calibration_weights, difference_mean, hajek_mean, ht_mean, model_assisted_mean,
    model_assisted_mean_for, BetaEstimate, CalibrationWeights, EstimatorKind, MeanEstimate, Regularization,
    SampleData,
};
pub use linalg::{Matrix, SymmetricMatrix};
pub use montecarlo::{run_campaign, BandSettings, CampaignConfig, CampaignEstimator, MonteCarloReport};
pub use oracle::{run_oracle, run_oracle_with, OracleReport, PerturbedDesign};
