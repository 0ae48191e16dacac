//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [input]
//! path = "population.csv"        # or a [input.synthetic] table
//! label_column = "stratum"
//! intercept = true
//!
//! [design]
//! kind = "srswor"                # or "stratified"
//! n = 200
//!
//! [estimator]
//! kind = "model_assisted"        # ht | hajek | difference | model_assisted
//! a = "auto"                     # or a number; 0 means no floor
//!
//! [band]
//! alpha = 0.05
//! n_sims = 10000
//!
//! [campaign]
//! replicates = 1000
//! sample_sizes = [50, 100, 300]
//! bands = false
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use funsurvey_core::bands::{DEFAULT_N_SIMS, MIN_N_SIMS};
use funsurvey_core::design::DEFAULT_ENUMERATION_CAP;
use funsurvey_core::oracle::DEFAULT_TOLERANCE;
use funsurvey_core::{
    generate_population, FunctionalPopulation, Matrix, Regularization, ResidualScale, Sample, SamplingDesign,
    SuperpopulationConfig, TimeGrid,
};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub band: BandConfig,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub label_column: Option<String>,
    /// Prepend a column of ones to CSV auxiliaries.
    #[serde(default = "yes")]
    pub intercept: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: None,
            label_column: None,
            intercept: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub units: usize,
    #[serde(default = "default_times")]
    pub times: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_residual_sd")]
    pub residual_sd: f64,
    /// Log-scale spread of per-unit residual multipliers; 0 gives equal scales.
    #[serde(default)]
    pub residual_log_sd: f64,
    pub seed: Option<u64>,
}

fn default_times() -> usize {
    48
}

fn default_horizon() -> f64 {
    24.0
}

fn default_residual_sd() -> f64 {
    0.18
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKindConfig {
    #[default]
    Srswor,
    Stratified,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default)]
    pub kind: DesignKindConfig,
    pub n: Option<usize>,
    pub allocation: Option<Vec<usize>>,
    /// File of 0-based unit indices (whitespace or comma separated).
    pub sample_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Ht,
    Hajek,
    Difference,
    #[default]
    ModelAssisted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FloorSetting {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kind: EstimatorChoice,
    pub a: Option<FloorSetting>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_sims")]
    pub n_sims: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            n_sims: default_n_sims(),
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_n_sims() -> usize {
    DEFAULT_N_SIMS
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub bands: bool,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            sample_sizes: Vec::new(),
            bands: false,
        }
    }
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_cap")]
    pub cap: u64,
    /// Added to every off-diagonal second-order probability seen by the estimators.
    #[serde(default)]
    pub pair_shift: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            cap: default_cap(),
            pair_shift: 0.0,
        }
    }
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP as u64
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Checks every value that does not need the population.
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.input.path, &self.input.synthetic) {
            (Some(_), Some(_)) => return Err(invalid("input: give either `path` or `synthetic`, not both")),
            (None, Some(s)) => {
                if s.units == 0 || s.times == 0 {
                    return Err(invalid("input.synthetic: `units` and `times` must be positive"));
                }
                if !(s.horizon > 0.0 && s.horizon.is_finite()) {
                    return Err(invalid("input.synthetic: `horizon` must be positive"));
                }
                if !(s.residual_sd >= 0.0 && s.residual_sd.is_finite()) {
                    return Err(invalid("input.synthetic: `residual_sd` must be non-negative"));
                }
                if !(s.residual_log_sd >= 0.0 && s.residual_log_sd.is_finite()) {
                    return Err(invalid("input.synthetic: `residual_log_sd` must be non-negative"));
                }
            }
            _ => {}
        }
        if self.design.n == Some(0) {
            return Err(invalid("design.n must be positive"));
        }
        self.regularization()?;
        if !(self.band.alpha > 0.0 && self.band.alpha < 1.0) {
            return Err(invalid(format!("band.alpha = {} must lie in (0, 1)", self.band.alpha)));
        }
        if self.band.n_sims < MIN_N_SIMS {
            return Err(invalid(format!("band.n_sims must be at least {MIN_N_SIMS}")));
        }
        if self.campaign.replicates < 2 {
            return Err(invalid("campaign.replicates must be at least 2"));
        }
        if self.campaign.sample_sizes.contains(&0) {
            return Err(invalid("campaign.sample_sizes must be positive"));
        }
        if !(self.oracle.tolerance > 0.0) {
            return Err(invalid("oracle.tolerance must be positive"));
        }
        if !self.oracle.pair_shift.is_finite() {
            return Err(invalid("oracle.pair_shift must be finite"));
        }
        Ok(())
    }

    pub fn regularization(&self) -> Result<Regularization, CliError> {
        match &self.estimator.a {
            None => Ok(Regularization::Auto),
            Some(FloorSetting::Named(s)) if s == "auto" => Ok(Regularization::Auto),
            Some(FloorSetting::Named(s)) if s == "none" => Ok(Regularization::None),
            Some(FloorSetting::Named(s)) => Err(invalid(format!("estimator.a: expected a number, \"auto\" or \"none\", got \"{s}\""))),
            Some(FloorSetting::Value(a)) if *a == 0.0 => Ok(Regularization::None),
            Some(FloorSetting::Value(a)) if *a > 0.0 && a.is_finite() => Ok(Regularization::Floor(*a)),
            Some(FloorSetting::Value(a)) => Err(invalid(format!("estimator.a = {a} must be non-negative"))),
        }
    }
}

/// Population plus optional per-unit stratum labels.
pub struct Input {
    pub population: FunctionalPopulation,
    pub labels: Option<Vec<String>>,
}

pub fn load_input(cfg: &RunConfig, base: &Path, seed: u64) -> Result<Input, CliError> {
    if let Some(s) = &cfg.input.synthetic {
        let grid = TimeGrid::uniform(s.times, s.horizon)?;
        let pop_seed = s.seed.unwrap_or_else(|| funsurvey_core::rng::derive_seed(seed, 0));
        let mut sp = SuperpopulationConfig::load_curves(&grid, s.residual_sd, pop_seed);
        if s.residual_log_sd > 0.0 {
            sp.residual_scale = ResidualScale::LogNormal {
                log_sd: s.residual_log_sd,
            };
        }
        let population = generate_population(&sp, s.units, &grid)?;
        return Ok(Input {
            population,
            labels: None,
        });
    }
    let Some(path) = &cfg.input.path else {
        return Err(invalid("input: either `path` or `synthetic` is required"));
    };
    let path = base.join(path);
    let file = fs::File::open(&path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
    let (pop, labels) = FunctionalPopulation::from_csv(file, cfg.input.label_column.as_deref())
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let population = if cfg.input.intercept {
        let n = pop.n_units();
        let p = pop.n_aux();
        let mut aux = Vec::with_capacity(n * (p + 1));
        for k in 0..n {
            aux.push(1.0);
            aux.extend_from_slice(pop.aux_row(k));
        }
        let mut names = vec!["intercept".to_string()];
        names.extend(pop.aux_names().iter().cloned());
        FunctionalPopulation::with_aux_names(pop.grid().clone(), pop.values().clone(), Matrix::new(n, p + 1, aux)?, names)?
    } else {
        pop
    };
    if population.n_aux() == 0 {
        return Err(invalid("input: no auxiliary variables (set `intercept = true` or add columns)"));
    }
    Ok(Input { population, labels })
}

pub fn build_design(cfg: &RunConfig, input: &Input, n: usize) -> Result<SamplingDesign, CliError> {
    let big_n = input.population.n_units();
    let design = match cfg.design.kind {
        DesignKindConfig::Srswor => SamplingDesign::srswor(big_n, n)?,
        DesignKindConfig::Stratified => {
            let labels = input
                .labels
                .as_ref()
                .ok_or_else(|| invalid("design.kind = \"stratified\" needs input.label_column"))?;
            SamplingDesign::stratified_from_labels(labels, n, cfg.design.allocation.as_deref())?
        }
    };
    Ok(design)
}

pub fn read_sample_file(path: &Path, population_size: usize) -> Result<Sample, CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut indices = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let k = tok
                .parse::<usize>()
                .map_err(|_| invalid(format!("{}:{}: `{tok}` is not a unit index", path.display(), line_no + 1)))?;
            indices.push(k);
        }
    }
    Ok(Sample::new(indices, population_size)?)
}
