use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use funsurvey_core::montecarlo::MonteCarloReport;
use funsurvey_core::oracle::{default_fixture, run_oracle_with, PerturbedDesign};
use funsurvey_core::rng::{derive_seed, stream};
use funsurvey_core::{
    build_band, difference_mean, hajek_mean, ht_covariance_estimate, ht_covariance_exact, ht_mean,
    ma_covariance_approx, ma_covariance_estimate, model_assisted_mean_for, run_campaign, BandSettings, CampaignConfig,
    CampaignEstimator, CovarianceEstimate, FunctionalPopulation, MeanEstimate, Regularization, Sample, SampleData,
    InclusionProbabilities, SamplingDesign, TimeGrid,
};

use crate::config::{build_design, load_input, read_sample_file, EstimatorChoice, Input, RunConfig};
use crate::error::CliError;

const POPULATION_TAG: u64 = 0;
const SAMPLE_TAG: u64 = 1;
const BAND_TAG: u64 = 2;

/// Everything a command needs besides its own section of the config.
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    /// Directory that relative input paths are resolved against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub sample: Option<PathBuf>,
}

/// Files produced by a command, written only once everything has been computed.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    /// Text echoed to standard output after the files are written.
    pub summary: String,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let wrap = |path: &Path, source| CliError::Write {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| wrap(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| wrap(&path, e))?;
        }
        Ok(())
    }
}

fn curve_csv(grid: &TimeGrid, curve: &[f64]) -> String {
    let mut out = String::from("t,estimate\n");
    for (t, v) in grid.points().iter().zip(curve) {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

fn covariance_csv(grid: &TimeGrid, cov: &CovarianceEstimate) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    cov.to_csv(grid, &mut buf)?;
    Ok(buf)
}

fn join_indices(indices: &[usize]) -> String {
    indices.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn floor_label(reg: Regularization, used: Option<f64>) -> String {
    match (reg, used) {
        (_, Some(a)) => a.to_string(),
        (Regularization::None, None) => "0".into(),
        (Regularization::Floor(a), None) => a.to_string(),
        (Regularization::Auto, None) => "auto".into(),
    }
}

fn estimator_name(kind: EstimatorChoice) -> &'static str {
    match kind {
        EstimatorChoice::Ht => "ht",
        EstimatorChoice::Hajek => "hajek",
        EstimatorChoice::Difference => "difference",
        EstimatorChoice::ModelAssisted => "model_assisted",
    }
}

/// The design and the sample for single-sample commands.
fn design_and_sample(ctx: &Context, input: &Input) -> Result<(SamplingDesign, Sample), CliError> {
    let big_n = input.population.n_units();
    let sample_path = ctx
        .sample
        .clone()
        .or_else(|| ctx.cfg.design.sample_file.as_ref().map(|p| ctx.base.join(p)));
    let provided = sample_path.map(|p| read_sample_file(&p, big_n)).transpose()?;
    let n = match (&provided, ctx.cfg.design.n) {
        (Some(s), Some(n)) if s.len() != n => {
            return Err(CliError::Validation(format!(
                "sample file has {} units but design.n = {n}",
                s.len()
            )))
        }
        (Some(s), _) => s.len(),
        (None, Some(n)) => n,
        (None, None) => return Err(CliError::Validation("design.n is required".into())),
    };
    let design = build_design(&ctx.cfg, input, n)?;
    let sample = match provided {
        Some(s) => s,
        None => design.draw(&mut stream(derive_seed(ctx.seed, SAMPLE_TAG), 0)),
    };
    design.check_sample(&sample)?;
    Ok((design, sample))
}

fn estimate(
    kind: EstimatorChoice,
    reg: Regularization,
    pop: &FunctionalPopulation,
    design: &SamplingDesign,
    sample: &Sample,
) -> Result<MeanEstimate, CliError> {
    Ok(match kind {
        EstimatorChoice::Ht => ht_mean(pop, design, sample)?,
        EstimatorChoice::Hajek => hajek_mean(pop, design, sample)?,
        EstimatorChoice::Difference => difference_mean(pop, design, sample)?,
        EstimatorChoice::ModelAssisted => model_assisted_mean_for(pop, design, sample, reg)?,
    })
}

fn meta_lines(ctx: &Context, est: &MeanEstimate, reg: Regularization, pop: &FunctionalPopulation) -> String {
    format!(
        "estimator={}\na={}\npopulation_size={}\nsample_size={}\nseed={}\nsample_indices={}\n",
        estimator_name(ctx.cfg.estimator.kind),
        floor_label(reg, est.a_used),
        pop.n_units(),
        est.sample_indices.len(),
        ctx.seed,
        join_indices(&est.sample_indices)
    )
}

pub fn cmd_estimate(ctx: &Context) -> Result<Outputs, CliError> {
    let reg = ctx.cfg.regularization()?;
    let input = load_input(&ctx.cfg, &ctx.base, ctx.seed)?;
    let (design, sample) = design_and_sample(ctx, &input)?;
    let pop = &input.population;
    let est = estimate(ctx.cfg.estimator.kind, reg, pop, &design, &sample)?;
    let mut out = Outputs::default();
    out.add("estimate.csv", curve_csv(pop.grid(), &est.curve));
    out.add("estimate_meta.txt", meta_lines(ctx, &est, reg, pop));
    Ok(out)
}

pub fn cmd_bands(ctx: &Context) -> Result<Outputs, CliError> {
    let reg = ctx.cfg.regularization()?;
    let kind = ctx.cfg.estimator.kind;
    if !matches!(kind, EstimatorChoice::Ht | EstimatorChoice::ModelAssisted) {
        return Err(CliError::Validation(format!(
            "bands are available for the ht and model_assisted estimators, not {}",
            estimator_name(kind)
        )));
    }
    let input = load_input(&ctx.cfg, &ctx.base, ctx.seed)?;
    let (design, sample) = design_and_sample(ctx, &input)?;
    let pop = &input.population;
    let est = estimate(kind, reg, pop, &design, &sample)?;
    let data = SampleData::extract(pop, &sample)?;
    let cov = match kind {
        EstimatorChoice::Ht => ht_covariance_estimate(&data, &design)?,
        _ => ma_covariance_estimate(&data, &design, reg)?,
    };
    let band = build_band(
        &est,
        &cov,
        sample.len(),
        ctx.cfg.band.alpha,
        ctx.cfg.band.n_sims,
        derive_seed(ctx.seed, BAND_TAG),
    )?;
    let mut csv = Vec::new();
    band.to_csv(pop.grid(), &mut csv)?;
    let mut out = Outputs::default();
    out.add("band.csv", csv);
    out.add("band_meta.txt", band.metadata() + &meta_lines(ctx, &est, reg, pop));
    out.add("covariance.csv", covariance_csv(pop.grid(), &cov)?);
    Ok(out)
}

pub fn cmd_montecarlo(ctx: &Context) -> Result<Outputs, CliError> {
    let reg = ctx.cfg.regularization()?;
    let estimator = match ctx.cfg.estimator.kind {
        EstimatorChoice::Ht => CampaignEstimator::HorvitzThompson,
        EstimatorChoice::ModelAssisted => CampaignEstimator::ModelAssisted(reg),
        other => {
            return Err(CliError::Validation(format!(
                "campaigns support the ht and model_assisted estimators, not {}",
                estimator_name(other)
            )))
        }
    };
    let sizes = if ctx.cfg.campaign.sample_sizes.is_empty() {
        vec![ctx
            .cfg
            .design
            .n
            .ok_or_else(|| CliError::Validation("campaign.sample_sizes or design.n is required".into()))?]
    } else {
        ctx.cfg.campaign.sample_sizes.clone()
    };
    let input = load_input(&ctx.cfg, &ctx.base, ctx.seed)?;
    let pop = &input.population;
    let designs: Vec<SamplingDesign> = sizes
        .iter()
        .map(|&n| build_design(&ctx.cfg, &input, n))
        .collect::<Result<_, _>>()?;
    let bands = ctx.cfg.campaign.bands.then_some(BandSettings {
        alpha: ctx.cfg.band.alpha,
        n_sims: ctx.cfg.band.n_sims,
    });

    let mut out = Outputs::default();
    let mut reports: Vec<MonteCarloReport> = Vec::new();
    for design in &designs {
        let n = design.sample_size();
        let cfg = CampaignConfig {
            replicates: ctx.cfg.campaign.replicates,
            estimator,
            bands,
            master_seed: derive_seed(ctx.seed, n as u64),
        };
        let report = run_campaign(pop, design, &cfg)?;
        let (ref_name, reference) = match estimator {
            CampaignEstimator::HorvitzThompson => ("gamma_ht", ht_covariance_exact(pop, design)?),
            CampaignEstimator::ModelAssisted(_) => ("gamma_ma", ma_covariance_approx(pop, design)?),
        };
        out.add(format!("gamma_emp_n{n}.csv"), covariance_csv(pop.grid(), &report.gamma_emp)?);
        out.add(format!("{ref_name}_n{n}.csv"), covariance_csv(pop.grid(), &reference)?);
        out.add(format!("gamma_hat_mean_n{n}.csv"), covariance_csv(pop.grid(), &report.gamma_mean)?);
        let mut er = String::from("replicate,er\n");
        for (i, v) in report.er_values.iter().enumerate() {
            let _ = writeln!(er, "{i},{v}");
        }
        out.add(format!("er_n{n}.csv"), er);
        reports.push(report);
    }

    let mut text = format!(
        "estimator={}\npopulation_size={}\nreplicates={}\nseed={}\n\n",
        estimator.name(),
        pop.n_units(),
        ctx.cfg.campaign.replicates,
        ctx.seed
    );
    text.push_str(&MonteCarloReport::table(&reports));
    let mut csv = format!("{}\n", MonteCarloReport::CSV_HEADER);
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    out.summary = text.clone();
    out.add("report.txt", text);
    out.add("report.csv", csv);
    Ok(out)
}

/// Returns the report text and whether every check passed.
pub fn cmd_oracle_check(ctx: &Context) -> Result<(Outputs, bool), CliError> {
    let (input, design) = if ctx.cfg.input.path.is_none() && ctx.cfg.input.synthetic.is_none() {
        let (pop, design) = default_fixture(derive_seed(ctx.seed, POPULATION_TAG))?;
        let design = match ctx.cfg.design.n {
            Some(n) => design.with_sample_size(n)?,
            None => design,
        };
        (
            Input {
                population: pop,
                labels: None,
            },
            design,
        )
    } else {
        let input = load_input(&ctx.cfg, &ctx.base, ctx.seed)?;
        let n = ctx
            .cfg
            .design
            .n
            .ok_or_else(|| CliError::Validation("design.n is required".into()))?;
        let design = build_design(&ctx.cfg, &input, n)?;
        (input, design)
    };
    let cap = u128::from(ctx.cfg.oracle.cap);
    let tol = ctx.cfg.oracle.tolerance;
    let report = if ctx.cfg.oracle.pair_shift != 0.0 {
        let probs = PerturbedDesign {
            inner: &design,
            pair_shift: ctx.cfg.oracle.pair_shift,
        };
        run_oracle_with(&input.population, &design, &probs, tol, cap)?
    } else {
        run_oracle_with(&input.population, &design, &design, tol, cap)?
    };
    let mut out = Outputs::default();
    let text = format!("seed={}\n{}", ctx.seed, report.to_text());
    out.summary = text.clone();
    out.add("oracle_report.txt", text);
    Ok((out, report.all_passed()))
}
