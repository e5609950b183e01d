//! Command-line front end. `main.rs` only forwards to [`main_with_args`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::constraints::ConstraintRegion;
use crate::error::{Error, Result};
use crate::estimators::{
    correct, CorrectedAggregateDistribution, CorrectionRequest, EstimatorReport,
};
use crate::inference::posterior_update;
use crate::io::{
    load_experiment, load_labeled_pairs, load_target_records, write_posterior_draws, write_samples,
    write_scores, write_text, ClassManifest, Experiment, PriorArg, RunConfig, RunConfigFile,
};
use crate::model::{aggregate_by_predicted, confusion_from_pairs};
use crate::sampling::{
    rejection_sample, PosteriorDraws, SamplerConfig, DEFAULT_MAX_ATTEMPTS_FACTOR,
    DEFAULT_RESOLUTION,
};
use crate::simulation::{peculiar_example, run_experiment, ExperimentResult};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "aggcorrect",
    version,
    about = "Misclassification bias correction for aggregate statistics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Naive, baseline and Bayesian estimates of the per-class aggregates.
    Correct(CorrectArgs),
    /// Draws from the posterior of the error rates and base rates.
    Posterior(PosteriorArgs),
    /// Runs a simulation experiment described by a TOML config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    /// Number of accepted posterior draws.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attempt budget as a multiple of the resolution.
    #[arg(long)]
    pub max_attempts_factor: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct CorrectArgs {
    /// TOML file with defaults for any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled test set, header `true,predicted`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Population predictions and target values, header `predicted,y`.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Class labels, one per line.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// `uniform`, `jeffreys` or `custom:<file>`.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub no_constraints: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of corrected aggregate samples.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args, Default)]
pub struct PosteriorArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// With records, draws are restricted to the admissible region.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub no_constraints: bool,
    /// CSV of draws.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// CSV of scores (or of the report, for the peculiar scenario).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON copy of the results.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

struct Flags<'a> {
    config: &'a Option<PathBuf>,
    pairs: &'a Option<PathBuf>,
    records: &'a Option<PathBuf>,
    classes: &'a Option<PathBuf>,
    prior: &'a Option<String>,
    no_constraints: bool,
    out: &'a Option<PathBuf>,
    samples: Option<&'a PathBuf>,
    sampler: &'a SamplerArgs,
}

fn resolve(flags: Flags<'_>) -> Result<RunConfig> {
    let file = match flags.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let pick = |flag: &Option<PathBuf>, file: Option<PathBuf>| flag.clone().or(file);
    let pairs = pick(flags.pairs, file.pairs)
        .ok_or_else(|| Error::InvalidConfig("missing --pairs".into()))?;
    let classes = pick(flags.classes, file.classes)
        .ok_or_else(|| Error::InvalidConfig("missing --classes".into()))?;
    let prior: PriorArg = flags
        .prior
        .clone()
        .or(file.prior)
        .unwrap_or_else(|| "jeffreys".into())
        .parse()?;
    let s = flags.sampler;
    let sampler = SamplerConfig::new(
        s.resolution
            .or(file.resolution)
            .unwrap_or(DEFAULT_RESOLUTION),
        s.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
    )?
    .with_max_attempts_factor(
        s.max_attempts_factor
            .or(file.max_attempts_factor)
            .unwrap_or(DEFAULT_MAX_ATTEMPTS_FACTOR),
    )?
    .with_workers(s.workers.or(file.workers).unwrap_or(1))?;
    let config = RunConfig {
        pairs,
        records: pick(flags.records, file.records),
        classes,
        prior,
        sampler,
        constraints: !flags.no_constraints && file.constraints.unwrap_or(true),
        out: pick(flags.out, file.out),
        samples: flags.samples.cloned().or(file.samples),
    };
    config.validate()?;
    Ok(config)
}

impl CorrectArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let config = resolve(Flags {
            config: &self.config,
            pairs: &self.pairs,
            records: &self.records,
            classes: &self.classes,
            prior: &self.prior,
            no_constraints: self.no_constraints,
            out: &self.out,
            samples: self.samples.as_ref(),
            sampler: &self.sampler,
        })?;
        if config.records.is_none() {
            return Err(Error::InvalidConfig("missing --records".into()));
        }
        Ok(config)
    }
}

impl PosteriorArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let config = resolve(Flags {
            config: &self.config,
            pairs: &self.pairs,
            records: &self.records,
            classes: &self.classes,
            prior: &self.prior,
            no_constraints: self.no_constraints,
            out: &self.out,
            samples: None,
            sampler: &self.sampler,
        })?;
        if config.out.is_none() {
            return Err(Error::InvalidConfig("missing --out".into()));
        }
        Ok(config)
    }
}

/// Runs the correction pipeline without writing anything. The report's
/// timestamp is left unset.
pub fn cmd_correct(
    config: &RunConfig,
) -> Result<(
    EstimatorReport,
    CorrectedAggregateDistribution,
    ClassManifest,
)> {
    let manifest = ClassManifest::load(&config.classes)?;
    let pairs = load_labeled_pairs(&config.pairs, &manifest)?;
    let records_path = config
        .records
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("missing --records".into()))?;
    let records = load_target_records(records_path, &manifest)?;
    let counts = confusion_from_pairs(&pairs, manifest.k())?;
    let prior = config.prior.resolve(manifest.k())?;
    let (report, dist) = correct(&CorrectionRequest {
        labels: manifest.labels(),
        counts: &counts,
        records: &records,
        prior: &prior,
        constrained: config.constraints,
        sampler: config.sampler,
    })?;
    Ok((report, dist, manifest))
}

/// Posterior draws of `(P, β)`; constrained when records are given and
/// constraints are on.
pub fn cmd_posterior(config: &RunConfig) -> Result<(PosteriorDraws, ClassManifest)> {
    let manifest = ClassManifest::load(&config.classes)?;
    let pairs = load_labeled_pairs(&config.pairs, &manifest)?;
    let counts = confusion_from_pairs(&pairs, manifest.k())?;
    let spec = posterior_update(
        &config.prior.resolve(manifest.k())?.build(manifest.k())?,
        &counts,
    )?;
    let region = match (&config.records, config.constraints) {
        (Some(path), true) => {
            let records = load_target_records(path, &manifest)?;
            let (_, v_hat) = aggregate_by_predicted(&records, manifest.k())?;
            Some(ConstraintRegion::new(v_hat)?)
        }
        _ => None,
    };
    let draws = rejection_sample(&spec, region.as_ref(), &config.sampler)?;
    Ok((draws, manifest))
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum SimulationOutput {
    Scores(ExperimentResult),
    Report(EstimatorReport),
}

pub fn cmd_simulate(config: &Path) -> Result<SimulationOutput> {
    match load_experiment(config)? {
        Experiment::Peculiar { sampler } => {
            install_pool(sampler.workers());
            Ok(SimulationOutput::Report(peculiar_example(
                sampler.resolution(),
                sampler.seed(),
            )?))
        }
        Experiment::Grid(spec) => {
            install_pool(spec.sampler.workers());
            Ok(SimulationOutput::Scores(run_experiment(&spec)?))
        }
    }
}

pub fn format_scores(result: &ExperimentResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>6} {:>16} {:>16} {:>16} {:>16} {:>8}",
        "method", "n", "bias", "variance", "mse", "mean", "excluded"
    );
    for s in &result.scores {
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>16.6e} {:>16.6e} {:>16.6e} {:>16.6e} {:>8}",
            s.method.name(),
            s.n,
            s.bias,
            s.variance,
            s.mse,
            s.mean_estimate,
            s.excluded
        );
    }
    out
}

fn report_csv(report: &EstimatorReport) -> String {
    let mut out = String::from(
        "class,naive,baseline,bayes_mean,bayes_sd,skewness,q025,q25,median,q75,q975\n",
    );
    for (h, class) in report.classes.iter().enumerate() {
        let baseline = match &report.baseline {
            crate::estimators::BaselineOutcome::Ok { estimate, .. } => estimate[h].to_string(),
            crate::estimators::BaselineOutcome::Failed { .. } => String::new(),
        };
        let s = &report.bayes[h].summary;
        let _ = writeln!(
            out,
            "{class},{},{baseline},{},{},{},{},{},{},{},{}",
            report.naive[h], s.mean, s.sd, s.skewness, s.q025, s.q25, s.median, s.q75, s.q975
        );
    }
    out
}

fn install_pool(workers: usize) {
    // A second call (e.g. in tests) keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Correct(args) => {
            let config = args.resolve()?;
            install_pool(config.sampler.workers());
            let (mut report, dist, manifest) = cmd_correct(&config)?;
            report.metadata.timestamp_unix = Some(timestamp());
            if let Some(path) = &config.out {
                write_text(path, &to_json(&report))?;
            }
            if let Some(path) = &config.samples {
                write_samples(path, &dist, &manifest)?;
            }
            print!("{}", report.to_text());
        }
        Command::Posterior(args) => {
            let config = args.resolve()?;
            install_pool(config.sampler.workers());
            let (draws, manifest) = cmd_posterior(&config)?;
            let out = config.out.as_ref().expect("checked by resolve");
            write_posterior_draws(out, &draws.draws, manifest.k())?;
            println!(
                "draws={} attempted={} acceptance_rate={:.6}",
                draws.accepted(),
                draws.attempted,
                draws.acceptance_rate()
            );
        }
        Command::Simulate(args) => {
            let output = cmd_simulate(&args.config)?;
            match &output {
                SimulationOutput::Scores(result) => {
                    write_scores(&args.out, result)?;
                    print!("{}", format_scores(result));
                }
                SimulationOutput::Report(report) => {
                    write_text(&args.out, &report_csv(report))?;
                    print!("{}", report.to_text());
                }
            }
            if let Some(path) = &args.json {
                write_text(path, &to_json(&output))?;
            }
        }
    }
    Ok(())
}

/// One-line JSON error record written to stderr.
pub fn error_line(family: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": family, "code": code, "message": message }).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let message = e.to_string();
            let message = message.lines().next().unwrap_or("invalid arguments");
            let message = message.trim_start_matches("error: ");
            eprintln!("{}", error_line("config", 4, message));
            return 4;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let family = e.family();
            eprintln!(
                "{}",
                error_line(family.name(), family.exit_code(), &e.to_string())
            );
            family.exit_code()
        }
    }
}
