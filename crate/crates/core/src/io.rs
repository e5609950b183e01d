//! File formats: class manifests, labeled test pairs, target records,
//! custom priors, experiment configs and run configs.
//!
//! All CSV files are UTF-8 with a mandatory header row and `.` as the
//! decimal separator. Row numbers in errors are file line numbers, so the
//! header is line 1.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::CorrectedAggregateDistribution;
use crate::inference::{DirichletProduct, PriorChoice};
use crate::model::{ClassIndex, ContingencyMatrix, LabeledPair, TargetRecord};
use crate::sampling::{
    PosteriorDraw, SamplerConfig, DEFAULT_MAX_ATTEMPTS_FACTOR, DEFAULT_RESOLUTION,
};
use crate::simulation::{ExperimentResult, ExperimentSpec, Method, PopulationSpec, YModel};

/// Ordered class labels; a label's position is its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassManifest {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassManifest {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidManifest(format!(
                "at least 2 classes are required, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::InvalidManifest(format!("label {i} is empty")));
            }
            if label.contains(',') || label.contains('"') {
                return Err(Error::InvalidManifest(format!(
                    "label {label:?} contains a comma or quote"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidManifest(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    /// One label per line; surrounding whitespace and blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, class: ClassIndex) -> &str {
        &self.labels[class.get()]
    }

    pub fn index_of(&self, label: &str) -> Option<ClassIndex> {
        self.index.get(label).map(|&i| ClassIndex(i))
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::MalformedRow {
            path: display(path),
            row,
            message: match kind {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("expected {expected_len} fields, found {len}"),
                csv::ErrorKind::Utf8 { .. } => "invalid UTF-8".to_string(),
                other => format!("{other:?}"),
            },
        },
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let found = reader.headers().map_err(|e| csv_error(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::MalformedRow {
            path: display(path),
            row: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(reader)
}

fn lookup(manifest: &ClassManifest, path: &Path, row: usize, label: &str) -> Result<ClassIndex> {
    manifest.index_of(label).ok_or_else(|| Error::UnknownLabel {
        path: display(path),
        row,
        label: label.to_string(),
    })
}

/// Reads a `true,predicted` CSV of class labels.
pub fn load_labeled_pairs(path: &Path, manifest: &ClassManifest) -> Result<Vec<LabeledPair>> {
    let mut reader = open_csv(path, &["true", "predicted"])?;
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        pairs.push(LabeledPair {
            true_class: lookup(manifest, path, row, &record[0])?,
            predicted_class: lookup(manifest, path, row, &record[1])?,
        });
    }
    Ok(pairs)
}

/// Reads a `predicted,y` CSV. `y` may be any finite real.
pub fn load_target_records(path: &Path, manifest: &ClassManifest) -> Result<Vec<TargetRecord>> {
    let mut reader = open_csv(path, &["predicted", "y"])?;
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let predicted_class = lookup(manifest, path, row, &record[0])?;
        let y = record[1]
            .parse::<f64>()
            .ok()
            .filter(|y| y.is_finite())
            .ok_or_else(|| Error::NonNumericY {
                path: display(path),
                row,
                value: record[1].to_string(),
            })?;
        records.push(TargetRecord { predicted_class, y });
    }
    Ok(records)
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut writer: csv::Writer<fs::File>) -> Result<()> {
    writer.flush().map_err(|e| Error::io(path, e))
}

fn write_row<I, T>(path: &Path, writer: &mut csv::Writer<fs::File>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    writer.write_record(row).map_err(|e| csv_error(path, e))
}

pub fn write_labeled_pairs(
    path: &Path,
    pairs: &[LabeledPair],
    manifest: &ClassManifest,
) -> Result<()> {
    let mut w = create(path)?;
    write_row(path, &mut w, ["true", "predicted"])?;
    for pair in pairs {
        write_row(
            path,
            &mut w,
            [
                manifest.label(pair.true_class),
                manifest.label(pair.predicted_class),
            ],
        )?;
    }
    finish(path, w)
}

pub fn write_target_records(
    path: &Path,
    records: &[TargetRecord],
    manifest: &ClassManifest,
) -> Result<()> {
    let mut w = create(path)?;
    write_row(path, &mut w, ["predicted", "y"])?;
    for r in records {
        write_row(
            path,
            &mut w,
            [
                manifest.label(r.predicted_class).to_string(),
                r.y.to_string(),
            ],
        )?;
    }
    finish(path, w)
}

/// One row per sample, one column per class.
pub fn write_samples(
    path: &Path,
    dist: &CorrectedAggregateDistribution,
    manifest: &ClassManifest,
) -> Result<()> {
    let mut w = create(path)?;
    write_row(path, &mut w, manifest.labels())?;
    for sample in dist.samples() {
        write_row(path, &mut w, sample.iter().map(f64::to_string))?;
    }
    finish(path, w)
}

/// Column names of [`write_posterior_draws`]: `p_<g>_<h>` for every cell of
/// the contingency matrix, then `beta_<g>`.
pub fn posterior_draw_header(k: usize) -> Vec<String> {
    let cells = (0..k).flat_map(|g| (0..k).map(move |h| format!("p_{g}_{h}")));
    cells.chain((0..k).map(|g| format!("beta_{g}"))).collect()
}

pub fn write_posterior_draws(path: &Path, draws: &[PosteriorDraw], k: usize) -> Result<()> {
    let mut w = create(path)?;
    write_row(path, &mut w, posterior_draw_header(k))?;
    for d in draws {
        let cells = (0..k).flat_map(|g| (0..k).map(move |h| d.contingency.get(g, h)));
        let row = cells
            .chain(d.base_rates.iter().copied())
            .map(|x| x.to_string());
        write_row(path, &mut w, row)?;
    }
    finish(path, w)
}

pub fn write_scores(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = create(path)?;
    write_row(
        path,
        &mut w,
        [
            "method",
            "n",
            "truth",
            "mean_estimate",
            "bias",
            "variance",
            "mse",
            "replications",
            "excluded",
        ],
    )?;
    for s in &result.scores {
        write_row(
            path,
            &mut w,
            [
                s.method.name().to_string(),
                s.n.to_string(),
                s.truth.to_string(),
                s.mean_estimate.to_string(),
                s.bias.to_string(),
                s.variance.to_string(),
                s.mse.to_string(),
                s.replications.to_string(),
                s.excluded.to_string(),
            ],
        )?;
    }
    finish(path, w)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {}", display(path), e.message())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    alpha: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

/// Reads a prior from a TOML file with keys `alpha` (K×K) and `gamma` (K).
pub fn load_prior_file(path: &Path, k: usize) -> Result<DirichletProduct> {
    let file: PriorFile = read_toml(path)?;
    let prior = DirichletProduct::new(file.alpha, file.gamma)?;
    if prior.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: prior.k(),
        });
    }
    Ok(prior)
}

/// Prior as named on the command line: `uniform`, `jeffreys` or
/// `custom:<file>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PriorArg {
    Uniform,
    Jeffreys,
    Custom(PathBuf),
}

impl PriorArg {
    pub fn resolve(&self, k: usize) -> Result<PriorChoice> {
        Ok(match self {
            PriorArg::Uniform => PriorChoice::Uniform,
            PriorArg::Jeffreys => PriorChoice::Jeffreys,
            PriorArg::Custom(path) => PriorChoice::Custom(load_prior_file(path, k)?),
        })
    }
}

impl FromStr for PriorArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorArg::Uniform),
            "jeffreys" => Ok(PriorArg::Jeffreys),
            _ => match s.strip_prefix("custom:") {
                Some(path) if !path.is_empty() => Ok(PriorArg::Custom(PathBuf::from(path))),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown prior '{s}' (expected uniform, jeffreys or custom:<file>)"
                ))),
            },
        }
    }
}

impl fmt::Display for PriorArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorArg::Uniform => f.write_str("uniform"),
            PriorArg::Jeffreys => f.write_str("jeffreys"),
            PriorArg::Custom(path) => write!(f, "custom:{}", path.display()),
        }
    }
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_factor() -> usize {
    DEFAULT_MAX_ATTEMPTS_FACTOR
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    #[default]
    Experiment,
    Peculiar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum YModelKind {
    #[default]
    Constant,
    Lognormal,
    Empirical,
}

/// Flat TOML schema of `simulate --config`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_factor")]
    pub max_attempts_factor: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub population_size: Option<usize>,
    pub base_rates: Option<Vec<f64>>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub contingency: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub y_model: YModelKind,
    pub y_value: Option<f64>,
    pub y_mu: Option<f64>,
    pub y_sigma: Option<f64>,
    pub y_file: Option<PathBuf>,
    pub test_sizes: Option<Vec<usize>>,
    pub methods: Option<Vec<String>>,
    pub replications: Option<usize>,
    #[serde(default)]
    pub target_class: usize,
}

/// A validated `simulate` configuration.
#[derive(Debug, Clone)]
pub enum Experiment {
    Peculiar { sampler: SamplerConfig },
    Grid(ExperimentSpec),
}

fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
}

fn load_y_values(path: &Path) -> Result<Vec<f64>> {
    let mut reader = open_csv(path, &["y"])?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let y = record[0]
            .parse::<f64>()
            .ok()
            .filter(|y| y.is_finite())
            .ok_or_else(|| Error::NonNumericY {
                path: display(path),
                row,
                value: record[0].to_string(),
            })?;
        values.push(y);
    }
    Ok(values)
}

impl ExperimentConfig {
    /// `base_dir` resolves a relative `y_file`.
    pub fn into_experiment(self, base_dir: &Path) -> Result<Experiment> {
        let sampler = SamplerConfig::new(self.resolution, self.seed)?
            .with_max_attempts_factor(self.max_attempts_factor)?
            .with_workers(self.workers)?;
        if self.scenario == ScenarioKind::Peculiar {
            return Ok(Experiment::Peculiar { sampler });
        }

        let contingency = match (self.contingency, self.p, self.q) {
            (Some(rows), None, None) => ContingencyMatrix::from_rows(&rows)?,
            (None, Some(p), Some(q)) => ContingencyMatrix::binary(p, q)?,
            _ => {
                return Err(Error::InvalidConfig(
                    "give either `contingency` or both `p` and `q`".into(),
                ))
            }
        };
        let y_model = match self.y_model {
            YModelKind::Constant => YModel::Constant(self.y_value.unwrap_or(1.0)),
            YModelKind::Lognormal => YModel::LogNormal {
                mu: required(self.y_mu, "y_mu")?,
                sigma: required(self.y_sigma, "y_sigma")?,
            },
            YModelKind::Empirical => {
                let file = required(self.y_file, "y_file")?;
                YModel::Empirical(load_y_values(&base_dir.join(file))?)
            }
        };
        let methods = match self.methods {
            Some(names) => names
                .iter()
                .map(|n| n.parse())
                .collect::<Result<Vec<Method>>>()?,
            None => Method::ALL.to_vec(),
        };
        let spec = ExperimentSpec {
            population: PopulationSpec {
                size: required(self.population_size, "population_size")?,
                beta: required(self.base_rates, "base_rates")?,
                y_model,
                contingency,
                seed: self.seed,
            },
            test_sizes: required(self.test_sizes, "test_sizes")?,
            methods,
            replications: required(self.replications, "replications")?,
            sampler,
            target_class: self.target_class,
        };
        spec.validate()?;
        Ok(Experiment::Grid(spec))
    }
}

pub fn load_experiment(path: &Path) -> Result<Experiment> {
    let config: ExperimentConfig = read_toml(path)?;
    config.into_experiment(path.parent().unwrap_or(Path::new(".")))
}

/// Flat TOML schema of `--config` for `correct` and `posterior`. Every key
/// is optional; command-line flags take precedence. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub pairs: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub prior: Option<String>,
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
    pub constraints: Option<bool>,
    pub workers: Option<usize>,
    pub max_attempts_factor: Option<usize>,
    pub out: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut file: RunConfigFile = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut file.pairs,
            &mut file.records,
            &mut file.classes,
            &mut file.out,
            &mut file.samples,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        Ok(file)
    }
}

/// Fully resolved settings of a `correct` or `posterior` run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pairs: PathBuf,
    pub records: Option<PathBuf>,
    pub classes: PathBuf,
    pub prior: PriorArg,
    pub sampler: SamplerConfig,
    pub constraints: bool,
    pub out: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

impl RunConfig {
    /// Every input file must exist.
    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![&self.pairs, &self.classes];
        inputs.extend(&self.records);
        if let PriorArg::Custom(path) = &self.prior {
            inputs.push(path);
        }
        for path in inputs {
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(())
    }
}
