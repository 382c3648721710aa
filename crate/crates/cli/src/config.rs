//! Run configuration: a TOML file, overlaid with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fvi_core::estimators::{GradientKind, Objective};
use fvi_core::families::DiagGaussian;
use fvi_core::models::{
    bnn_regression_model, conjugate_gaussian_model, correlated_gaussian_target, linear_dataset,
    load_csv_dataset, sin_dataset, synthetic_sin_model,
};
use fvi_core::optimizer::OptimizerKind;
use fvi_core::{
    family_lookup, Dataset, Direction, DivergenceGenerator, DivergenceSpec, LatentModel,
    MeanFieldConfig, TrainConfig, VariationalFamily,
};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Bound,
    Sandwich,
    Train,
    Meanfield,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Sandwich => "sandwich",
            Command::Train => "train",
            Command::Meanfield => "meanfield",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    SyntheticSin,
    ConjugateGaussian {
        #[serde(default)]
        prior_mean: f64,
        #[serde(default = "one")]
        prior_var: f64,
        #[serde(default = "one")]
        lik_var: f64,
    },
    BnnRegression {
        #[serde(default = "ten")]
        hidden: usize,
        #[serde(default = "tenth")]
        sigma: f64,
    },
    CorrelatedGaussian {
        mean: Vec<f64>,
        precision: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

fn tenth() -> f64 {
    0.1
}

/// Where observations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Scalar observations listed in the config.
    Inline {
        #[serde(default)]
        x: Vec<f64>,
    },
    Sin {
        n: usize,
        seed: u64,
    },
    Linear {
        n: usize,
        #[serde(default = "tenth")]
        noise_sd: f64,
        seed: u64,
    },
    /// A numeric CSV with a header row. `part` selects the split that is used.
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default = "full_split")]
        split: f64,
        #[serde(default)]
        normalize: bool,
        #[serde(default)]
        seed: u64,
        #[serde(default = "train_part")]
        part: Part,
    },
}

fn full_split() -> f64 {
    1.0
}

fn train_part() -> Part {
    Part::Train
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Test,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Inline { x: Vec::new() }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset, CliError> {
        Ok(match self {
            DataConfig::Inline { x } => Dataset::from_scalars(x),
            DataConfig::Sin { n, seed } => sin_dataset(*n, *seed),
            DataConfig::Linear { n, noise_sd, seed } => linear_dataset(*n, *noise_sd, *seed),
            DataConfig::Csv {
                path,
                target,
                split,
                normalize,
                seed,
                part,
            } => {
                let (train, test) = load_csv_dataset(path, target, *normalize, *split, *seed)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                match part {
                    Part::Train => train,
                    Part::Test => test,
                }
            }
        })
    }
}

/// `theta` directly, or `mean` and `sd` for Gaussian families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(rename = "K", alias = "k", default = "default_k")]
    pub k: usize,
    #[serde(rename = "L", alias = "l", default = "one_usize")]
    pub l: usize,
    pub seed: u64,
}

fn default_k() -> usize {
    10_000
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// A single scalar observation.
    X,
    /// The first variational parameter.
    Theta,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::X => "x",
            SweepVariable::Theta => "theta",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        match (&self.values, self.from, self.to, self.points) {
            (Some(v), None, None, None) if !v.is_empty() => Ok(v.clone()),
            (None, Some(a), Some(b), Some(n)) if n >= 1 => Ok(fvi_core::stats::linspace(a, b, n)),
            _ => Err(CliError::Usage(
                "sweep needs either `values` or all of `from`, `to`, `points`".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub gradient: GradientKind,
    pub objective: Objective,
    pub tol: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub snapshot_every: usize,
    /// Sample sizes for the post-training sandwich on the test data.
    #[serde(rename = "eval_K", alias = "eval_k")]
    pub eval_k: usize,
    #[serde(rename = "eval_L", alias = "eval_l")]
    pub eval_l: usize,
    /// Defaults to the estimator seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            epochs: t.epochs,
            batch_size: t.batch_size,
            gradient: t.gradient,
            objective: t.objective,
            tol: t.tol,
            patience: t.patience,
            clip_norm: t.clip_norm,
            snapshot_every: t.snapshot_every,
            eval_k: 10_000,
            eval_l: 1,
            eval_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldSection {
    pub max_sweeps: usize,
    pub tol: f64,
    /// Points per factor grid.
    pub grid: usize,
    pub grid_width: f64,
    pub inner_stride: usize,
    pub mc_samples: usize,
    pub closed_form: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_var: Option<Vec<f64>>,
    /// Points per exported factor table.
    pub export_points: usize,
}

impl Default for MeanFieldSection {
    fn default() -> Self {
        let c = MeanFieldConfig::default();
        MeanFieldSection {
            max_sweeps: c.max_sweeps,
            tol: c.tol,
            grid: c.grid_points,
            grid_width: c.grid_width,
            inner_stride: c.inner_stride,
            mc_samples: c.mc_samples,
            closed_form: c.closed_form,
            init_mean: None,
            init_var: None,
            export_points: 201,
        }
    }
}

impl MeanFieldSection {
    pub fn core(&self, seed: u64) -> MeanFieldConfig {
        MeanFieldConfig {
            max_sweeps: self.max_sweeps,
            tol: self.tol,
            grid_points: self.grid,
            grid_width: self.grid_width,
            inner_stride: self.inner_stride,
            mc_samples: self.mc_samples,
            seed,
            closed_form: self.closed_form,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Run record path; stdout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    /// CSV path (bound, sandwich) or file prefix (meanfield).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

/// Everything a run needs. Echoed verbatim into its record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub divergence_params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyConfig>,
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meanfield: Option<MeanFieldSection>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Reads a TOML config, or the `config` field of a JSON run record.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mut v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let cfg = match v.get_mut("config") {
            Some(c) => c.take(),
            None => v,
        };
        let t: Table = serde_json::from_value(cfg)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        return Ok(t);
    }
    text.parse::<Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), CliError> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| CliError::Usage(format!("empty key in `{path}`")))?;
    let mut cur = table;
    for k in keys {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{k}` in `{path}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `value` as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_table(table: Table) -> Result<Self, CliError> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        Ok(cfg)
    }

    /// The main divergence with `divergence_params` and `direction` merged in.
    pub fn divergence_spec(&self) -> Result<DivergenceSpec, CliError> {
        let raw = self
            .divergence
            .as_deref()
            .ok_or_else(|| CliError::Usage("missing `divergence`".into()))?;
        let mut spec: DivergenceSpec = raw.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
        spec.params
            .extend(self.divergence_params.iter().map(|(k, v)| (k.clone(), *v)));
        if let Some(d) = self.direction {
            spec.direction = d;
        }
        spec.build().map_err(|e| CliError::Usage(format!("{e}")))?;
        Ok(spec)
    }

    pub fn side_spec(&self, which: &str) -> Result<(DivergenceGenerator, Direction), CliError> {
        let raw = match which {
            "upper" => self.upper.as_deref(),
            _ => self.lower.as_deref(),
        }
        .ok_or_else(|| CliError::Usage(format!("missing `{which}` divergence")))?;
        build_spec(raw)
    }

    pub fn family_config(&self) -> Result<&FamilyConfig, CliError> {
        self.family
            .as_ref()
            .ok_or_else(|| CliError::Usage("missing `family`".into()))
    }
}

pub fn build_spec(raw: &str) -> Result<(DivergenceGenerator, Direction), CliError> {
    let spec: DivergenceSpec = raw.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    let g = spec.build().map_err(|e| CliError::Usage(format!("{e}")))?;
    Ok((g, spec.direction))
}

pub fn build_model(cfg: &ModelConfig, data: &Dataset) -> Result<Box<dyn LatentModel>, CliError> {
    let usage = |e: fvi_core::ModelError| CliError::Usage(format!("model: {e}"));
    Ok(match cfg {
        ModelConfig::SyntheticSin => Box::new(synthetic_sin_model()),
        ModelConfig::ConjugateGaussian {
            prior_mean,
            prior_var,
            lik_var,
        } => Box::new(conjugate_gaussian_model(*prior_mean, *prior_var, *lik_var).map_err(usage)?),
        ModelConfig::BnnRegression { hidden, sigma } => {
            Box::new(bnn_regression_model(*hidden, *sigma, data).map_err(usage)?)
        }
        ModelConfig::CorrelatedGaussian { mean, precision } => {
            Box::new(correlated_gaussian_target(mean, precision).map_err(usage)?)
        }
    })
}

/// A single value stands for every coordinate.
fn broadcast(v: Option<&[f64]>, default: f64, dim: usize) -> Vec<f64> {
    match v {
        None => vec![default; dim],
        Some([one]) => vec![*one; dim],
        Some(v) => v.to_vec(),
    }
}

pub fn build_family(
    cfg: &FamilyConfig,
    dim: usize,
) -> Result<(Box<dyn VariationalFamily>, Vec<f64>), CliError> {
    let family = family_lookup(&cfg.name, dim).map_err(|e| CliError::Usage(format!("{e}")))?;
    let theta = match (&cfg.theta, &cfg.mean, &cfg.sd) {
        (Some(t), None, None) => t.clone(),
        (None, mean, sd) if cfg.name == "diag_gaussian" => {
            let mean = broadcast(mean.as_deref(), 0.0, dim);
            let sd = broadcast(sd.as_deref(), 1.0, dim);
            if mean.len() != dim || sd.len() != dim {
                return Err(CliError::Usage(format!(
                    "family mean and sd need 1 or {dim} entries each"
                )));
            }
            DiagGaussian::params(&mean, &sd)
        }
        (None, None, None) => {
            return Err(CliError::Usage(format!(
                "family `{}` needs `theta`",
                cfg.name
            )))
        }
        _ => {
            return Err(CliError::Usage(
                "give either `theta` or `mean`/`sd`, not both".into(),
            ))
        }
    };
    if theta.len() != family.param_dim() {
        return Err(CliError::Usage(format!(
            "family `{}` takes {} parameters, got {}",
            cfg.name,
            family.param_dim(),
            theta.len()
        )));
    }
    Ok((family, theta))
}
