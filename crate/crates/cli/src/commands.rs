use std::path::{Path, PathBuf};

use fvi_core::estimators::sample_latents;
use fvi_core::meanfield::MeanFieldState;
use fvi_core::models::{bnn_regression_model, conjugate_gaussian_model};
use fvi_core::optimizer::{AdamHyper, StopReason, TraceStep};
use fvi_core::oracle::evidence_quadrature;
use fvi_core::{
    iw_bound_mc, run_meanfield, sandwich, train, BoundEstimate, Conditioned, Dataset, LatentModel,
    LogJoint, McConfig, SandwichResult, TrainConfig, VariationalFamily,
};
use serde::Serialize;

use crate::config::{build_family, build_model, DataConfig, ModelConfig, RunConfig, SweepVariable};
use crate::error::CliError;
use crate::record::Diagnostics;

/// Reference value of `ln p(D)`.
#[derive(Clone, Debug, Serialize)]
pub struct Oracle {
    /// `analytic`, `normalized` or `quadrature`.
    pub method: &'static str,
    pub log_evidence: f64,
}

pub fn oracle(
    cfg: &ModelConfig,
    model: &dyn LatentModel,
    data: &Dataset,
) -> Result<Option<Oracle>, CliError> {
    Ok(match cfg {
        ModelConfig::ConjugateGaussian {
            prior_mean,
            prior_var,
            lik_var,
        } => {
            let m = conjugate_gaussian_model(*prior_mean, *prior_var, *lik_var)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Some(Oracle {
                method: "analytic",
                log_evidence: m.log_evidence(data),
            })
        }
        ModelConfig::CorrelatedGaussian { .. } => Some(Oracle {
            method: "normalized",
            log_evidence: 0.0,
        }),
        _ if model.latent_dim() <= 2 => Some(Oracle {
            method: "quadrature",
            log_evidence: evidence_quadrature(model, data)?.log_value(),
        }),
        _ => None,
    })
}

/// Model, data, family and parameters shared by the estimator commands.
struct Setup {
    data: Dataset,
    model: Box<dyn LatentModel>,
    family: Box<dyn VariationalFamily>,
    theta: Vec<f64>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let data = cfg.data.load()?;
    let model = build_model(&cfg.model, &data)?;
    let (family, theta) = build_family(cfg.family_config()?, model.latent_dim())?;
    Ok(Setup {
        data,
        model,
        family,
        theta,
    })
}

fn mc(cfg: &RunConfig) -> McConfig {
    McConfig::new(cfg.estimator.k, cfg.estimator.l, cfg.estimator.seed)
}

pub struct Outcome {
    pub results: serde_json::Value,
    pub diagnostics: Diagnostics,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("results serialize to JSON")
}

#[derive(Serialize)]
struct BoundResults {
    estimate: BoundEstimate,
    oracle: Option<Oracle>,
    /// `h(p(D))`, which the bound exceeds in expectation.
    jensen_floor: Option<f64>,
}

pub fn cmd_bound(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = cfg.divergence_spec()?;
    let g = spec.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let s = setup(cfg)?;
    let target = Conditioned::new(s.model.as_ref(), &s.data);
    let est = iw_bound_mc(
        &g,
        spec.direction,
        &target,
        s.family.as_ref(),
        &s.theta,
        mc(cfg),
    )?;
    let oracle = oracle(&cfg.model, s.model.as_ref(), &s.data)?;
    let jensen_floor = oracle
        .as_ref()
        .map(|o| g.bound_map(spec.direction).eval_log(o.log_evidence));
    if let Some(path) = &cfg.output.csv {
        write_log_ratios(path, &target, s.family.as_ref(), &s.theta, mc(cfg))?;
    }
    let mut diagnostics = Diagnostics::default();
    diagnostics.samples.merge(&est.diagnostics);
    if est.value.is_nan() {
        return Err(CliError::Numeric(format!("bound of `{}` is NaN", spec)));
    }
    Ok(Outcome {
        results: to_value(&BoundResults {
            estimate: est,
            oracle,
            jensen_floor,
        }),
        diagnostics,
    })
}

/// Per-draw `ln p(z, D) - ln q(z)` for the exact draws the estimator used.
fn write_log_ratios(
    path: &Path,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Result<(), CliError> {
    let d = family.latent_dim();
    let z = sample_latents(family, theta, mc);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "draw", "log_ratio"])?;
    for (i, zi) in z.chunks(d).enumerate() {
        let lp = target.log_joint(zi);
        let s = if lp == f64::NEG_INFINITY {
            lp
        } else {
            lp - family.log_q(theta, zi)
        };
        w.write_record([
            (i / mc.l).to_string(),
            (i % mc.l).to_string(),
            s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SandwichPoint {
    /// Swept value, absent for a single evaluation.
    at: Option<f64>,
    result: SandwichResult,
    oracle: Option<Oracle>,
    /// Whether `lower <= p(D) <= upper` holds for the oracle value.
    bracketed: Option<bool>,
}

#[derive(Serialize)]
struct SandwichResults {
    variable: Option<&'static str>,
    points: Vec<SandwichPoint>,
}

pub fn cmd_sandwich(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let upper = cfg.side_spec("upper")?;
    let lower = cfg.side_spec("lower")?;
    let base = setup(cfg)?;
    let grid: Vec<Option<f64>> = match &cfg.sweep {
        Some(sw) => sw.grid()?.into_iter().map(Some).collect(),
        None => vec![None],
    };
    let variable = cfg.sweep.as_ref().map(|s| s.variable);
    let mut diagnostics = Diagnostics::default();
    let mut points = Vec::with_capacity(grid.len());
    for at in grid {
        let mut theta = base.theta.clone();
        let data = match (variable, at) {
            (Some(SweepVariable::X), Some(x)) => Dataset::from_scalars(&[x]),
            (Some(SweepVariable::Theta), Some(t)) => {
                theta[0] = t;
                base.data.clone()
            }
            _ => base.data.clone(),
        };
        let target = Conditioned::new(base.model.as_ref(), &data);
        let result = sandwich(
            (&upper.0, upper.1),
            (&lower.0, lower.1),
            &target,
            base.family.as_ref(),
            &theta,
            mc(cfg),
        )?;
        diagnostics.samples.merge(&result.upper.bound.diagnostics);
        diagnostics.samples.merge(&result.lower.bound.diagnostics);
        for side in [&result.lower, &result.upper] {
            if let Some(r) = &side.reason {
                diagnostics
                    .warnings
                    .push(format!("{} side at {at:?}: {r}", side.divergence));
            }
        }
        let oracle = oracle(&cfg.model, base.model.as_ref(), &data)?;
        let bracketed = oracle.as_ref().map(|o| {
            result.lower.log_value <= o.log_evidence && o.log_evidence <= result.upper.log_value
        });
        points.push(SandwichPoint {
            at,
            result,
            oracle,
            bracketed,
        });
    }
    if let Some(path) = &cfg.output.csv {
        let col = variable.map_or("point", SweepVariable::as_str);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([col, "lower", "upper", "oracle"])?;
        for (i, p) in points.iter().enumerate() {
            let oracle = p.oracle.as_ref().map_or(f64::NAN, |o| o.log_evidence.exp());
            w.write_record([
                p.at.unwrap_or(i as f64).to_string(),
                p.result.lower.value.to_string(),
                p.result.upper.value.to_string(),
                oracle.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(Outcome {
        results: to_value(&SandwichResults {
            variable: variable.map(SweepVariable::as_str),
            points,
        }),
        diagnostics,
    })
}

#[derive(Serialize)]
struct TestEvaluation {
    n: usize,
    sandwich: Option<SandwichResult>,
    oracle: Option<Oracle>,
    /// Root mean squared error of the network at the mean weights, on the target scale.
    rmse: Option<f64>,
}

#[derive(Serialize)]
struct TrainResults {
    theta: Vec<f64>,
    stop_reason: StopReason,
    steps: usize,
    final_bound: Option<f64>,
    trace: Vec<TraceStep>,
    test: Option<TestEvaluation>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let section = cfg.train.clone().unwrap_or_default();
    let s = setup(cfg)?;
    let tc = TrainConfig {
        learning_rate: section.learning_rate,
        optimizer: section.optimizer,
        adam: AdamHyper::default(),
        epochs: section.epochs,
        batch_size: section.batch_size,
        k: cfg.estimator.k,
        l: cfg.estimator.l,
        seed: cfg.estimator.seed,
        gradient: section.gradient,
        objective: section.objective,
        divergence: cfg.divergence_spec()?,
        tol: section.tol,
        patience: section.patience,
        ema_decay: TrainConfig::default().ema_decay,
        clip_norm: section.clip_norm,
        snapshot_every: section.snapshot_every,
    };
    let (theta, trace) = train(s.model.as_ref(), &s.data, s.family.as_ref(), &s.theta, &tc)?;
    let diagnostics = Diagnostics {
        clipped_steps: Some(trace.clipped_steps),
        degenerate_steps: Some(trace.degenerate_steps),
        projected_steps: Some(trace.projected_steps),
        ..Default::default()
    };
    let test = match &cfg.test_data {
        Some(tdc) => Some(evaluate(
            cfg,
            tdc,
            s.model.as_ref(),
            s.family.as_ref(),
            &theta,
            &section,
        )?),
        None => None,
    };
    Ok(Outcome {
        results: to_value(&TrainResults {
            final_bound: trace.final_bound(),
            steps: trace.steps.len(),
            stop_reason: trace.stop_reason,
            trace: trace.steps,
            theta,
            test,
        }),
        diagnostics,
    })
}

fn evaluate(
    cfg: &RunConfig,
    data_cfg: &DataConfig,
    model: &dyn LatentModel,
    family: &dyn VariationalFamily,
    theta: &[f64],
    section: &crate::config::TrainSection,
) -> Result<TestEvaluation, CliError> {
    let data = data_cfg.load()?;
    let target = Conditioned::new(model, &data);
    let sandwich = match (&cfg.upper, &cfg.lower) {
        (Some(_), Some(_)) => {
            let upper = cfg.side_spec("upper")?;
            let lower = cfg.side_spec("lower")?;
            Some(sandwich(
                (&upper.0, upper.1),
                (&lower.0, lower.1),
                &target,
                family,
                theta,
                McConfig::new(
                    section.eval_k,
                    section.eval_l,
                    section.eval_seed.unwrap_or(cfg.estimator.seed),
                ),
            )?)
        }
        _ => None,
    };
    let rmse = match &cfg.model {
        ModelConfig::BnnRegression { hidden, sigma } if !data.is_empty() => {
            let net = bnn_regression_model(*hidden, *sigma, &data)
                .map_err(|e| CliError::Usage(format!("test data: {e}")))?;
            let w = family.mean(theta);
            let sq: f64 = data
                .rows
                .iter()
                .map(|r| {
                    let pred = data.denormalize_target(net.predict(&w, &r.features));
                    let y = data.denormalize_target(r.target.unwrap_or(f64::NAN));
                    (pred - y).powi(2)
                })
                .sum();
            Some((sq / data.len() as f64).sqrt())
        }
        _ => None,
    };
    Ok(TestEvaluation {
        n: data.len(),
        sandwich,
        oracle: oracle(&cfg.model, model, &data)?,
        rmse,
    })
}

#[derive(Serialize)]
struct MeanFieldResults {
    means: Vec<f64>,
    vars: Vec<f64>,
    sweeps: usize,
    converged: bool,
    bound_trace: Vec<f64>,
    state: MeanFieldState,
    factor_files: Vec<PathBuf>,
}

pub fn cmd_meanfield(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let section = cfg.meanfield.clone().unwrap_or_default();
    let g = cfg
        .divergence_spec()?
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let data = cfg.data.load()?;
    let model = build_model(&cfg.model, &data)?;
    let dim = model.latent_dim();
    let means = section.init_mean.clone().unwrap_or_else(|| vec![0.0; dim]);
    let vars = section.init_var.clone().unwrap_or_else(|| vec![1.0; dim]);
    if means.len() != dim || vars.len() != dim {
        return Err(CliError::Usage(format!(
            "init_mean and init_var need {dim} entries each"
        )));
    }
    if vars.iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(CliError::Usage("init_var entries must be positive".into()));
    }
    let target = Conditioned::new(model.as_ref(), &data);
    let state = run_meanfield(
        &target,
        MeanFieldState::gaussian(&means, &vars),
        &g,
        &section.core(cfg.estimator.seed),
    )?;
    let mut factor_files = Vec::new();
    if let Some(prefix) = &cfg.output.csv {
        for (j, f) in state.factors.iter().enumerate() {
            let path = factor_path(prefix, j);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["z", "density"])?;
            for (z, d) in f.table(section.export_points, section.grid_width) {
                w.write_record([z.to_string(), d.to_string()])?;
            }
            w.flush()?;
            factor_files.push(path);
        }
    }
    let diagnostics = Diagnostics {
        clamped_points: Some(state.clamped_points),
        warnings: if state.converged {
            Vec::new()
        } else {
            vec![format!("not converged after {} sweeps", state.sweeps)]
        },
        ..Default::default()
    };
    Ok(Outcome {
        results: to_value(&MeanFieldResults {
            means: state.means(),
            vars: state.vars(),
            sweeps: state.sweeps,
            converged: state.converged,
            bound_trace: state.bound_trace.clone(),
            state,
            factor_files,
        }),
        diagnostics,
    })
}

/// `out/factors.csv` becomes `out/factors_0.csv`, `out/factors_1.csv`, ...
pub fn factor_path(prefix: &Path, j: usize) -> PathBuf {
    let stem = prefix
        .file_stem()
        .map_or_else(|| "factor".into(), |s| s.to_string_lossy().into_owned());
    prefix.with_file_name(format!("{stem}_{j}.csv"))
}
