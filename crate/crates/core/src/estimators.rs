//! Monte Carlo f-variational bounds, gradient estimators and evidence sandwiches.
//!
//! Every estimator draws its outer rows in chunks of [`CHUNK_ROWS`]; chunk `c`
//! reads RNG substream `c` of the seed and draws, for each row, `L` noise
//! vectors in order. Bounds and gradients therefore see identical samples for
//! the same `(seed, K, L)`, which gives common random numbers across `theta`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{Direction, DivergenceGenerator, LogForm, Monotone, ScalarMap};
use crate::families::{FamilyError, VariationalFamily};
use crate::models::LogJoint;
use crate::stats::{log_sum_exp, mean_stderr, pairwise_sum, softmax_into, stream_rng, CHUNK_ROWS};
use crate::RngStream;

pub use crate::models::minibatch_adapter;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    #[error("non-finite gradient: {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Bound,
    IwBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    Score,
    Reparam,
    IwReparam,
}

impl std::str::FromStr for GradientKind {
    type Err = EstimatorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "score" => Ok(GradientKind::Score),
            "reparam" => Ok(GradientKind::Reparam),
            "iw_reparam" => Ok(GradientKind::IwReparam),
            other => Err(EstimatorError::InvalidArgument(format!(
                "gradient kind must be score, reparam or iw_reparam, got `{other}`"
            ))),
        }
    }
}

/// What a training step minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// The bound `E[h(r)]` itself.
    Bound,
    /// `sign(c) ln E[r^p]` for power-form maps `c t^p + o`; the bound otherwise.
    LogBound,
    /// `-(1/p) ln E[r^p]` for power forms and `-E[ln r]` for log forms: ascends the
    /// log-evidence estimate whichever side the map bounds. The bound otherwise.
    NegLogEvidence,
}

/// Per-estimate sample diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    /// Rows whose bound term is infinite or NaN.
    pub nonfinite_rows: usize,
    /// Rows with every density ratio equal to zero.
    pub zero_ratio_rows: usize,
    /// Rows whose averaged ratio lies outside the generator's validity domain.
    pub out_of_domain_rows: usize,
    /// Rows evaluated exactly at a ratio of 1, where kinked maps use a subgradient.
    pub unit_ratio_rows: usize,
}

impl SampleDiagnostics {
    pub fn merge(&mut self, o: &SampleDiagnostics) {
        self.nonfinite_rows += o.nonfinite_rows;
        self.zero_ratio_rows += o.zero_ratio_rows;
        self.out_of_domain_rows += o.out_of_domain_rows;
        self.unit_ratio_rows += o.unit_ratio_rows;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub stderr: f64,
    pub k: usize,
    pub l: usize,
    pub divergence: String,
    pub direction: Direction,
    pub estimator_kind: EstimatorKind,
    /// Log-evidence bound from the map's closed form (`E[ln r]` or
    /// `ln(E[r^p]) / p`), computed in log space.
    pub log_evidence: Option<f64>,
    pub log_evidence_stderr: Option<f64>,
    /// The log-evidence value is a nonlinear transform of an unbiased estimate.
    pub log_evidence_biased: bool,
    pub diagnostics: SampleDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub stderr: Vec<f64>,
    pub kind: GradientKind,
    pub k: usize,
    pub l: usize,
    /// Value of the objective on the same samples.
    pub objective: f64,
    pub diagnostics: SampleDiagnostics,
}

/// Shared sampling settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(k: usize, l: usize, seed: u64) -> Self {
        McConfig { k, l, seed }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if self.k == 0 || self.l == 0 {
            return Err(EstimatorError::InvalidArgument(format!(
                "K and L must be at least 1 (K={}, L={})",
                self.k, self.l
            )));
        }
        Ok(())
    }
}

/// Evaluates `row` for `k` outer rows, chunked over RNG substreams, in row order.
fn map_rows<T, F>(k: usize, seed: u64, row: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream, &mut Scratch) -> T + Sync,
{
    let chunks = k.div_ceil(CHUNK_ROWS);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK_ROWS.min(k - c * CHUNK_ROWS);
            let mut rng = stream_rng(seed, c as u64);
            let mut scratch = Scratch::default();
            (0..rows).map(|_| row(&mut rng, &mut scratch)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

#[derive(Default)]
struct Scratch {
    eps: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

/// Draws `l` noise vectors and their log ratios `ln p(z, D) - ln q(z)`.
fn draw_log_ratios(
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    l: usize,
    rng: &mut RngStream,
    sc: &mut Scratch,
) {
    let (nd, d) = (family.noise_dim(), family.latent_dim());
    sc.eps.resize(nd * l, 0.0);
    sc.z.resize(d * l, 0.0);
    sc.s.resize(l, 0.0);
    for i in 0..l {
        let eps = &mut sc.eps[i * nd..(i + 1) * nd];
        family.noise_sample(rng, eps);
        let z = &mut sc.z[i * d..(i + 1) * d];
        family.g(theta, eps, z);
        let lp = target.log_joint(z);
        sc.s[i] = if lp == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lp - family.log_q(theta, z)
        };
    }
}

/// The latent draws every estimator sees for `(theta, mc)`: `K * L` rows of
/// `latent_dim` values, outer-row major.
pub fn sample_latents(family: &dyn VariationalFamily, theta: &[f64], mc: McConfig) -> Vec<f64> {
    let (nd, d) = (family.noise_dim(), family.latent_dim());
    map_rows(mc.k, mc.seed, |rng, _| {
        let mut eps = vec![0.0; nd];
        let mut z = vec![0.0; d * mc.l];
        for i in 0..mc.l {
            family.noise_sample(rng, &mut eps);
            family.g(theta, &eps, &mut z[i * d..(i + 1) * d]);
        }
        z
    })
    .concat()
}

/// `ln((1/L) sum_l exp(s_l))`.
fn mean_log_ratio(s: &[f64]) -> f64 {
    if s.len() == 1 {
        s[0]
    } else {
        log_sum_exp(s) - (s.len() as f64).ln()
    }
}

fn check_dims(
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
) -> Result<(), EstimatorError> {
    if target.dim() != family.latent_dim() {
        return Err(EstimatorError::InvalidArgument(format!(
            "model has {} latents, family `{}` has {}",
            target.dim(),
            family.name(),
            family.latent_dim()
        )));
    }
    if theta.len() != family.param_dim() {
        return Err(EstimatorError::Family(FamilyError::Dimension {
            got: theta.len(),
            want: family.param_dim(),
        }));
    }
    Ok(())
}

struct RowValue {
    s_bar: f64,
    h: f64,
}

fn row_diagnostics(
    rows: &[RowValue],
    g: &DivergenceGenerator,
    direction: Direction,
) -> SampleDiagnostics {
    let validity = g.bound_validity(direction);
    let mut d = SampleDiagnostics::default();
    for r in rows {
        if !r.h.is_finite() {
            d.nonfinite_rows += 1;
        }
        if r.s_bar == f64::NEG_INFINITY {
            d.zero_ratio_rows += 1;
        }
        if r.s_bar == 0.0 {
            d.unit_ratio_rows += 1;
        }
        if !validity.is_full() && !validity.contains(r.s_bar.exp()) {
            d.out_of_domain_rows += 1;
        }
    }
    d
}

/// Log-evidence estimate from a closed form, with its delta-method stderr.
fn closed_form_log_evidence(lf: LogForm, s_bar: &[f64]) -> Option<(f64, f64)> {
    match lf {
        LogForm::Log { .. } => {
            if s_bar.iter().any(|s| !s.is_finite()) {
                return Some((f64::NEG_INFINITY, f64::INFINITY));
            }
            let (m, se) = mean_stderr(s_bar);
            Some((m, se))
        }
        LogForm::Power { power, .. } => {
            let ps: Vec<f64> = s_bar.iter().map(|s| power * s).collect();
            let m = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Some((
                    if m > 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    },
                    f64::INFINITY,
                ));
            }
            let w: Vec<f64> = ps.iter().map(|v| (v - m).exp()).collect();
            let (mean, se) = mean_stderr(&w);
            Some(((m + mean.ln()) / power, se / mean / power.abs()))
        }
    }
}

/// Importance-weighted bound `E[h((1/L) sum_l r_l)]` with `h = f*` (reverse)
/// or `h = f` (forward). `L = 1` is the plain bound.
pub fn iw_bound_mc(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Result<BoundEstimate, EstimatorError> {
    mc.validate()?;
    check_dims(target, family, theta)?;
    let map = g.bound_map(direction);
    let rows = map_rows(mc.k, mc.seed, |rng, sc| {
        draw_log_ratios(target, family, theta, mc.l, rng, sc);
        let s_bar = mean_log_ratio(&sc.s);
        RowValue {
            s_bar,
            h: map.eval_log(s_bar),
        }
    });
    let diagnostics = row_diagnostics(&rows, g, direction);
    if rows.iter().all(|r| r.h.is_nan()) {
        return Err(EstimatorError::Degenerate(format!(
            "all {} rows of `{}` are undefined",
            mc.k,
            g.name()
        )));
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let (value, stderr) = mean_stderr(&h);
    let s_bar: Vec<f64> = rows.iter().map(|r| r.s_bar).collect();
    let closed = map
        .log_form()
        .and_then(|lf| closed_form_log_evidence(lf, &s_bar));
    Ok(BoundEstimate {
        value,
        stderr,
        k: mc.k,
        l: mc.l,
        divergence: g.name().to_string(),
        direction,
        estimator_kind: if mc.l == 1 {
            EstimatorKind::Bound
        } else {
            EstimatorKind::IwBound
        },
        log_evidence: closed.map(|c| c.0),
        log_evidence_stderr: closed.map(|c| c.1),
        log_evidence_biased: matches!(map.log_form(), Some(LogForm::Power { .. })),
        diagnostics,
    })
}

/// Plain bound `E_q[h(p(z, D)/q(z))]`; identical to [`iw_bound_mc`] with `L = 1`.
pub fn bound_mc(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    k: usize,
    seed: u64,
) -> Result<BoundEstimate, EstimatorError> {
    iw_bound_mc(
        g,
        direction,
        target,
        family,
        theta,
        McConfig::new(k, 1, seed),
    )
}

/// Per-coordinate mean and standard error of per-row vectors, reduced in row order.
fn reduce_rows(rows: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; p];
    let mut se = vec![0.0; p];
    let mut col = vec![0.0; rows.len()];
    for j in 0..p {
        for (c, r) in col.iter_mut().zip(rows) {
            *c = r[j];
        }
        let (m, s) = mean_stderr(&col);
        mean[j] = m;
        se[j] = if rows.len() < 2 { 0.0 } else { s };
    }
    (mean, se)
}

/// Score-function gradient of the plain bound:
/// `E[(h(r) - r h'(r)) grad_theta ln q(z)]`, which equals `f'(q/p)` weights in reverse.
pub fn grad_score(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    k: usize,
    seed: u64,
) -> Result<GradientEstimate, EstimatorError> {
    let mc = McConfig::new(k, 1, seed);
    mc.validate()?;
    check_dims(target, family, theta)?;
    let map = g.bound_map(direction);
    let p = family.param_dim();
    let rows = map_rows(k, seed, |rng, sc| {
        draw_log_ratios(target, family, theta, 1, rng, sc);
        let s = sc.s[0];
        let h = map.eval_log(s);
        let weight = h - map.slope_log(s);
        let mut score = vec![0.0; p];
        family.grad_theta_log_q(theta, &sc.z, &mut score);
        score.iter_mut().for_each(|v| *v *= weight);
        (RowValue { s_bar: s, h }, score)
    });
    let (vals, grads): (Vec<RowValue>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    finish_gradient(g, direction, map, GradientKind::Score, mc, &vals, &grads, p)
}

#[allow(clippy::too_many_arguments)]
fn finish_gradient(
    g: &DivergenceGenerator,
    direction: Direction,
    map: &ScalarMap,
    kind: GradientKind,
    mc: McConfig,
    vals: &[RowValue],
    grads: &[Vec<f64>],
    p: usize,
) -> Result<GradientEstimate, EstimatorError> {
    let diagnostics = row_diagnostics(vals, g, direction);
    let (grad, stderr) = reduce_rows(grads, p);
    if let Some(j) = grad.iter().position(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite(format!(
            "{kind:?} gradient coordinate {j} is {} for `{}` ({} non-finite and {} zero-ratio rows of {})",
            grad[j],
            g.name(),
            diagnostics.nonfinite_rows,
            diagnostics.zero_ratio_rows,
            mc.k
        )));
    }
    let _ = map;
    let h: Vec<f64> = vals.iter().map(|r| r.h).collect();
    Ok(GradientEstimate {
        grad,
        stderr,
        kind,
        k: mc.k,
        l: mc.l,
        objective: pairwise_sum(&h) / h.len() as f64,
        diagnostics,
    })
}

/// Per-row `d s_bar / d theta` for the importance-weighted mean log ratio.
/// Returns `None` when every ratio in the row is zero.
#[allow(clippy::too_many_arguments)]
fn row_log_ratio_grad(
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    sc: &Scratch,
    l: usize,
    weights: &mut [f64],
    out: &mut [f64],
) -> Result<Option<()>, EstimatorError> {
    let (nd, d, p) = (family.noise_dim(), family.latent_dim(), family.param_dim());
    softmax_into(&sc.s[..l], weights);
    out.iter_mut().for_each(|v| *v = 0.0);
    if weights.iter().all(|w| *w == 0.0) {
        return Ok(None);
    }
    let mut gz = vec![0.0; d];
    let mut gq = vec![0.0; d];
    let mut vj = vec![0.0; p];
    let mut sc_theta = vec![0.0; p];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let z = &sc.z[i * d..(i + 1) * d];
        let eps = &sc.eps[i * nd..(i + 1) * nd];
        if target.grad_log_joint(z, &mut gz).is_none() {
            return Err(EstimatorError::Capability(
                "model does not provide grad_log_joint_z".into(),
            ));
        }
        family.grad_z_log_q(theta, z, &mut gq);
        for (a, b) in gz.iter_mut().zip(&gq) {
            *a -= b;
        }
        family.vjp_g_theta(theta, eps, &gz, &mut vj);
        family.grad_theta_log_q(theta, z, &mut sc_theta);
        for j in 0..p {
            out[j] += w * (vj[j] - sc_theta[j]);
        }
    }
    Ok(Some(()))
}

/// Reparameterization gradient of the importance-weighted bound:
/// `E[h'(r_bar) r_bar sum_l w_l d ln r_l / d theta]` with softmax weights `w_l`.
pub fn grad_iw_reparam(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Result<GradientEstimate, EstimatorError> {
    let (est, _) = reparam_rows(g, direction, target, family, theta, mc, Objective::Bound)?;
    Ok(est)
}

/// Reparameterization gradient of the plain bound; [`grad_iw_reparam`] with `L = 1`.
pub fn grad_reparam(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    k: usize,
    seed: u64,
) -> Result<GradientEstimate, EstimatorError> {
    let mut est = grad_iw_reparam(
        g,
        direction,
        target,
        family,
        theta,
        McConfig::new(k, 1, seed),
    )?;
    est.kind = GradientKind::Reparam;
    Ok(est)
}

type RowGrad = Result<(RowValue, Vec<f64>, bool), EstimatorError>;

fn reparam_rows(
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
    objective: Objective,
) -> Result<(GradientEstimate, Vec<f64>), EstimatorError> {
    mc.validate()?;
    check_dims(target, family, theta)?;
    let map = g.bound_map(direction);
    let p = family.param_dim();
    let rows: Vec<RowGrad> = map_rows(mc.k, mc.seed, |rng, sc| {
        draw_log_ratios(target, family, theta, mc.l, rng, sc);
        let s_bar = mean_log_ratio(&sc.s);
        let mut w = vec![0.0; mc.l];
        let mut ds = vec![0.0; p];
        let live = row_log_ratio_grad(target, family, theta, sc, mc.l, &mut w, &mut ds)?.is_some();
        Ok((
            RowValue {
                s_bar,
                h: map.eval_log(s_bar),
            },
            ds,
            live,
        ))
    });
    let mut vals = Vec::with_capacity(mc.k);
    let mut ds_rows = Vec::with_capacity(mc.k);
    for r in rows {
        let (v, ds, _) = r?;
        vals.push(v);
        ds_rows.push(ds);
    }

    // (sign, scale, power): rows weighted by softmax(p s_bar), times sign scale
    let log_power = match (objective, map.log_form()) {
        (Objective::LogBound, Some(LogForm::Power { coef, power, .. })) => {
            Some((coef.signum(), power, power))
        }
        (Objective::NegLogEvidence, Some(LogForm::Power { power, .. })) => Some((-1.0, 1.0, power)),
        (Objective::NegLogEvidence, Some(LogForm::Log { .. })) => Some((-1.0, 1.0, 0.0)),
        _ => None,
    };
    if let Some((sign, scale, power)) = log_power {
        // d/dtheta sign ln mean_k r_k^p = sign sum_k softmax(p s_k) p ds_k
        let kf = mc.k as f64;
        let (w, ps, obj) = if power == 0.0 {
            let sb: Vec<f64> = vals.iter().map(|r| r.s_bar).collect();
            (
                vec![1.0 / kf; sb.len()],
                sb.clone(),
                sign * pairwise_sum(&sb) / kf,
            )
        } else {
            let ps: Vec<f64> = vals.iter().map(|r| power * r.s_bar).collect();
            let mut w = vec![0.0; ps.len()];
            softmax_into(&ps, &mut w);
            let lme = log_sum_exp(&ps) - kf.ln();
            let obj = if scale == power {
                sign * lme
            } else {
                sign * lme / power
            };
            (w, ps, obj)
        };
        let grads: Vec<Vec<f64>> = ds_rows
            .iter()
            .zip(&w)
            .map(|(ds, wk)| ds.iter().map(|d| sign * kf * wk * scale * d).collect())
            .collect();
        let mut est = finish_gradient(
            g,
            direction,
            map,
            GradientKind::IwReparam,
            mc,
            &vals,
            &grads,
            p,
        )?;
        est.objective = obj;
        if mc.l == 1 {
            est.kind = GradientKind::Reparam;
        }
        return Ok((est, ps));
    }

    let grads: Vec<Vec<f64>> = vals
        .iter()
        .zip(ds_rows)
        .map(|(v, mut ds)| {
            let slope = map.slope_log(v.s_bar);
            if v.s_bar == f64::NEG_INFINITY {
                ds.iter_mut().for_each(|d| *d = 0.0);
            } else {
                ds.iter_mut().for_each(|d| *d *= slope);
            }
            ds
        })
        .collect();
    let est = finish_gradient(
        g,
        direction,
        map,
        GradientKind::IwReparam,
        mc,
        &vals,
        &grads,
        p,
    )?;
    Ok((est, Vec::new()))
}

/// Gradient of `objective` by the chosen estimator. Score gradients ignore `L`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gradient(
    kind: GradientKind,
    objective: Objective,
    g: &DivergenceGenerator,
    direction: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Result<GradientEstimate, EstimatorError> {
    match kind {
        GradientKind::Score => grad_score(g, direction, target, family, theta, mc.k, mc.seed),
        GradientKind::Reparam => {
            let (mut e, _) = reparam_rows(
                g,
                direction,
                target,
                family,
                theta,
                McConfig { l: 1, ..mc },
                objective,
            )?;
            e.kind = GradientKind::Reparam;
            Ok(e)
        }
        GradientKind::IwReparam => {
            let (mut e, _) = reparam_rows(g, direction, target, family, theta, mc, objective)?;
            e.kind = GradientKind::IwReparam;
            Ok(e)
        }
    }
}

/// Which evidence side a bound map can serve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
    Both,
}

pub fn served_side(map: &ScalarMap) -> Option<Side> {
    let b = map.monotonicity().branches();
    match b {
        [one] => Some(match one.direction {
            Monotone::Increasing => Side::Upper,
            Monotone::Decreasing => Side::Lower,
        }),
        [a, c] if a.direction == Monotone::Decreasing && c.direction == Monotone::Increasing => {
            Some(Side::Both)
        }
        _ => None,
    }
}

/// `{t : h(t) <= v}` as an interval `[lower, upper]` for a map that is
/// monotone or decreasing-then-increasing. `p(D)` lies in it whenever
/// `v >= h(p(D))`.
pub fn evidence_interval(map: &ScalarMap, v: f64) -> Result<(f64, f64), String> {
    if v.is_nan() {
        return Err("bound value is NaN".into());
    }
    let b = map.monotonicity().branches();
    let slack = 1e-12 * (1.0 + v.abs());
    match served_side(map) {
        Some(Side::Upper) => {
            if v < map.at_zero() - slack {
                return Err(format!(
                    "bound value {v} lies below the range of the increasing map"
                ));
            }
            let up = if v >= map.at_infinity() {
                f64::INFINITY
            } else {
                map.inverse(0, v.max(map.at_zero()))
                    .unwrap_or(f64::INFINITY)
            };
            Ok((0.0, up))
        }
        Some(Side::Lower) => {
            if v < map.at_infinity() - slack {
                return Err(format!(
                    "bound value {v} lies below the range of the decreasing map"
                ));
            }
            let lo = if v >= map.at_zero() {
                0.0
            } else {
                map.inverse(0, v.max(map.at_infinity())).unwrap_or(0.0)
            };
            Ok((lo, f64::INFINITY))
        }
        Some(Side::Both) => {
            let t_min = b[0].hi;
            let h_min = map.eval(t_min);
            if v < h_min - 1e-9 * (1.0 + h_min.abs()) {
                return Err(format!(
                    "bound value {v} lies below the minimum {h_min} of the map at t = {t_min}"
                ));
            }
            let v = v.max(h_min);
            let lo = if v >= map.at_zero() {
                0.0
            } else {
                map.inverse(0, v).unwrap_or(t_min).min(t_min)
            };
            let up = if v >= map.at_infinity() {
                f64::INFINITY
            } else {
                map.inverse(1, v).unwrap_or(t_min).max(t_min)
            };
            Ok((lo, up))
        }
        None => Err("map has more than one interior turning point".into()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichSide {
    pub divergence: String,
    pub direction: Direction,
    pub bound: BoundEstimate,
    /// Evidence-scale bound.
    pub value: f64,
    pub log_value: f64,
    /// Delta-method standard error of `log_value`.
    pub log_stderr: f64,
    pub valid: bool,
    pub reason: Option<String>,
    /// The evidence-scale value is a nonlinear transform of the MC estimate.
    pub biased: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichResult {
    pub lower: SandwichSide,
    pub upper: SandwichSide,
}

impl SandwichResult {
    pub fn brackets(&self, evidence: f64) -> bool {
        self.lower.value <= evidence && evidence <= self.upper.value
    }
}

fn side_from_bound(
    g: &DivergenceGenerator,
    direction: Direction,
    bound: &BoundEstimate,
    want: Side,
) -> SandwichSide {
    let map = g.bound_map(direction);
    let mut side = SandwichSide {
        divergence: g.name().to_string(),
        direction,
        bound: bound.clone(),
        value: f64::NAN,
        log_value: f64::NAN,
        log_stderr: f64::NAN,
        valid: false,
        reason: None,
        biased: true,
    };
    let monotone = map.monotonicity().global_direction().is_some();
    if let (true, Some(lv), Some(lse)) = (monotone, bound.log_evidence, bound.log_evidence_stderr) {
        side.log_value = lv;
        side.value = lv.exp();
        side.log_stderr = lse;
        side.biased = bound.log_evidence_biased;
        side.valid = !lv.is_nan();
        if !side.valid {
            side.reason = Some("log-evidence estimate is NaN".into());
        }
    } else {
        match evidence_interval(map, bound.value) {
            Ok((lo, up)) => {
                let t = if want == Side::Lower { lo } else { up };
                side.value = t;
                side.log_value = t.ln();
                let slope = if t > 0.0 && t.is_finite() {
                    map.deriv(t).abs()
                } else {
                    0.0
                };
                side.log_stderr = if slope > 0.0 {
                    bound.stderr / slope / t
                } else {
                    f64::INFINITY
                };
                side.valid = true;
            }
            Err(reason) => side.reason = Some(reason),
        }
    }
    if bound.diagnostics.out_of_domain_rows > 0 {
        side.valid = false;
        side.reason = Some(format!(
            "{} rows outside the validity domain ({})",
            bound.diagnostics.out_of_domain_rows,
            g.domain_note().unwrap_or("restricted generator")
        ));
    }
    side
}

/// Evidence sandwich from an upper-serving and a lower-serving generator.
/// A non-monotone map (decreasing then increasing) serves both sides.
#[allow(clippy::too_many_arguments)]
pub fn sandwich(
    upper: (&DivergenceGenerator, Direction),
    lower: (&DivergenceGenerator, Direction),
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Result<SandwichResult, EstimatorError> {
    let su = served_side(upper.0.bound_map(upper.1));
    let sl = served_side(lower.0.bound_map(lower.1));
    if su == Some(Side::Lower) && sl == Some(Side::Lower)
        || su == Some(Side::Upper) && sl == Some(Side::Upper)
    {
        return Err(EstimatorError::Config(format!(
            "`{}` and `{}` both bound the evidence from the same side",
            upper.0.name(),
            lower.0.name()
        )));
    }
    if !matches!(su, Some(Side::Upper | Side::Both)) {
        return Err(EstimatorError::Config(format!(
            "`{}` ({}) cannot serve as an upper bound",
            upper.0.name(),
            upper.1.as_str()
        )));
    }
    if !matches!(sl, Some(Side::Lower | Side::Both)) {
        return Err(EstimatorError::Config(format!(
            "`{}` ({}) cannot serve as a lower bound",
            lower.0.name(),
            lower.1.as_str()
        )));
    }
    let bu = iw_bound_mc(upper.0, upper.1, target, family, theta, mc)?;
    let same = upper.0.name() == lower.0.name()
        && upper.0.params() == lower.0.params()
        && upper.1 == lower.1;
    let bl = if same {
        bu.clone()
    } else {
        iw_bound_mc(lower.0, lower.1, target, family, theta, mc)?
    };
    Ok(SandwichResult {
        upper: side_from_bound(upper.0, upper.1, &bu, Side::Upper),
        lower: side_from_bound(lower.0, lower.1, &bl, Side::Lower),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{chi_n, kl_forward, kl_reverse, total_variation};
    use crate::families::{diag_gaussian_family, DiagGaussian};
    use crate::models::{conjugate_gaussian_model, Conditioned, Dataset};

    #[test]
    fn plain_equals_iw_with_one_sample() {
        let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
        let d = Dataset::from_scalars(&[0.4]);
        let t = Conditioned::new(&m, &d);
        let f = diag_gaussian_family(1).unwrap();
        let th = DiagGaussian::params(&[0.1], &[0.9]);
        let g = chi_n(2.0).unwrap();
        let a = bound_mc(&g, Direction::Forward, &t, &f, &th, 5000, 3).unwrap();
        let b = iw_bound_mc(
            &g,
            Direction::Forward,
            &t,
            &f,
            &th,
            McConfig::new(5000, 1, 3),
        )
        .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let ga = grad_reparam(&g, Direction::Forward, &t, &f, &th, 5000, 3).unwrap();
        let gb = grad_iw_reparam(
            &g,
            Direction::Forward,
            &t,
            &f,
            &th,
            McConfig::new(5000, 1, 3),
        )
        .unwrap();
        for (x, y) in ga.grad.iter().zip(&gb.grad) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn exact_posterior_gives_constant_ratio() {
        let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
        let d = Dataset::from_scalars(&[0.0]);
        let t = Conditioned::new(&m, &d);
        let f = diag_gaussian_family(1).unwrap();
        let th = DiagGaussian::params(&[0.0], &[0.5f64.sqrt()]);
        let b = bound_mc(&kl_reverse(), Direction::Reverse, &t, &f, &th, 1000, 1).unwrap();
        assert!((b.value - 1.265_512_123_484_645_4).abs() < 1e-12);
        assert!(b.stderr < 1e-12);
        let tv = bound_mc(&total_variation(), Direction::Reverse, &t, &f, &th, 1000, 1).unwrap();
        assert!((tv.value - (1.0 - 0.282_094_791_773_878_1)).abs() < 1e-12);
    }

    #[test]
    fn interval_rules() {
        let tv = total_variation();
        let (lo, up) = evidence_interval(tv.dual(), 0.3).unwrap();
        assert!((lo - 0.7).abs() < 1e-15 && (up - 1.3).abs() < 1e-15);
        assert_eq!(evidence_interval(tv.dual(), 1.5).unwrap().0, 0.0);
        // t ln t: upper is max(e^W(v), 1/e)
        let eubo = kl_forward();
        let (lo, up) = evidence_interval(eubo.dual(), -0.2).unwrap();
        let w = crate::divergence::lambert_w(-0.2).unwrap();
        assert!((up - (-0.2 / w)).abs() < 1e-12);
        assert!(lo > 0.0 && lo < (-1f64).exp());
        let (lo, _) = evidence_interval(eubo.dual(), 0.4).unwrap();
        assert_eq!(lo, 0.0);
        assert!(evidence_interval(eubo.dual(), -0.5).is_err());
    }

    #[test]
    fn sandwich_rejects_same_side() {
        let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
        let d = Dataset::from_scalars(&[0.0]);
        let t = Conditioned::new(&m, &d);
        let f = diag_gaussian_family(1).unwrap();
        let th = DiagGaussian::params(&[0.0], &[1.0]);
        let kl = kl_reverse();
        let chi = chi_n(2.0).unwrap();
        let r = sandwich(
            (&kl, Direction::Reverse),
            (&chi, Direction::Reverse),
            &t,
            &f,
            &th,
            McConfig::new(100, 1, 0),
        );
        assert!(matches!(r, Err(EstimatorError::Config(_))));
        let ok = sandwich(
            (&chi, Direction::Forward),
            (&kl, Direction::Reverse),
            &t,
            &f,
            &th,
            McConfig::new(20_000, 1, 0),
        )
        .unwrap();
        assert!(ok.lower.valid && ok.upper.valid);
        assert!(ok.lower.value <= ok.upper.value);
    }
}
