//! Mean-field coordinate updates `q(z) = prod_j q_j(z_j)`.
//!
//! For `f` in F1 the reverse bound is minimized in `q_j` by
//! `q_j ∝ f*^{-1}(E_{q_-j}[f*(p / q_-j)])`; for `f` in F0 the forward bound is
//! minimized by `q_j ∝ f^{-1}(E_{q_-j}[f(p / q_-j)])`. Both are evaluated on a
//! per-factor grid and renormalized by the trapezoid rule.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{DivergenceGenerator, HomogeneityTag, LogForm, Monotone, ScalarMap};
use crate::models::LogJoint;
use crate::stats::{log_sum_exp, pairwise_sum, stream_rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const HERMITE_NODES: usize = 48;
/// Grid edges must sit this far (in log density) below the peak.
const EDGE_LOG_DROP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("`{name}` has no mean-field rule: updates need an F0 or F1 generator with an invertible map")]
    Unsupported { name: String },
    #[error("factor {factor}: update is not normalizable ({detail})")]
    NotNormalizable { factor: usize, detail: String },
    #[error("factor {factor}: inner expectation outside the invertible range at z = {points:?}")]
    OutOfRange { factor: usize, points: Vec<f64> },
    #[error("invalid mean-field input: {0}")]
    Invalid(String),
}

/// One factor `q_j`: a Gaussian or a normalized log density on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Factor {
    Parametric {
        mean: f64,
        var: f64,
    },
    Gridded {
        nodes: Vec<f64>,
        log_density: Vec<f64>,
    },
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i + 1 == n { h / 2.0 } else { h })
        .collect()
}

fn spacing(nodes: &[f64]) -> f64 {
    (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64
}

impl Factor {
    pub fn mean(&self) -> f64 {
        match self {
            Factor::Parametric { mean, .. } => *mean,
            Factor::Gridded { nodes, log_density } => {
                let w = trapezoid_weights(nodes.len(), spacing(nodes));
                let t: Vec<f64> = nodes
                    .iter()
                    .zip(log_density)
                    .zip(&w)
                    .map(|((z, l), w)| z * l.exp() * w)
                    .collect();
                pairwise_sum(&t)
            }
        }
    }

    pub fn var(&self) -> f64 {
        match self {
            Factor::Parametric { var, .. } => *var,
            Factor::Gridded { nodes, log_density } => {
                let m = self.mean();
                let w = trapezoid_weights(nodes.len(), spacing(nodes));
                let t: Vec<f64> = nodes
                    .iter()
                    .zip(log_density)
                    .zip(&w)
                    .map(|((z, l), w)| (z - m) * (z - m) * l.exp() * w)
                    .collect();
                pairwise_sum(&t)
            }
        }
    }

    /// Trapezoid mass of a gridded factor; 1 for a Gaussian.
    pub fn mass(&self) -> f64 {
        match self {
            Factor::Parametric { .. } => 1.0,
            Factor::Gridded { nodes, log_density } => {
                let w = trapezoid_weights(nodes.len(), spacing(nodes));
                let t: Vec<f64> = log_density
                    .iter()
                    .zip(&w)
                    .map(|(l, w)| l.exp() * w)
                    .collect();
                pairwise_sum(&t)
            }
        }
    }

    pub fn log_density(&self, z: f64) -> f64 {
        match self {
            Factor::Parametric { mean, var } => {
                -0.5 * (LN_2PI + var.ln() + (z - mean).powi(2) / var)
            }
            Factor::Gridded { nodes, log_density } => {
                let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
                if !(lo..=hi).contains(&z) {
                    return f64::NEG_INFINITY;
                }
                let u = (z - lo) / spacing(nodes);
                let i = (u.floor() as usize).min(nodes.len() - 2);
                let a = u - i as f64;
                let (l0, l1) = (log_density[i], log_density[i + 1]);
                if l0 == f64::NEG_INFINITY || l1 == f64::NEG_INFINITY {
                    return if a < 0.5 { l0 } else { l1 };
                }
                (1.0 - a) * l0 + a * l1
            }
        }
    }

    /// Density on `n` points over `mean +- width sd`, for export.
    pub fn table(&self, n: usize, width: f64) -> Vec<(f64, f64)> {
        match self {
            Factor::Gridded { nodes, log_density } => nodes
                .iter()
                .zip(log_density)
                .map(|(z, l)| (*z, l.exp()))
                .collect(),
            Factor::Parametric { .. } => {
                let (m, s) = (self.mean(), self.var().sqrt());
                crate::stats::linspace(m - width * s, m + width * s, n)
                    .into_iter()
                    .map(|z| (z, self.log_density(z).exp()))
                    .collect()
            }
        }
    }

    /// Normalized quadrature rule for `E_{q_j}[.]`: nodes, log weights, log density.
    fn rule(&self, stride: usize) -> Rule {
        match self {
            Factor::Parametric { mean, var } => {
                let (x, w) = gauss_hermite(HERMITE_NODES);
                let nodes: Vec<f64> = x.iter().map(|x| mean + (2.0 * var).sqrt() * x).collect();
                let log_q = nodes.iter().map(|&z| self.log_density(z)).collect();
                let log_w = w
                    .iter()
                    .map(|w| (w / std::f64::consts::PI.sqrt()).ln())
                    .collect();
                Rule {
                    nodes,
                    log_w,
                    log_q,
                }
            }
            Factor::Gridded { nodes, log_density } => {
                let idx: Vec<usize> = (0..nodes.len()).step_by(stride.max(1)).collect();
                let h = spacing(nodes) * stride.max(1) as f64;
                let tw = trapezoid_weights(idx.len(), h);
                let raw: Vec<f64> = idx
                    .iter()
                    .zip(&tw)
                    .map(|(&i, w)| log_density[i] + w.ln())
                    .collect();
                let norm = log_sum_exp(&raw);
                Rule {
                    nodes: idx.iter().map(|&i| nodes[i]).collect(),
                    log_w: raw.iter().map(|r| r - norm).collect(),
                    log_q: idx.iter().map(|&i| log_density[i]).collect(),
                }
            }
        }
    }

    fn sample(&self, rng: &mut crate::RngStream) -> f64 {
        match self {
            Factor::Parametric { mean, var } => {
                let e: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * e
            }
            Factor::Gridded { nodes, log_density } => {
                let w = trapezoid_weights(nodes.len(), spacing(nodes));
                let mut cdf = Vec::with_capacity(nodes.len());
                let mut acc = 0.0;
                for (l, w) in log_density.iter().zip(&w) {
                    acc += l.exp() * w;
                    cdf.push(acc);
                }
                let u = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|c| *c < u).min(nodes.len() - 1);
                let h = spacing(nodes);
                nodes[i] - h / 2.0 + h * rng.random::<f64>()
            }
        }
    }
}

struct Rule {
    nodes: Vec<f64>,
    log_w: Vec<f64>,
    log_q: Vec<f64>,
}

/// Nodes and weights of `int e^{-x^2} g(x) dx` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanFieldConfig {
    pub max_sweeps: usize,
    pub tol: f64,
    pub grid_points: usize,
    /// Half-width of each factor grid in standard deviations.
    pub grid_width: f64,
    /// Every `inner_stride`-th grid node is used for inner expectations.
    pub inner_stride: usize,
    /// Monte Carlo samples for inner expectations when `J > 3`.
    pub mc_samples: usize,
    pub seed: u64,
    /// Use the closed-form Gaussian CAVI update for KL on Gaussian targets.
    pub closed_form: bool,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            max_sweeps: 50,
            tol: 1e-10,
            grid_points: 512,
            grid_width: 8.0,
            inner_stride: 4,
            mc_samples: 10_000,
            seed: 0,
            closed_form: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub factors: Vec<Factor>,
    pub sweeps: usize,
    /// Bound after initialization and after every full sweep.
    pub bound_trace: Vec<f64>,
    pub converged: bool,
    /// Grid points where the inverse map was clamped to zero density.
    pub clamped_points: usize,
}

impl MeanFieldState {
    pub fn new(factors: Vec<Factor>) -> Self {
        MeanFieldState {
            factors,
            sweeps: 0,
            bound_trace: Vec::new(),
            converged: false,
            clamped_points: 0,
        }
    }

    pub fn gaussian(means: &[f64], vars: &[f64]) -> Self {
        Self::new(
            means
                .iter()
                .zip(vars)
                .map(|(&mean, &var)| Factor::Parametric { mean, var })
                .collect(),
        )
    }

    pub fn means(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::mean).collect()
    }

    pub fn vars(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::var).collect()
    }
}

/// The bound side and map used by a generator's mean-field rule.
fn rule_map(g: &DivergenceGenerator) -> Result<&ScalarMap, MeanFieldError> {
    let map = match g.homogeneity().tag {
        HomogeneityTag::F1 => g.dual(),
        HomogeneityTag::F0 => g.primal(),
        HomogeneityTag::Unclassified => {
            return Err(MeanFieldError::Unsupported {
                name: g.name().to_string(),
            })
        }
    };
    if map.log_form().is_none() && map.monotonicity().global_direction().is_none() {
        return Err(MeanFieldError::Unsupported {
            name: g.name().to_string(),
        });
    }
    Ok(map)
}

/// Points `(z_-j, ln W, ln q_-j)` for expectations over the other factors.
fn inner_points(
    state: &MeanFieldState,
    j: usize,
    cfg: &MeanFieldConfig,
    salt: u64,
) -> Vec<(Vec<f64>, f64, f64)> {
    let others: Vec<usize> = (0..state.factors.len()).filter(|&k| k != j).collect();
    if others.len() > 2 {
        let mut rng = stream_rng(
            cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            j as u64,
        );
        let lw = -(cfg.mc_samples as f64).ln();
        return (0..cfg.mc_samples)
            .map(|_| {
                let z: Vec<f64> = others
                    .iter()
                    .map(|&k| state.factors[k].sample(&mut rng))
                    .collect();
                let lq = others
                    .iter()
                    .zip(&z)
                    .map(|(&k, &zk)| state.factors[k].log_density(zk))
                    .sum();
                (z, lw, lq)
            })
            .collect();
    }
    let rules: Vec<Rule> = others
        .iter()
        .map(|&k| state.factors[k].rule(cfg.inner_stride))
        .collect();
    let mut pts = vec![(Vec::new(), 0.0, 0.0)];
    for r in &rules {
        let mut next = Vec::with_capacity(pts.len() * r.nodes.len());
        for (z, lw, lq) in &pts {
            for i in 0..r.nodes.len() {
                if r.log_w[i] == f64::NEG_INFINITY {
                    continue;
                }
                let mut zz = z.clone();
                zz.push(r.nodes[i]);
                next.push((zz, lw + r.log_w[i], lq + r.log_q[i]));
            }
        }
        pts = next;
    }
    pts
}

fn full_point(j: usize, zj: f64, rest: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(rest.len() + 1);
    z.extend_from_slice(&rest[..j]);
    z.push(zj);
    z.extend_from_slice(&rest[j..]);
    z
}

enum Inner {
    Log(f64),
    Clamped,
    OutOfRange,
}

/// `ln m_j(z_j) = ln h^{-1}(E_{q_-j}[h(p / q_-j)])`.
fn log_m(
    map: &ScalarMap,
    target: &dyn LogJoint,
    j: usize,
    zj: f64,
    pts: &[(Vec<f64>, f64, f64)],
) -> Inner {
    let s: Vec<(f64, f64)> = pts
        .iter()
        .map(|(rest, lw, lq)| {
            let lp = target.log_joint(&full_point(j, zj, rest));
            let s = if lp == f64::NEG_INFINITY { lp } else { lp - lq };
            (*lw, s)
        })
        .collect();
    match map.log_form() {
        Some(LogForm::Log { .. }) => {
            let t: Vec<f64> = s.iter().map(|(lw, s)| lw.exp() * s).collect();
            Inner::Log(pairwise_sum(&t))
        }
        Some(LogForm::Power { power, .. }) => {
            let t: Vec<f64> = s.iter().map(|(lw, s)| lw + power * s).collect();
            Inner::Log(log_sum_exp(&t) / power)
        }
        None => {
            let t: Vec<f64> = s
                .iter()
                .map(|(lw, s)| lw.exp() * map.eval_log(*s))
                .collect();
            let y = pairwise_sum(&t);
            let dir = map.monotonicity().global_direction();
            let (near_zero, near_inf) = match dir {
                Some(Monotone::Decreasing) => (y >= map.at_zero(), y <= map.at_infinity()),
                _ => (y <= map.at_zero(), y >= map.at_infinity()),
            };
            if near_zero {
                Inner::Clamped
            } else if near_inf {
                Inner::OutOfRange
            } else {
                match map.inverse(0, y) {
                    Some(t) => Inner::Log(t.ln()),
                    None => Inner::OutOfRange,
                }
            }
        }
    }
}

/// Evaluates a rule on a grid around `(center, sd)`, widening or narrowing
/// until the normalized density is resolved with negligible edge mass.
fn grid_update(
    j: usize,
    center: f64,
    sd: f64,
    cfg: &MeanFieldConfig,
    eval: &(dyn Fn(f64) -> Inner + Sync),
) -> Result<(Factor, usize), MeanFieldError> {
    let (mut c, mut s) = (center, sd);
    for _ in 0..8 {
        if !(s > 0.0 && s.is_finite() && c.is_finite()) {
            return Err(MeanFieldError::NotNormalizable {
                factor: j,
                detail: format!("grid center {c}, scale {s}"),
            });
        }
        let nodes = crate::stats::linspace(
            c - cfg.grid_width * s,
            c + cfg.grid_width * s,
            cfg.grid_points,
        );
        let vals: Vec<Inner> = nodes.par_iter().map(|&z| eval(z)).collect();
        let bad: Vec<f64> = nodes
            .iter()
            .zip(&vals)
            .filter(|(_, v)| matches!(v, Inner::OutOfRange))
            .map(|(z, _)| *z)
            .take(8)
            .collect();
        if !bad.is_empty() {
            return Err(MeanFieldError::OutOfRange {
                factor: j,
                points: bad,
            });
        }
        let clamped = vals.iter().filter(|v| matches!(v, Inner::Clamped)).count();
        let mut logd: Vec<f64> = vals
            .iter()
            .map(|v| match v {
                Inner::Log(l) => *l,
                _ => f64::NEG_INFINITY,
            })
            .collect();
        if logd.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(MeanFieldError::NotNormalizable {
                factor: j,
                detail: "inner expectation diverges".into(),
            });
        }
        let peak = logd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return Err(MeanFieldError::NotNormalizable {
                factor: j,
                detail: "zero density on the whole grid".into(),
            });
        }
        let w = trapezoid_weights(nodes.len(), spacing(&nodes));
        let terms: Vec<f64> = logd
            .iter()
            .zip(&w)
            .map(|(l, w)| (l - peak).exp() * w)
            .collect();
        let log_norm = peak + pairwise_sum(&terms).ln();
        logd.iter_mut().for_each(|l| *l -= log_norm);
        let f = Factor::Gridded {
            nodes,
            log_density: logd,
        };
        let (m2, s2) = (f.mean(), f.var().sqrt());
        let Factor::Gridded { log_density, .. } = &f else {
            unreachable!()
        };
        let edge = log_density[0].max(log_density[log_density.len() - 1]);
        let resolved = edge <= peak - log_norm - EDGE_LOG_DROP;
        let fits = (m2 - c).abs() <= 0.5 * s2 && s2 >= 0.5 * s && s2 <= 1.5 * s;
        if resolved && fits {
            return Ok((f, clamped));
        }
        c = m2;
        s = if resolved { s2 } else { 2.0 * s.max(s2) };
    }
    Err(MeanFieldError::NotNormalizable {
        factor: j,
        detail: "grid did not settle after 8 refits".into(),
    })
}

fn check_index(
    state: &MeanFieldState,
    j: usize,
    target: &dyn LogJoint,
) -> Result<(), MeanFieldError> {
    if state.factors.len() != target.dim() {
        return Err(MeanFieldError::Invalid(format!(
            "{} factors for a {}-dimensional target",
            state.factors.len(),
            target.dim()
        )));
    }
    if j >= state.factors.len() {
        return Err(MeanFieldError::Invalid(format!(
            "factor index {j} out of range"
        )));
    }
    Ok(())
}

/// `q_j ∝ exp(E_{q_-j}[ln p(z, D)])`. Closed form for Gaussian targets, gridded otherwise.
pub fn cavi_update_kl(
    state: &MeanFieldState,
    j: usize,
    target: &dyn LogJoint,
    cfg: &MeanFieldConfig,
) -> Result<Factor, MeanFieldError> {
    check_index(state, j, target)?;
    if let Some(gf) = target.gaussian_form() {
        let lam = &gf.precision;
        let mut shift = 0.0;
        for (k, f) in state.factors.iter().enumerate() {
            if k != j {
                shift += lam[(j, k)] * (f.mean() - gf.mean[k]);
            }
        }
        return Ok(Factor::Parametric {
            mean: gf.mean[j] - shift / lam[(j, j)],
            var: 1.0 / lam[(j, j)],
        });
    }
    let pts = inner_points(state, j, cfg, state.sweeps as u64);
    let eval = |z: f64| {
        let t: Vec<f64> = pts
            .iter()
            .map(|(rest, lw, _)| lw.exp() * target.log_joint(&full_point(j, z, rest)))
            .collect();
        Inner::Log(pairwise_sum(&t))
    };
    let f = &state.factors[j];
    grid_update(j, f.mean(), f.var().sqrt(), cfg, &eval).map(|r| r.0)
}

fn rule_update(
    state: &mut MeanFieldState,
    j: usize,
    target: &dyn LogJoint,
    map: &ScalarMap,
    cfg: &MeanFieldConfig,
) -> Result<Factor, MeanFieldError> {
    check_index(state, j, target)?;
    let pts = inner_points(state, j, cfg, state.sweeps as u64);
    let eval = |z: f64| log_m(map, target, j, z, &pts);
    let f = &state.factors[j];
    let (out, clamped) = grid_update(j, f.mean(), f.var().sqrt(), cfg, &eval)?;
    state.clamped_points += clamped;
    Ok(out)
}

/// Update for `f` in F1: `q_j ∝ f*^{-1}(E_{q_-j}[f*(p / q_-j)])`.
pub fn update_rule_f1(
    state: &mut MeanFieldState,
    j: usize,
    target: &dyn LogJoint,
    g: &DivergenceGenerator,
    cfg: &MeanFieldConfig,
) -> Result<Factor, MeanFieldError> {
    if g.homogeneity().tag != HomogeneityTag::F1 {
        return Err(MeanFieldError::Invalid(format!(
            "`{}` is not in F1",
            g.name()
        )));
    }
    let map = rule_map(g)?;
    rule_update(state, j, target, map, cfg)
}

/// Update for `f` in F0: `q_j ∝ f^{-1}(E_{q_-j}[f(p / q_-j)])`.
pub fn update_rule_f0(
    state: &mut MeanFieldState,
    j: usize,
    target: &dyn LogJoint,
    g: &DivergenceGenerator,
    cfg: &MeanFieldConfig,
) -> Result<Factor, MeanFieldError> {
    if g.homogeneity().tag != HomogeneityTag::F0 {
        return Err(MeanFieldError::Invalid(format!(
            "`{}` is not in F0",
            g.name()
        )));
    }
    let map = rule_map(g)?;
    rule_update(state, j, target, map, cfg)
}

/// The bound minimized by the generator's rule: `E_q[f*(p/q)]` for F1,
/// `E_q[f(p/q)]` for F0. Product quadrature for `J <= 3`, Monte Carlo otherwise.
pub fn meanfield_bound(
    state: &MeanFieldState,
    target: &dyn LogJoint,
    g: &DivergenceGenerator,
    cfg: &MeanFieldConfig,
) -> Result<f64, MeanFieldError> {
    let map = rule_map(g)?;
    let jn = state.factors.len();
    if jn != target.dim() {
        return Err(MeanFieldError::Invalid(format!(
            "{} factors for a {}-dimensional target",
            jn,
            target.dim()
        )));
    }
    let pts: Vec<(Vec<f64>, f64, f64)> = if jn > 3 {
        let mut rng = stream_rng(cfg.seed ^ 0xb0b0, 0);
        let lw = -(cfg.mc_samples as f64).ln();
        (0..cfg.mc_samples)
            .map(|_| {
                let z: Vec<f64> = state.factors.iter().map(|f| f.sample(&mut rng)).collect();
                let lq = state
                    .factors
                    .iter()
                    .zip(&z)
                    .map(|(f, &zk)| f.log_density(zk))
                    .sum();
                (z, lw, lq)
            })
            .collect()
    } else {
        let rules: Vec<Rule> = state
            .factors
            .iter()
            .map(|f| f.rule(cfg.inner_stride))
            .collect();
        let mut pts = vec![(Vec::new(), 0.0, 0.0)];
        for r in &rules {
            let mut next = Vec::with_capacity(pts.len() * r.nodes.len());
            for (z, lw, lq) in &pts {
                for i in 0..r.nodes.len() {
                    if r.log_w[i] == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut zz: Vec<f64> = z.clone();
                    zz.push(r.nodes[i]);
                    next.push((zz, lw + r.log_w[i], lq + r.log_q[i]));
                }
            }
            pts = next;
        }
        pts
    };
    let terms: Vec<f64> = pts
        .par_iter()
        .map(|(z, lw, lq)| {
            let lp = target.log_joint(z);
            let s = if lp == f64::NEG_INFINITY { lp } else { lp - lq };
            lw.exp() * map.eval_log(s)
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Sweeps `j = 1..J` until the bound changes by less than `tol` or `max_sweeps` is reached.
pub fn run_meanfield(
    target: &dyn LogJoint,
    init: MeanFieldState,
    g: &DivergenceGenerator,
    cfg: &MeanFieldConfig,
) -> Result<MeanFieldState, MeanFieldError> {
    rule_map(g)?;
    let mut state = init;
    check_index(&state, 0, target)?;
    let closed = cfg.closed_form
        && target.gaussian_form().is_some()
        && matches!(g.name(), "kl_reverse" | "kl_forward");
    let mut prev = meanfield_bound(&state, target, g, cfg)?;
    state.bound_trace.push(prev);
    while state.sweeps < cfg.max_sweeps {
        for j in 0..state.factors.len() {
            let f = if closed {
                cavi_update_kl(&state, j, target, cfg)?
            } else {
                match g.homogeneity().tag {
                    HomogeneityTag::F1 => update_rule_f1(&mut state, j, target, g, cfg)?,
                    _ => update_rule_f0(&mut state, j, target, g, cfg)?,
                }
            };
            state.factors[j] = f;
        }
        state.sweeps += 1;
        let b = meanfield_bound(&state, target, g, cfg)?;
        state.bound_trace.push(b);
        let done = (b - prev).abs() < cfg.tol;
        prev = b;
        if done {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}
