//! Brute-force reference values: adaptive Gauss-Kronrod quadrature and naive
//! prior-sampling Monte Carlo for the evidence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{scalar, Direction, DivergenceGenerator, Scalar};
use crate::models::{Conditioned, Dataset, LatentModel, LogJoint};
use crate::stats::{mean_stderr, stream_rng, CHUNK_ROWS};
use crate::RngStream;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("divergence undefined: {0}")]
    DivergenceUndefined(String),
    #[error("integrand is not finite at z = {0}")]
    NonFinite(f64),
    #[error("quadrature supports at most 2 latent dimensions, model has {0}; use evidence_mc")]
    Unsupported(usize),
    #[error("model `{0}` has no prior sampler")]
    NoSampler(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Integral estimate. The integral equals `value * exp(log_scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub nodes: usize,
    pub log_scale: f64,
}

impl QuadratureResult {
    pub fn scaled_value(&self) -> f64 {
        self.value * self.log_scale.exp()
    }

    pub fn log_value(&self) -> f64 {
        self.value.ln() + self.log_scale
    }

    pub fn scaled_error(&self) -> f64 {
        self.error * self.log_scale.exp()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<Piece, OracleError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = 0.0;
    let mut gauss = 0.0;
    for i in 0..8 {
        let pts: &[f64] = if i == 7 {
            &[c]
        } else {
            &[c - h * XGK[i], c + h * XGK[i]]
        };
        for &x in pts {
            let v = f(x);
            if !v.is_finite() {
                return Err(OracleError::NonFinite(x));
            }
            kron += WGK[i] * v;
            if i % 2 == 1 {
                gauss += WG[i / 2] * v;
            }
        }
    }
    Ok(Piece {
        a,
        b,
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
    })
}

/// Adaptive G7-K15 quadrature of `f` over `[a, b]`, starting from `panels`
/// equal pieces and bisecting the worst piece until the summed error estimate
/// drops below `abs_tol`.
pub fn integrate(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    panels: usize,
) -> Result<QuadratureResult, OracleError> {
    integrate_breaks(f, &[a, b], abs_tol, panels)
}

/// As [`integrate`], over consecutive intervals of the sorted `breaks`.
pub fn integrate_breaks(
    f: &dyn Fn(f64) -> f64,
    breaks: &[f64],
    abs_tol: f64,
    panels: usize,
) -> Result<QuadratureResult, OracleError> {
    const MAX_PIECES: usize = 20_000;
    let panels = panels.max(1);
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let step = (hi - lo) / panels as f64;
        for i in 0..panels {
            let a = lo + step * i as f64;
            let b = if i + 1 == panels { hi } else { a + step };
            heap.push(gk15(f, a, b)?);
        }
    }
    if heap.is_empty() {
        return Ok(QuadratureResult {
            value: 0.0,
            error: 0.0,
            nodes: 0,
            log_scale: 0.0,
        });
    }
    let total_err = |h: &BinaryHeap<Piece>| h.iter().map(|p| p.error).sum::<f64>();
    while total_err(&heap) > abs_tol && heap.len() < MAX_PIECES {
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        heap.push(gk15(f, worst.a, mid)?);
        heap.push(gk15(f, mid, worst.b)?);
    }
    let mut pieces = heap.into_vec();
    pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
    let values: Vec<f64> = pieces.iter().map(|p| p.value).collect();
    Ok(QuadratureResult {
        value: crate::stats::pairwise_sum(&values),
        error: pieces.iter().map(|p| p.error).sum(),
        nodes: pieces.len() * 15,
        log_scale: 0.0,
    })
}

type Sampler = Arc<dyn Fn(&mut RngStream) -> f64 + Send + Sync>;

/// A one-dimensional density given by its log.
#[derive(Clone)]
pub struct Density1D {
    log_density: Scalar,
    support: (f64, f64),
    window: (f64, f64),
    sampler: Option<Sampler>,
}

impl std::fmt::Debug for Density1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Density1D")
            .field("support", &self.support)
            .field("window", &self.window)
            .finish()
    }
}

impl Density1D {
    /// `window` must be a finite interval holding essentially all the mass.
    pub fn new(log_density: Scalar, support: (f64, f64), window: (f64, f64)) -> Self {
        Density1D {
            log_density,
            support,
            window,
            sampler: None,
        }
    }

    pub fn gaussian(mean: f64, sd: f64) -> Self {
        let lp = scalar(move |z: f64| {
            let d = (z - mean) / sd;
            -0.5 * d * d - sd.ln() - 0.5 * (2.0 * PI).ln()
        });
        Density1D {
            log_density: lp,
            support: (f64::NEG_INFINITY, f64::INFINITY),
            window: (mean - 12.0 * sd, mean + 12.0 * sd),
            sampler: Some(Arc::new(move |rng: &mut RngStream| {
                let e: f64 = StandardNormal.sample(rng);
                mean + sd * e
            })),
        }
    }

    pub fn uniform(a: f64, b: f64) -> Self {
        let ld = -(b - a).ln();
        Density1D {
            log_density: scalar(move |z: f64| {
                if (a..=b).contains(&z) {
                    ld
                } else {
                    f64::NEG_INFINITY
                }
            }),
            support: (a, b),
            window: (a, b),
            sampler: Some(Arc::new(move |rng: &mut RngStream| {
                a + (b - a) * rng.random::<f64>()
            })),
        }
    }

    pub fn log_density(&self, z: f64) -> f64 {
        (self.log_density)(z)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn sample(&self, rng: &mut RngStream) -> Option<f64> {
        self.sampler.as_ref().map(|s| s(rng))
    }

    pub fn total_mass(&self) -> Result<QuadratureResult, OracleError> {
        let f = |z: f64| self.log_density(z).exp();
        integrate(&f, self.window.0, self.window.1, 1e-10, 64)
    }
}

/// Reverse: `int p f(q/p) dz`; forward: `int q f(p/q) dz`. Post-transforms
/// (Renyi) are not applied.
pub fn divergence_quadrature(
    g: &DivergenceGenerator,
    q: &Density1D,
    p: &Density1D,
    direction: Direction,
) -> Result<QuadratureResult, OracleError> {
    let (num, den) = match direction {
        Direction::Reverse => (q, p),
        Direction::Forward => (p, q),
    };
    let f = g.primal();
    let dual = g.dual();
    let integrand = |z: f64| {
        let (ln, ld) = (num.log_density(z), den.log_density(z));
        match (ln == f64::NEG_INFINITY, ld == f64::NEG_INFINITY) {
            (true, true) => 0.0,
            // den f(num/den) = num f*(den/num) -> num f*(0+)
            (false, true) => ln.exp() * dual.at_zero(),
            (true, false) => ld.exp() * f.at_zero(),
            (false, false) => ld.exp() * f.eval_log(ln - ld),
        }
    };
    let lo = num.window.0.min(den.window.0);
    let hi = num.window.1.max(den.window.1);
    let mut breaks = vec![lo, hi];
    for s in [num.support.0, num.support.1, den.support.0, den.support.1] {
        if s > lo && s < hi {
            breaks.push(s);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    integrate_breaks(&integrand, &breaks, 1e-10, 64).map_err(|e| match e {
        OracleError::NonFinite(z) => OracleError::DivergenceUndefined(format!(
            "`{}` integrand is not finite at z = {z} (support mismatch)",
            g.name()
        )),
        other => other,
    })
}

/// Log-joint threshold below the peak that still counts toward the evidence.
const LOG_CUTOFF: f64 = 80.0;

fn peak_box(
    lj: &dyn Fn(&[f64]) -> f64,
    window: &[(f64, f64)],
    n: usize,
) -> Option<(f64, Vec<(f64, f64)>)> {
    let d = window.len();
    let grids: Vec<Vec<f64>> = window
        .iter()
        .map(|&(a, b)| crate::stats::linspace(a, b, n))
        .collect();
    let total = n.pow(d as u32);
    let mut vals = Vec::with_capacity(total);
    let mut z = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for j in 0..d {
            z[j] = grids[j][r % n];
            r /= n;
        }
        vals.push(lj(&z));
    }
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let mut lo = vec![usize::MAX; d];
    let mut hi = vec![0usize; d];
    for (idx, v) in vals.iter().enumerate() {
        if *v > m - LOG_CUTOFF {
            let mut r = idx;
            for j in 0..d {
                let k = r % n;
                lo[j] = lo[j].min(k);
                hi[j] = hi[j].max(k);
                r /= n;
            }
        }
    }
    let bx = (0..d)
        .map(|j| {
            let a = grids[j][lo[j].saturating_sub(1)];
            let b = grids[j][(hi[j] + 1).min(n - 1)];
            (a, b)
        })
        .collect();
    Some((m, bx))
}

/// `p(D) = int p(z) prod p(x_n | z) dz` over the prior window, for latent dimension 1 or 2.
/// The integrand is shifted by its peak log value, reported as `log_scale`.
pub fn evidence_quadrature(
    model: &dyn LatentModel,
    data: &Dataset,
) -> Result<QuadratureResult, OracleError> {
    let target = Conditioned::new(model, data);
    let window = model.prior_window();
    match model.latent_dim() {
        1 => {
            let lj = |z: &[f64]| target.log_joint(z);
            let Some((m, bx)) = peak_box(&lj, &window, 4001) else {
                return Ok(QuadratureResult {
                    value: 0.0,
                    error: 0.0,
                    nodes: 0,
                    log_scale: 0.0,
                });
            };
            let f = |z: f64| {
                let v = target.log_joint(&[z]);
                if v == f64::NEG_INFINITY {
                    0.0
                } else {
                    (v - m).exp()
                }
            };
            let mut r = integrate(&f, bx[0].0, bx[0].1, 1e-10, 64)?;
            r.log_scale = m;
            Ok(r)
        }
        2 => {
            let lj = |z: &[f64]| target.log_joint(z);
            let Some((m, bx)) = peak_box(&lj, &window, 201) else {
                return Ok(QuadratureResult {
                    value: 0.0,
                    error: 0.0,
                    nodes: 0,
                    log_scale: 0.0,
                });
            };
            let nodes = std::cell::Cell::new(0usize);
            let outer = |z0: f64| {
                let inner = |z1: f64| {
                    let v = target.log_joint(&[z0, z1]);
                    if v == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (v - m).exp()
                    }
                };
                match integrate(&inner, bx[1].0, bx[1].1, 1e-12, 16) {
                    Ok(r) => {
                        nodes.set(nodes.get() + r.nodes);
                        r.value
                    }
                    Err(_) => f64::NAN,
                }
            };
            let mut r = integrate(&outer, bx[0].0, bx[0].1, 1e-10, 16)?;
            r.nodes += nodes.get();
            r.log_scale = m;
            Ok(r)
        }
        d => Err(OracleError::Unsupported(d)),
    }
}

/// Naive evidence estimate `(1/K) sum_k p(D | z_k)` with `z_k` from the prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub log_value: f64,
    /// Delta-method standard error of `log_value`.
    pub log_stderr: f64,
    pub k: usize,
}

pub fn evidence_mc(
    model: &dyn LatentModel,
    data: &Dataset,
    k: usize,
    seed: u64,
) -> Result<EvidenceEstimate, OracleError> {
    if k == 0 {
        return Err(OracleError::InvalidArgument("K must be at least 1".into()));
    }
    let target = Conditioned::new(model, data);
    let dim = model.latent_dim();
    let chunks = k.div_ceil(CHUNK_ROWS);
    let per_chunk: Vec<Option<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK_ROWS.min(k - c * CHUNK_ROWS);
            let mut rng = stream_rng(seed, c as u64);
            let mut z = vec![0.0; dim];
            let mut out = Vec::with_capacity(rows);
            for _ in 0..rows {
                if !model.sample_prior(&mut rng, &mut z) {
                    return None;
                }
                out.push(target.log_likelihood(&z));
            }
            Some(out)
        })
        .collect();
    let mut logw = Vec::with_capacity(k);
    for c in per_chunk {
        logw.extend(c.ok_or_else(|| OracleError::NoSampler(model.name().to_string()))?);
    }
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(EvidenceEstimate {
            value: 0.0,
            stderr: 0.0,
            log_value: f64::NEG_INFINITY,
            log_stderr: f64::INFINITY,
            k,
        });
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let (mean, se) = mean_stderr(&w);
    let se = if k == 1 { 0.0 } else { se };
    Ok(EvidenceEstimate {
        value: mean * m.exp(),
        stderr: se * m.exp(),
        log_value: m + mean.ln(),
        log_stderr: se / mean,
        k,
    })
}
