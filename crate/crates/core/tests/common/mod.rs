#![allow(dead_code)]

use fvi_core::estimators::{iw_bound_mc, sample_latents, McConfig};
use fvi_core::{Direction, DivergenceGenerator, LogJoint, VariationalFamily};

pub const FD_REL: f64 = 1e-4;

pub fn fd_step(theta: f64) -> f64 {
    FD_REL * (1.0 + theta.abs())
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

/// Central differences of the bound estimator itself; the fixed seed gives
/// common random numbers across the perturbed parameters.
pub fn fd_bound_grad(
    g: &DivergenceGenerator,
    dir: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    mc: McConfig,
) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let h = fd_step(theta[j]);
            let (mut tp, mut tm) = (theta.to_vec(), theta.to_vec());
            tp[j] += h;
            tm[j] -= h;
            let up = iw_bound_mc(g, dir, target, family, &tp, mc).unwrap().value;
            let dn = iw_bound_mc(g, dir, target, family, &tm, mc).unwrap().value;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the likelihood-ratio reweighted bound
/// `(1/K) sum h(p(z_k)/q'(z_k)) q'(z_k)/q(z_k)` with the draws `z_k ~ q_theta` held fixed.
pub fn fd_reweighted_grad(
    g: &DivergenceGenerator,
    dir: Direction,
    target: &dyn LogJoint,
    family: &dyn VariationalFamily,
    theta: &[f64],
    k: usize,
    seed: u64,
) -> Vec<f64> {
    let d = family.latent_dim();
    let z = sample_latents(family, theta, McConfig::new(k, 1, seed));
    let map = g.bound_map(dir);
    let value = |tp: &[f64]| -> f64 {
        let terms: Vec<f64> = z
            .chunks(d)
            .map(|zk| {
                let lq0 = family.log_q(theta, zk);
                let lq = family.log_q(tp, zk);
                let s = target.log_joint(zk) - lq;
                map.eval_log(s) * (lq - lq0).exp()
            })
            .collect();
        fvi_core::stats::pairwise_sum(&terms) / k as f64
    };
    (0..theta.len())
        .map(|j| {
            let h = fd_step(theta[j]);
            let (mut tp, mut tm) = (theta.to_vec(), theta.to_vec());
            tp[j] += h;
            tm[j] -= h;
            (value(&tp) - value(&tm)) / (2.0 * h)
        })
        .collect()
}
