//! Latent-variable models, datasets and the log-joint views the estimators consume.

mod bnn;
mod data;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use bnn::{bnn_regression_model, BnnRegression};
pub use data::{
    linear_dataset, load_csv_dataset, sin_dataset, split_dataset, Dataset, NormalizationStats,
    Observation, Split,
};

use crate::stats::pairwise_sum;
use crate::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("precision matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("batch index {index} out of range for {n} observations")]
    BatchIndex { index: usize, n: usize },
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gaussian described by mean and precision.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianForm {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

/// A generative model `p(z) prod_n p(x_n | z)`.
///
/// Gradient and sampler hooks return `false` when the model does not provide them.
pub trait LatentModel: Send + Sync {
    fn name(&self) -> &str;
    fn latent_dim(&self) -> usize;
    fn log_prior(&self, z: &[f64]) -> f64;
    fn log_likelihood(&self, x: &Observation, z: &[f64]) -> f64;

    /// Writes `grad_z log p(z)` into `out`.
    fn grad_log_prior(&self, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Adds `scale * grad_z log p(x | z)` to `out`.
    fn add_grad_log_likelihood(
        &self,
        _x: &Observation,
        _z: &[f64],
        _scale: f64,
        _out: &mut [f64],
    ) -> bool {
        false
    }

    fn sample_prior(&self, _rng: &mut RngStream, _out: &mut [f64]) -> bool {
        false
    }

    /// Per-coordinate box holding essentially all prior mass.
    fn prior_window(&self) -> Vec<(f64, f64)>;

    /// Closed-form Gaussian posterior given `data`, when one exists.
    fn gaussian_posterior(&self, _data: &Dataset) -> Option<GaussianForm> {
        None
    }
}

/// An unnormalized target density `p(z, D)` over the latent space.
pub trait LogJoint: Send + Sync {
    fn dim(&self) -> usize;
    fn log_joint(&self, z: &[f64]) -> f64;

    /// Writes `grad_z log p(z, D)` into `out` and returns the log joint,
    /// or `None` when gradients are unavailable.
    fn grad_log_joint(&self, _z: &[f64], _out: &mut [f64]) -> Option<f64> {
        None
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        None
    }
}

/// A model conditioned on a dataset, optionally on a scaled minibatch.
pub struct Conditioned<'a> {
    model: &'a dyn LatentModel,
    data: &'a Dataset,
    batch: Option<Vec<usize>>,
    scale: f64,
}

impl<'a> Conditioned<'a> {
    pub fn new(model: &'a dyn LatentModel, data: &'a Dataset) -> Self {
        Conditioned {
            model,
            data,
            batch: None,
            scale: 1.0,
        }
    }

    pub fn model(&self) -> &dyn LatentModel {
        self.model
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn rows(&self) -> Box<dyn Iterator<Item = &Observation> + '_> {
        match &self.batch {
            Some(idx) => Box::new(idx.iter().map(|&i| &self.data.rows[i])),
            None => Box::new(self.data.rows.iter()),
        }
    }

    pub fn log_likelihood(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .rows()
            .map(|x| self.model.log_likelihood(x, z))
            .collect();
        self.scale * pairwise_sum(&terms)
    }
}

impl LogJoint for Conditioned<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        let lp = self.model.log_prior(z);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(z)
    }

    fn grad_log_joint(&self, z: &[f64], out: &mut [f64]) -> Option<f64> {
        if !self.model.grad_log_prior(z, out) {
            return None;
        }
        for x in self.rows() {
            if !self.model.add_grad_log_likelihood(x, z, self.scale, out) {
                return None;
            }
        }
        Some(self.log_joint(z))
    }

    fn gaussian_form(&self) -> Option<GaussianForm> {
        if self.batch.is_some() {
            return None;
        }
        self.model.gaussian_posterior(self.data)
    }
}

/// Minibatch view: the batch log-likelihood is scaled by `full_n / batch.len()`
/// and added to the full prior.
pub fn minibatch_adapter<'a>(
    model: &'a dyn LatentModel,
    data: &'a Dataset,
    batch: &[usize],
    full_n: usize,
) -> Result<Conditioned<'a>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if let Some(&index) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(ModelError::BatchIndex {
            index,
            n: data.len(),
        });
    }
    Ok(Conditioned {
        model,
        data,
        batch: Some(batch.to_vec()),
        scale: full_n as f64 / batch.len() as f64,
    })
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

fn scalar_obs(x: &Observation) -> f64 {
    x.target.unwrap_or(x.features[0])
}

/// `z ~ U(0, pi)`, `x | z ~ N(sin z, 0.01)`.
#[derive(Clone, Debug, Default)]
pub struct SyntheticSin;

pub const SIN_NOISE_VAR: f64 = 0.01;

pub fn synthetic_sin_model() -> SyntheticSin {
    SyntheticSin
}

impl LatentModel for SyntheticSin {
    fn name(&self) -> &str {
        "synthetic_sin"
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        if (0.0..=PI).contains(&z[0]) {
            -PI.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_likelihood(&self, x: &Observation, z: &[f64]) -> f64 {
        normal_logpdf(scalar_obs(x), z[0].sin(), SIN_NOISE_VAR)
    }

    fn grad_log_prior(&self, _z: &[f64], out: &mut [f64]) -> bool {
        out[0] = 0.0;
        true
    }

    fn add_grad_log_likelihood(
        &self,
        x: &Observation,
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> bool {
        let (s, c) = z[0].sin_cos();
        out[0] += scale * (scalar_obs(x) - s) / SIN_NOISE_VAR * c;
        true
    }

    fn sample_prior(&self, rng: &mut RngStream, out: &mut [f64]) -> bool {
        out[0] = rng.random::<f64>() * PI;
        true
    }

    fn prior_window(&self) -> Vec<(f64, f64)> {
        vec![(0.0, PI)]
    }
}

/// `z ~ N(m0, v0)`, `x | z ~ N(z, v)` with analytic posterior and evidence.
#[derive(Clone, Debug)]
pub struct ConjugateGaussian {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub lik_var: f64,
}

pub fn conjugate_gaussian_model(
    prior_mean: f64,
    prior_var: f64,
    lik_var: f64,
) -> Result<ConjugateGaussian, ModelError> {
    if !(prior_var > 0.0 && lik_var > 0.0) || !prior_mean.is_finite() {
        return Err(ModelError::InvalidParameter(format!(
            "variances must be positive (prior_var={prior_var}, lik_var={lik_var})"
        )));
    }
    Ok(ConjugateGaussian {
        prior_mean,
        prior_var,
        lik_var,
    })
}

impl ConjugateGaussian {
    /// Posterior `(mean, var)` of `z` given `data`.
    pub fn posterior(&self, data: &Dataset) -> (f64, f64) {
        let n = data.len() as f64;
        let sum: f64 = data.rows.iter().map(scalar_obs).sum();
        let prec = 1.0 / self.prior_var + n / self.lik_var;
        let mean = (self.prior_mean / self.prior_var + sum / self.lik_var) / prec;
        (mean, 1.0 / prec)
    }

    /// `ln p(D)`: the data are jointly Gaussian with covariance `v I + v0 11^T`.
    pub fn log_evidence(&self, data: &Dataset) -> f64 {
        let n = data.len() as f64;
        if data.is_empty() {
            return 0.0;
        }
        let (v0, v) = (self.prior_var, self.lik_var);
        let r: Vec<f64> = data
            .rows
            .iter()
            .map(|x| scalar_obs(x) - self.prior_mean)
            .collect();
        let s1: f64 = r.iter().sum();
        let s2: f64 = r.iter().map(|x| x * x).sum();
        let logdet = (n - 1.0) * v.ln() + (v + n * v0).ln();
        let quad = (s2 - v0 * s1 * s1 / (v + n * v0)) / v;
        -0.5 * (n * LN_2PI + logdet + quad)
    }
}

impl LatentModel for ConjugateGaussian {
    fn name(&self) -> &str {
        "conjugate_gaussian"
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        normal_logpdf(z[0], self.prior_mean, self.prior_var)
    }

    fn log_likelihood(&self, x: &Observation, z: &[f64]) -> f64 {
        normal_logpdf(scalar_obs(x), z[0], self.lik_var)
    }

    fn grad_log_prior(&self, z: &[f64], out: &mut [f64]) -> bool {
        out[0] = -(z[0] - self.prior_mean) / self.prior_var;
        true
    }

    fn add_grad_log_likelihood(
        &self,
        x: &Observation,
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> bool {
        out[0] += scale * (scalar_obs(x) - z[0]) / self.lik_var;
        true
    }

    fn sample_prior(&self, rng: &mut RngStream, out: &mut [f64]) -> bool {
        let e: f64 = StandardNormal.sample(rng);
        out[0] = self.prior_mean + self.prior_var.sqrt() * e;
        true
    }

    fn prior_window(&self) -> Vec<(f64, f64)> {
        let sd = self.prior_var.sqrt();
        vec![(self.prior_mean - 12.0 * sd, self.prior_mean + 12.0 * sd)]
    }

    fn gaussian_posterior(&self, data: &Dataset) -> Option<GaussianForm> {
        let (m, v) = self.posterior(data);
        Some(GaussianForm {
            mean: DVector::from_element(1, m),
            precision: DMatrix::from_element(1, 1, 1.0 / v),
        })
    }
}

/// Normalized Gaussian `N(mu, Lambda^-1)` used as a data-free target.
#[derive(Clone, Debug)]
pub struct CorrelatedGaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    chol_cov: DMatrix<f64>,
    log_norm: f64,
}

pub fn correlated_gaussian_target(
    mu: &[f64],
    precision: &[Vec<f64>],
) -> Result<CorrelatedGaussian, ModelError> {
    let d = mu.len();
    if d == 0 || precision.len() != d || precision.iter().any(|r| r.len() != d) {
        return Err(ModelError::DimensionMismatch(format!(
            "mean has {d} entries but precision is {}x{}",
            precision.len(),
            precision.first().map_or(0, Vec::len)
        )));
    }
    let lam = DMatrix::from_fn(d, d, |i, j| precision[i][j]);
    let sym = (0..d).all(|i| {
        (0..d).all(|j| (lam[(i, j)] - lam[(j, i)]).abs() <= 1e-12 * (1.0 + lam[(i, j)].abs()))
    });
    if !sym {
        return Err(ModelError::NotPositiveDefinite);
    }
    let chol = lam
        .clone()
        .cholesky()
        .ok_or(ModelError::NotPositiveDefinite)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    let cov = chol.inverse();
    let chol_cov = cov.cholesky().ok_or(ModelError::NotPositiveDefinite)?.l();
    Ok(CorrelatedGaussian {
        mean: DVector::from_column_slice(mu),
        precision: lam,
        chol_cov,
        log_norm: 0.5 * (logdet - d as f64 * LN_2PI),
    })
}

impl CorrelatedGaussian {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol_cov * self.chol_cov.transpose()
    }
}

impl LatentModel for CorrelatedGaussian {
    fn name(&self) -> &str {
        "correlated_gaussian"
    }

    fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let r = DVector::from_column_slice(z) - &self.mean;
        self.log_norm - 0.5 * (r.transpose() * &self.precision * &r)[(0, 0)]
    }

    fn log_likelihood(&self, _x: &Observation, _z: &[f64]) -> f64 {
        0.0
    }

    fn grad_log_prior(&self, z: &[f64], out: &mut [f64]) -> bool {
        let r = DVector::from_column_slice(z) - &self.mean;
        let g = -(&self.precision * r);
        out.copy_from_slice(g.as_slice());
        true
    }

    fn add_grad_log_likelihood(
        &self,
        _x: &Observation,
        _z: &[f64],
        _scale: f64,
        _out: &mut [f64],
    ) -> bool {
        true
    }

    fn sample_prior(&self, rng: &mut RngStream, out: &mut [f64]) -> bool {
        let e = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        let z = &self.mean + &self.chol_cov * e;
        out.copy_from_slice(z.as_slice());
        true
    }

    fn prior_window(&self) -> Vec<(f64, f64)> {
        let cov = self.covariance();
        (0..self.mean.len())
            .map(|j| {
                let sd = cov[(j, j)].sqrt();
                (self.mean[j] - 12.0 * sd, self.mean[j] + 12.0 * sd)
            })
            .collect()
    }

    fn gaussian_posterior(&self, _data: &Dataset) -> Option<GaussianForm> {
        Some(GaussianForm {
            mean: self.mean.clone(),
            precision: self.precision.clone(),
        })
    }
}
