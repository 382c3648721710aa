//! Variational families `q_theta` with reparameterizations `z = g_theta(eps)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parameter vector has length {got}, family expects {want}")]
    Dimension { got: usize, want: usize },
    #[error("unknown family `{0}`")]
    Unknown(String),
}

/// A parameterized density `q_theta(z)` with the gradient contracts used by
/// score-function and reparameterization estimators.
pub trait VariationalFamily: Send + Sync {
    fn name(&self) -> &str;
    fn param_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    /// Moves `theta` into the admissible set. Returns `true` when it was changed.
    fn project(&self, theta: &mut [f64]) -> Result<bool, FamilyError>;

    fn log_q(&self, theta: &[f64], z: &[f64]) -> f64;

    /// Direct sampler, independent of the reparameterization.
    fn sample(&self, theta: &[f64], rng: &mut RngStream, z: &mut [f64]);

    fn noise_sample(&self, rng: &mut RngStream, eps: &mut [f64]);

    fn g(&self, theta: &[f64], eps: &[f64], z: &mut [f64]);

    /// Explicit `grad_theta log q_theta(z)` at fixed `z`.
    fn grad_theta_log_q(&self, theta: &[f64], z: &[f64], out: &mut [f64]);

    /// `dz/dtheta` as a row-major `latent_dim x param_dim` matrix.
    fn jacobian_g_theta(&self, theta: &[f64], eps: &[f64], out: &mut [f64]);

    fn grad_z_log_q(&self, theta: &[f64], z: &[f64], out: &mut [f64]);

    /// `v^T dz/dtheta` written into `out`.
    fn vjp_g_theta(&self, theta: &[f64], eps: &[f64], v: &[f64], out: &mut [f64]) {
        let (d, p) = (self.latent_dim(), self.param_dim());
        let mut jac = vec![0.0; d * p];
        self.jacobian_g_theta(theta, eps, &mut jac);
        for (k, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|i| v[i] * jac[i * p + k]).sum();
        }
    }

    /// Point summary used for predictions (the mean of `q`).
    fn mean(&self, theta: &[f64]) -> Vec<f64>;
}

fn check_len(theta: &[f64], want: usize) -> Result<(), FamilyError> {
    if theta.len() != want {
        return Err(FamilyError::Dimension {
            got: theta.len(),
            want,
        });
    }
    Ok(())
}

/// `U(pi/2 - theta pi/2, pi/2 + theta pi/2)`, `theta` in `(0, 2]`.
#[derive(Clone, Debug, Default)]
pub struct UniformWidth;

pub const UNIFORM_WIDTH_MAX: f64 = 2.0;

pub fn uniform_width_family() -> UniformWidth {
    UniformWidth
}

impl UniformWidth {
    pub fn support(theta: f64) -> (f64, f64) {
        ((1.0 - theta) / 2.0 * PI, (1.0 + theta) / 2.0 * PI)
    }
}

impl VariationalFamily for UniformWidth {
    fn name(&self) -> &str {
        "uniform_width"
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn project(&self, theta: &mut [f64]) -> Result<bool, FamilyError> {
        check_len(theta, 1)?;
        if !(theta[0] > 0.0) {
            return Err(FamilyError::InvalidParameter(format!(
                "uniform width must be positive, got {}",
                theta[0]
            )));
        }
        if theta[0] > UNIFORM_WIDTH_MAX {
            theta[0] = UNIFORM_WIDTH_MAX;
            return Ok(true);
        }
        Ok(false)
    }

    fn log_q(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (a, b) = Self::support(theta[0]);
        if (a..=b).contains(&z[0]) {
            -(theta[0] * PI).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample(&self, theta: &[f64], rng: &mut RngStream, z: &mut [f64]) {
        let (a, b) = Self::support(theta[0]);
        z[0] = rng.random_range(a..b);
    }

    fn noise_sample(&self, rng: &mut RngStream, eps: &mut [f64]) {
        eps[0] = rng.random::<f64>() - 0.5;
    }

    fn g(&self, theta: &[f64], eps: &[f64], z: &mut [f64]) {
        z[0] = PI / 2.0 + theta[0] * PI * eps[0];
    }

    fn grad_theta_log_q(&self, theta: &[f64], _z: &[f64], out: &mut [f64]) {
        out[0] = -1.0 / theta[0];
    }

    fn jacobian_g_theta(&self, _theta: &[f64], eps: &[f64], out: &mut [f64]) {
        out[0] = PI * eps[0];
    }

    fn grad_z_log_q(&self, _theta: &[f64], _z: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn vjp_g_theta(&self, _theta: &[f64], eps: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = v[0] * PI * eps[0];
    }

    fn mean(&self, _theta: &[f64]) -> Vec<f64> {
        vec![PI / 2.0]
    }
}

/// `N(mu, diag(exp(2 log_sigma)))` with `theta = (mu, log_sigma)`.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    dim: usize,
}

pub fn diag_gaussian_family(dim: usize) -> Result<DiagGaussian, FamilyError> {
    if dim == 0 {
        return Err(FamilyError::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    Ok(DiagGaussian { dim })
}

impl DiagGaussian {
    /// Parameters for mean `mu` and standard deviations `sd`.
    pub fn params(mu: &[f64], sd: &[f64]) -> Vec<f64> {
        mu.iter()
            .copied()
            .chain(sd.iter().map(|s| s.ln()))
            .collect()
    }
}

impl VariationalFamily for DiagGaussian {
    fn name(&self) -> &str {
        "diag_gaussian"
    }

    fn param_dim(&self) -> usize {
        2 * self.dim
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn project(&self, theta: &mut [f64]) -> Result<bool, FamilyError> {
        check_len(theta, 2 * self.dim)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(FamilyError::InvalidParameter(
                "parameters must be finite".into(),
            ));
        }
        Ok(false)
    }

    fn log_q(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (mu, ls) = theta.split_at(self.dim);
        let mut acc = -0.5 * self.dim as f64 * LN_2PI;
        for i in 0..self.dim {
            let e = (z[i] - mu[i]) * (-ls[i]).exp();
            acc -= ls[i] + 0.5 * e * e;
        }
        acc
    }

    fn sample(&self, theta: &[f64], rng: &mut RngStream, z: &mut [f64]) {
        let (mu, ls) = theta.split_at(self.dim);
        for i in 0..self.dim {
            z[i] = Normal::new(mu[i], ls[i].exp())
                .expect("finite parameters")
                .sample(rng);
        }
    }

    fn noise_sample(&self, rng: &mut RngStream, eps: &mut [f64]) {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
    }

    fn g(&self, theta: &[f64], eps: &[f64], z: &mut [f64]) {
        let (mu, ls) = theta.split_at(self.dim);
        for i in 0..self.dim {
            z[i] = mu[i] + ls[i].exp() * eps[i];
        }
    }

    fn grad_theta_log_q(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        let (mu, ls) = theta.split_at(self.dim);
        for i in 0..self.dim {
            let inv_var = (-2.0 * ls[i]).exp();
            let d = z[i] - mu[i];
            out[i] = d * inv_var;
            out[self.dim + i] = d * d * inv_var - 1.0;
        }
    }

    fn jacobian_g_theta(&self, theta: &[f64], eps: &[f64], out: &mut [f64]) {
        let p = 2 * self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.dim {
            out[i * p + i] = 1.0;
            out[i * p + self.dim + i] = theta[self.dim + i].exp() * eps[i];
        }
    }

    fn grad_z_log_q(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        let (mu, ls) = theta.split_at(self.dim);
        for i in 0..self.dim {
            out[i] = -(z[i] - mu[i]) * (-2.0 * ls[i]).exp();
        }
    }

    fn vjp_g_theta(&self, theta: &[f64], eps: &[f64], v: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = v[i];
            out[self.dim + i] = v[i] * theta[self.dim + i].exp() * eps[i];
        }
    }

    fn mean(&self, theta: &[f64]) -> Vec<f64> {
        theta[..self.dim].to_vec()
    }
}

/// Family by config name; `dim` is the latent dimension of the model.
pub fn family_lookup(name: &str, dim: usize) -> Result<Box<dyn VariationalFamily>, FamilyError> {
    match name {
        "uniform_width" => {
            if dim != 1 {
                return Err(FamilyError::InvalidParameter(format!(
                    "uniform_width is one-dimensional, model has {dim} latents"
                )));
            }
            Ok(Box::new(UniformWidth))
        }
        "diag_gaussian" => Ok(Box::new(diag_gaussian_family(dim)?)),
        other => Err(FamilyError::Unknown(other.to_string())),
    }
}
