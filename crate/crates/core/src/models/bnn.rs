use rand_distr::{Distribution, StandardNormal};

use super::{normal_logpdf, Dataset, LatentModel, ModelError, Observation, LN_2PI};
use crate::RngStream;

/// One-hidden-layer ReLU regression network with a standard normal prior on all weights.
///
/// Latent layout: `W1` (hidden x input, row-major), `b1` (hidden), `w2` (hidden), `b2`.
#[derive(Clone, Debug)]
pub struct BnnRegression {
    hidden: usize,
    input_dim: usize,
    sigma: f64,
}

pub fn bnn_regression_model(
    hidden: usize,
    sigma: f64,
    dataset: &Dataset,
) -> Result<BnnRegression, ModelError> {
    if hidden == 0 {
        return Err(ModelError::InvalidParameter(
            "hidden must be at least 1".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let input_dim = dataset.feature_dim();
    if input_dim == 0 {
        return Err(ModelError::DimensionMismatch(
            "dataset has no feature columns".into(),
        ));
    }
    if let Some(i) = dataset
        .rows
        .iter()
        .position(|r| r.features.len() != input_dim || r.target.is_none())
    {
        return Err(ModelError::DimensionMismatch(format!(
            "row {i} does not have {input_dim} features and a target"
        )));
    }
    Ok(BnnRegression {
        hidden,
        input_dim,
        sigma,
    })
}

impl BnnRegression {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.input_dim;
        (w1, w1 + self.hidden, w1 + 2 * self.hidden)
    }

    /// Network output `F_z(x)`.
    pub fn predict(&self, z: &[f64], x: &[f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let mut out = z[b2];
        for h in 0..self.hidden {
            let row = &z[h * self.input_dim..(h + 1) * self.input_dim];
            let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + z[b1 + h];
            if pre > 0.0 {
                out += z[w2 + h] * pre;
            }
        }
        out
    }
}

impl LatentModel for BnnRegression {
    fn name(&self) -> &str {
        "bnn_regression"
    }

    fn latent_dim(&self) -> usize {
        self.hidden * (self.input_dim + 2) + 1
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        -0.5 * (z.len() as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>())
    }

    fn log_likelihood(&self, x: &Observation, z: &[f64]) -> f64 {
        let y = x.target.unwrap_or(f64::NAN);
        normal_logpdf(y, self.predict(z, &x.features), self.sigma * self.sigma)
    }

    fn grad_log_prior(&self, z: &[f64], out: &mut [f64]) -> bool {
        for (o, v) in out.iter_mut().zip(z) {
            *o = -v;
        }
        true
    }

    fn add_grad_log_likelihood(
        &self,
        x: &Observation,
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> bool {
        let (b1, w2, b2) = self.offsets();
        let y = x.target.unwrap_or(f64::NAN);
        let d = self.input_dim;
        let mut pre = vec![0.0; self.hidden];
        let mut f = z[b2];
        for h in 0..self.hidden {
            let row = &z[h * d..(h + 1) * d];
            pre[h] = row.iter().zip(&x.features).map(|(w, v)| w * v).sum::<f64>() + z[b1 + h];
            if pre[h] > 0.0 {
                f += z[w2 + h] * pre[h];
            }
        }
        let delta = scale * (y - f) / (self.sigma * self.sigma);
        out[b2] += delta;
        for h in 0..self.hidden {
            // ReLU subgradient at 0 is 0
            if pre[h] > 0.0 {
                out[w2 + h] += delta * pre[h];
                let back = delta * z[w2 + h];
                out[b1 + h] += back;
                for (o, v) in out[h * d..(h + 1) * d].iter_mut().zip(&x.features) {
                    *o += back * v;
                }
            }
        }
        true
    }

    fn sample_prior(&self, rng: &mut RngStream, out: &mut [f64]) -> bool {
        for o in out.iter_mut() {
            *o = StandardNormal.sample(rng);
        }
        true
    }

    fn prior_window(&self) -> Vec<(f64, f64)> {
        vec![(-12.0, 12.0); self.latent_dim()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{linear_dataset, Conditioned, LogJoint};
    use crate::stats::stream_rng;

    #[test]
    fn zero_weights_predict_output_bias() {
        let data = linear_dataset(4, 0.1, 0);
        let m = bnn_regression_model(3, 0.5, &data).unwrap();
        let mut z = vec![0.0; m.latent_dim()];
        *z.last_mut().unwrap() = 0.25;
        let x = &data.rows[0];
        assert_eq!(m.predict(&z, &x.features), 0.25);
        let want = normal_logpdf(x.target.unwrap(), 0.25, 0.25);
        assert!((m.log_likelihood(x, &z) - want).abs() < 1e-15);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let data = linear_dataset(8, 0.1, 1);
        let m = bnn_regression_model(5, 0.7, &data).unwrap();
        let target = Conditioned::new(&m, &data);
        let mut rng = stream_rng(3, 0);
        for _ in 0..10 {
            let mut z = vec![0.0; m.latent_dim()];
            m.sample_prior(&mut rng, &mut z);
            let mut g = vec![0.0; z.len()];
            target.grad_log_joint(&z, &mut g).unwrap();
            for j in 0..z.len() {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (target.log_joint(&zp) - target.log_joint(&zm)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0),
                    "j={j} fd={fd} g={}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = linear_dataset(4, 0.1, 0);
        assert!(bnn_regression_model(0, 1.0, &data).is_err());
        assert!(bnn_regression_model(2, 0.0, &data).is_err());
        let unlabeled = Dataset::from_scalars(&[1.0, 2.0]);
        assert!(bnn_regression_model(2, 1.0, &unlabeled).is_err());
    }
}
