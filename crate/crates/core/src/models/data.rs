use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelError, SIN_NOISE_VAR};
use crate::stats::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub target: Option<f64>,
}

impl Observation {
    pub fn scalar(x: f64) -> Self {
        Observation {
            features: vec![x],
            target: None,
        }
    }

    pub fn labeled(features: Vec<f64>, target: f64) -> Self {
        Observation {
            features,
            target: Some(target),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Test,
}

/// Column statistics from the training split (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Option<f64>,
    pub target_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Observation>,
    pub feature_names: Vec<String>,
    pub target_name: Option<String>,
    pub stats: Option<NormalizationStats>,
    pub split: Split,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>) -> Self {
        let width = rows.first().map_or(0, |r| r.features.len());
        Dataset {
            rows,
            feature_names: (0..width).map(|i| format!("x{i}")).collect(),
            target_name: None,
            stats: None,
            split: Split::Full,
        }
    }

    pub fn from_scalars(xs: &[f64]) -> Self {
        let mut d = Dataset::new(xs.iter().map(|&x| Observation::scalar(x)).collect());
        d.feature_names = vec!["x".into()];
        d
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.rows
            .first()
            .map_or(self.feature_names.len(), |r| r.features.len())
    }

    /// Maps a normalized target back to the original scale.
    pub fn denormalize_target(&self, y: f64) -> f64 {
        match &self.stats {
            Some(NormalizationStats {
                target_mean: Some(m),
                target_std: Some(s),
                ..
            }) => y * s + m,
            _ => y,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        if let Some(t) = &self.target_name {
            header.push(t.clone());
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
            if let Some(t) = r.target {
                rec.push(t.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn population_mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

fn compute_stats(rows: &[Observation]) -> NormalizationStats {
    let width = rows[0].features.len();
    let (feature_mean, feature_std) = (0..width)
        .map(|j| population_mean_std(rows.iter().map(move |r| r.features[j])))
        .unzip();
    let (target_mean, target_std) = if rows.iter().all(|r| r.target.is_some()) {
        let (m, s) = population_mean_std(rows.iter().map(|r| r.target.unwrap_or(0.0)));
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    NormalizationStats {
        feature_mean,
        feature_std,
        target_mean,
        target_std,
    }
}

fn apply_stats(rows: &mut [Observation], s: &NormalizationStats) {
    for r in rows {
        for (j, v) in r.features.iter_mut().enumerate() {
            *v = (*v - s.feature_mean[j]) / s.feature_std[j];
        }
        if let (Some(t), Some(m), Some(sd)) = (r.target.as_mut(), s.target_mean, s.target_std) {
            *t = (*t - m) / sd;
        }
    }
}

/// Seeded shuffle and split into `(train, test)` with `round(split * n)` training rows.
/// With `normalize`, statistics come from the training rows and are applied to both.
pub fn split_dataset(
    data: &Dataset,
    split: f64,
    seed: u64,
    normalize: bool,
) -> Result<(Dataset, Dataset), ModelError> {
    if !(split > 0.0 && split <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "split fraction must lie in (0, 1], got {split}"
        )));
    }
    if data.is_empty() {
        return Err(ModelError::Data("dataset is empty".into()));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    let n_train = ((split * data.len() as f64).round() as usize).clamp(1, data.len());
    let pick =
        |ids: &[usize]| -> Vec<Observation> { ids.iter().map(|&i| data.rows[i].clone()).collect() };
    let mut train_rows = pick(&idx[..n_train]);
    let mut test_rows = pick(&idx[n_train..]);
    let stats = if normalize {
        let s = compute_stats(&train_rows);
        apply_stats(&mut train_rows, &s);
        apply_stats(&mut test_rows, &s);
        Some(s)
    } else {
        None
    };
    let make = |rows, split| Dataset {
        rows,
        feature_names: data.feature_names.clone(),
        target_name: data.target_name.clone(),
        stats: stats.clone(),
        split,
    };
    Ok((make(train_rows, Split::Train), make(test_rows, Split::Test)))
}

/// Reads a numeric CSV with a header row and splits it.
pub fn load_csv_dataset(
    path: &Path,
    target_column: &str,
    normalize: bool,
    split: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), ModelError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| ModelError::Data(format!("no column named `{target_column}`")))?;
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut features = Vec::with_capacity(headers.len() - 1);
        let mut target = 0.0;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                ModelError::Data(format!(
                    "non-numeric cell `{cell}` in column `{}` on data row {}",
                    headers.get(j).map_or("?", String::as_str),
                    line + 1
                ))
            })?;
            if j == target_idx {
                target = v;
            } else {
                features.push(v);
            }
        }
        rows.push(Observation::labeled(features, target));
    }
    if rows.is_empty() {
        return Err(ModelError::Data(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    let mut data = Dataset::new(rows);
    data.feature_names = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    data.target_name = Some(target_column.to_string());
    split_dataset(&data, split, seed, normalize)
}

/// Draws `n` observations `x = sin(z) + N(0, 0.01)` with `z ~ U(0, pi)` per observation.
pub fn sin_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let sd = SIN_NOISE_VAR.sqrt();
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let z = rng.random::<f64>() * std::f64::consts::PI;
            let e: f64 = StandardNormal.sample(&mut rng);
            z.sin() + sd * e
        })
        .collect();
    Dataset::from_scalars(&xs)
}

/// `y = 2x + N(0, noise_sd^2)` with `x ~ U(-1, 1)`.
pub fn linear_dataset(n: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let rows = (0..n)
        .map(|_| {
            let x = 2.0 * rng.random::<f64>() - 1.0;
            let e: f64 = StandardNormal.sample(&mut rng);
            Observation::labeled(vec![x], 2.0 * x + noise_sd * e)
        })
        .collect();
    let mut d = Dataset::new(rows);
    d.target_name = Some("y".into());
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(rows: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,b,y").unwrap();
        for i in 0..rows {
            let x = i as f64;
            writeln!(f, "{},{},{}", x, (x * 0.7).sin(), 3.0 * x + 1.0).unwrap();
        }
        f
    }

    #[test]
    fn split_sizes_and_determinism() {
        let f = write_csv(100);
        let (tr, te) = load_csv_dataset(f.path(), "y", false, 0.9, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (90, 10));
        let (tr2, te2) = load_csv_dataset(f.path(), "y", false, 0.9, 4).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        assert_eq!(tr.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn normalization_uses_train_stats() {
        let f = write_csv(50);
        let (tr, _) = load_csv_dataset(f.path(), "y", true, 0.8, 1).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = tr.rows.iter().map(|r| r.features[j]).collect();
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_inputs() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,y\n1,2\nfoo,3").unwrap();
        assert!(matches!(
            load_csv_dataset(f.path(), "y", false, 0.5, 0),
            Err(ModelError::Data(_))
        ));
        let g = write_csv(5);
        assert!(load_csv_dataset(g.path(), "missing", false, 0.5, 0).is_err());
        let mut e = tempfile::NamedTempFile::new().unwrap();
        writeln!(e, "a,y").unwrap();
        assert!(load_csv_dataset(e.path(), "y", false, 0.5, 0).is_err());
    }

    #[test]
    fn synthetic_generators_are_seeded() {
        assert_eq!(sin_dataset(5, 9), sin_dataset(5, 9));
        assert_ne!(sin_dataset(5, 9), sin_dataset(5, 10));
        let d = linear_dataset(64, 0.1, 2);
        assert_eq!(d.len(), 64);
        assert!(d
            .rows
            .iter()
            .all(|r| (r.target.unwrap() - 2.0 * r.features[0]).abs() < 1.0));
    }
}
