use std::path::PathBuf;

use clap::{Args, ValueEnum};
use fvi_core::models::{linear_dataset, load_csv_dataset, sin_dataset, split_dataset};
use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Synthetic {
    /// `x = sin(z) + noise`, `z ~ U(0, pi)`.
    Sin,
    /// `y = 2x + noise`, `x ~ U(-1, 1)`.
    Linear,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Numeric CSV with a header row.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    input: Option<PathBuf>,
    /// Target column of `--input`.
    #[arg(long, requires = "input")]
    target: Option<String>,
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    /// Rows to generate with `--synthetic`.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    /// Fraction of rows in the training split.
    #[arg(long, default_value_t = 0.9)]
    split: f64,
    /// Standardize columns with training-split statistics.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives `train.csv`, `test.csv` and, with `--normalize`, `stats.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct Summary {
    train_rows: usize,
    test_rows: usize,
    features: Vec<String>,
    target: Option<String>,
    files: Vec<PathBuf>,
}

pub fn run(a: &DatasetArgs) -> Result<(), CliError> {
    let usage = |e: fvi_core::ModelError| CliError::Usage(e.to_string());
    let (train, test) = match (&a.input, a.synthetic) {
        (Some(path), _) => {
            let target = a
                .target
                .as_deref()
                .ok_or_else(|| CliError::Usage("--input needs --target".into()))?;
            load_csv_dataset(path, target, a.normalize, a.split, a.seed).map_err(usage)?
        }
        (None, Some(kind)) => {
            let data = match kind {
                Synthetic::Sin => sin_dataset(a.n, a.seed),
                Synthetic::Linear => linear_dataset(a.n, a.noise_sd, a.seed),
            };
            split_dataset(&data, a.split, a.seed, a.normalize).map_err(usage)?
        }
        (None, None) => return Err(CliError::Usage("give --input or --synthetic".into())),
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let mut files = Vec::new();
    for (name, d) in [("train.csv", &train), ("test.csv", &test)] {
        let path = a.out_dir.join(name);
        d.write_csv(&path).map_err(usage)?;
        files.push(path);
    }
    if let Some(stats) = &train.stats {
        let path = a.out_dir.join("stats.json");
        let text = serde_json::to_string_pretty(stats).expect("stats serialize");
        std::fs::write(&path, text + "\n")?;
        files.push(path);
    }
    let summary = Summary {
        train_rows: train.len(),
        test_rows: test.len(),
        features: train.feature_names.clone(),
        target: train.target_name.clone(),
        files,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}
