use fvi_core::estimators::{bound_mc, GradientKind};
use fvi_core::families::{diag_gaussian_family, uniform_width_family, DiagGaussian};
use fvi_core::models::{conjugate_gaussian_model, sin_dataset, synthetic_sin_model};
use fvi_core::optimizer::{train, StopReason, TrainConfig};
use fvi_core::{Conditioned, Dataset, Direction, DivergenceSpec};

fn conj_data() -> Dataset {
    Dataset::from_scalars(&[0.8, 1.1, 0.3, 1.6])
}

fn base(spec: &str, epochs: usize) -> TrainConfig {
    TrainConfig {
        divergence: spec.parse().unwrap(),
        epochs,
        k: 200,
        seed: 42,
        patience: usize::MAX,
        ..TrainConfig::default()
    }
}

#[test]
fn kl_training_recovers_conjugate_posterior() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let (mu, var) = m.posterior(&d);
    let f = diag_gaussian_family(1).unwrap();
    let th0 = DiagGaussian::params(&[-1.0], &[2.0]);
    let (th, trace) = train(&m, &d, &f, &th0, &base("kl", 3000)).unwrap();
    assert!((th[0] - mu).abs() < 1e-2, "{} vs {mu}", th[0]);
    assert!(
        (th[1].exp() - var.sqrt()).abs() < 1e-2,
        "{} vs {}",
        th[1].exp(),
        var.sqrt()
    );
    assert_eq!(trace.steps.len(), 3000);
    assert_eq!(trace.stop_reason, StopReason::EpochBudget);
}

#[test]
fn final_bound_reaches_its_optimum_value() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let p = m.log_evidence(&d).exp();
    let t = Conditioned::new(&m, &d);
    let f = diag_gaussian_family(1).unwrap();
    let th0 = DiagGaussian::params(&[0.0], &[1.0]);
    for spec in ["kl", "chi_n:n=2", "hellinger:alpha=3"] {
        let cfg = base(spec, 3000);
        let g = cfg.divergence.build().unwrap();
        let (th, _) = train(&m, &d, &f, &th0, &cfg).unwrap();
        let fine = TrainConfig {
            learning_rate: 1e-3,
            epochs: 2000,
            ..cfg
        };
        let (th, _) = train(&m, &d, &f, &th, &fine).unwrap();
        let b = bound_mc(&g, Direction::Reverse, &t, &f, &th, 100_000, 7).unwrap();
        let opt = g.f_dual(p);
        assert!(b.value >= opt - 3.0 * b.stderr, "{spec}");
        assert!(
            b.value - opt <= 3.0 * b.stderr + 1e-10 * (1.0 + opt.abs()),
            "{spec}: {} vs {opt} (se {})",
            b.value,
            b.stderr
        );
    }
}

#[test]
fn bound_improves_over_first_steps() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let t = Conditioned::new(&m, &d);
    let f = diag_gaussian_family(1).unwrap();
    let th0 = DiagGaussian::params(&[-1.0], &[2.0]);
    for spec in [
        "kl",
        "chi_n:n=2/forward",
        "chi_n:n=2",
        "hellinger:alpha=3",
        "tv",
        "c1",
    ] {
        let cfg = base(spec, 50);
        let g = cfg.divergence.build().unwrap();
        let dir = cfg.divergence.direction;
        let (th, _) = train(&m, &d, &f, &th0, &cfg).unwrap();
        let before = bound_mc(&g, dir, &t, &f, &th0, 20_000, 3).unwrap();
        let after = bound_mc(&g, dir, &t, &f, &th, 20_000, 3).unwrap();
        // minimizing the h-scale bound: the ELBO (its negative for KL) goes up
        assert!(
            after.value < before.value,
            "{spec}: {} -> {}",
            before.value,
            after.value
        );
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let f = diag_gaussian_family(1).unwrap();
    let th0 = vec![0.3, -0.2];
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..base("kl", 20)
    };
    let (th, _) = train(&m, &d, &f, &th0, &cfg).unwrap();
    assert_eq!(th, th0);
}

#[test]
fn identical_runs_give_identical_traces() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let f = diag_gaussian_family(1).unwrap();
    let cfg = TrainConfig {
        batch_size: Some(2),
        snapshot_every: 10,
        ..base("chi_n:n=2/forward", 50)
    };
    let (a, ta) = train(&m, &d, &f, &[0.0, 0.0], &cfg).unwrap();
    let (b, tb) = train(&m, &d, &f, &[0.0, 0.0], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_json_lines(), tb.to_json_lines());
    assert_eq!(ta.steps.len(), 100);
    assert!(ta.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
}

#[test]
fn converges_early_on_a_flat_objective() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let f = diag_gaussian_family(1).unwrap();
    let (mu, var) = m.posterior(&d);
    let th0 = DiagGaussian::params(&[mu], &[var.sqrt()]);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        patience: 20,
        ..base("kl", 1000)
    };
    let (_, trace) = train(&m, &d, &f, &th0, &cfg).unwrap();
    assert_eq!(trace.stop_reason, StopReason::Converged);
    assert!(trace.steps.len() < 1000);
}

#[test]
fn uniform_width_shrinks_from_wide_start() {
    let m = synthetic_sin_model();
    let d = sin_dataset(100, 1);
    let f = uniform_width_family();
    let cfg = TrainConfig {
        gradient: GradientKind::IwReparam,
        l: 3,
        k: 200,
        ..base("kl", 300)
    };
    let (th, trace) = train(&m, &d, &f, &[1.5], &cfg).unwrap();
    assert!(th[0] < 1.0, "{}", th[0]);
    assert!(trace.degenerate_steps > 0);
}

#[test]
fn missing_reparameterization_is_not_needed_for_score() {
    let m = conjugate_gaussian_model(0.0, 1.0, 1.0).unwrap();
    let d = conj_data();
    let f = diag_gaussian_family(1).unwrap();
    let cfg = TrainConfig {
        gradient: GradientKind::Score,
        k: 500,
        ..base("kl", 200)
    };
    let (th, _) = train(&m, &d, &f, &[0.0, 0.0], &cfg).unwrap();
    assert!(th.iter().all(|v| v.is_finite()));
    let spec: DivergenceSpec = "kl".parse().unwrap();
    assert_eq!(spec.direction, Direction::Reverse);
}
