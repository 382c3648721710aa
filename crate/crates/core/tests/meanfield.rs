use fvi_core::meanfield::{
    cavi_update_kl, meanfield_bound, update_rule_f0, update_rule_f1, Factor, MeanFieldConfig,
    MeanFieldError, MeanFieldState,
};
use fvi_core::models::{correlated_gaussian_target, CorrelatedGaussian};
use fvi_core::models::{sin_dataset, synthetic_sin_model};
use fvi_core::{
    run_meanfield, Conditioned, Dataset, DivergenceGenerator, DivergenceSpec, LogJoint,
};

fn corr() -> CorrelatedGaussian {
    correlated_gaussian_target(&[0.0, 0.0], &[vec![2.0, 0.6], vec![0.6, 2.0]]).unwrap()
}

fn gen(spec: &str) -> DivergenceGenerator {
    spec.parse::<DivergenceSpec>().unwrap().build().unwrap()
}

fn empty() -> Dataset {
    Dataset::new(Vec::new())
}

/// Max abs density difference over the nodes of a gridded factor.
fn grid_norm(got: &Factor, want: &Factor) -> f64 {
    let Factor::Gridded { nodes, log_density } = got else {
        panic!("expected a gridded factor")
    };
    nodes
        .iter()
        .zip(log_density)
        .map(|(&z, l)| (l.exp() - want.log_density(z).exp()).abs())
        .fold(0.0, f64::max)
}

fn normal(mean: f64, var: f64) -> Factor {
    Factor::Parametric { mean, var }
}

#[test]
fn cavi_closed_form_fixed_point() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let kl = gen("kl");
    let cfg = MeanFieldConfig::default();
    let out = run_meanfield(
        &p,
        MeanFieldState::gaussian(&[1.0, -2.0], &[1.0, 1.0]),
        &kl,
        &cfg,
    )
    .unwrap();
    assert!(out.converged && out.sweeps <= 50);
    for (m, v) in out.means().iter().zip(out.vars()) {
        assert!(m.abs() < 1e-6, "mean {m}");
        assert!((v - 0.5).abs() < 1e-6, "var {v}");
    }
    for w in out.bound_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-7, "{:?}", out.bound_trace);
    }
}

#[test]
fn independent_target_converges_in_one_sweep() {
    let target =
        correlated_gaussian_target(&[0.5, -1.0], &[vec![4.0, 0.0], vec![0.0, 0.25]]).unwrap();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let mut st = MeanFieldState::gaussian(&[3.0, 3.0], &[1.0, 1.0]);
    let cfg = MeanFieldConfig::default();
    for j in 0..2 {
        st.factors[j] = cavi_update_kl(&st, j, &p, &cfg).unwrap();
    }
    assert_eq!(st.factors[0], normal(0.5, 0.25));
    assert_eq!(st.factors[1], normal(-1.0, 4.0));
}

#[test]
fn gridded_cavi_matches_parametric() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig {
        closed_form: false,
        ..Default::default()
    };
    let kl = gen("kl");
    let mut gridded = MeanFieldState::gaussian(&[1.0, -0.5], &[0.8, 0.3]);
    let mut param = gridded.clone();
    for _ in 0..3 {
        for j in 0..2 {
            let g = update_rule_f1(&mut gridded, j, &p, &kl, &cfg).unwrap();
            assert!((g.mass() - 1.0).abs() < 1e-8);
            let c = cavi_update_kl(&param, j, &p, &cfg).unwrap();
            // the F1 update with KL is CAVI
            assert!(grid_norm(&g, &c) < 1e-6, "{}", grid_norm(&g, &c));
            gridded.factors[j] = g;
            param.factors[j] = c;
        }
    }
    for (a, b) in gridded.means().iter().zip(param.means()) {
        assert!((a - b).abs() < 1e-4);
    }
    for (a, b) in gridded.vars().iter().zip(param.vars()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn kl_forward_rule_is_cavi() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig::default();
    let mut st = MeanFieldState::gaussian(&[0.7, 0.2], &[0.6, 0.6]);
    let g = update_rule_f0(&mut st, 0, &p, &gen("kl_forward"), &cfg).unwrap();
    let c = cavi_update_kl(&st, 0, &p, &cfg).unwrap();
    assert!(grid_norm(&g, &c) < 1e-6);
}

#[test]
fn factorized_optimum_is_fixed_point() {
    let target =
        correlated_gaussian_target(&[0.5, -1.0], &[vec![4.0, 0.0], vec![0.0, 0.25]]).unwrap();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig::default();
    let opt = MeanFieldState::gaussian(&[0.5, -1.0], &[0.25, 4.0]);
    for spec in [
        "kl",
        "chi_n:n=2",
        "hellinger:alpha=3",
        "hellinger:alpha=0.5",
    ] {
        let g = gen(spec);
        for j in 0..2 {
            let mut st = opt.clone();
            let out = if spec == "kl" {
                update_rule_f1(&mut st, j, &p, &g, &cfg)
            } else {
                update_rule_f0(&mut st, j, &p, &g, &cfg)
            }
            .unwrap();
            assert!(grid_norm(&out, &opt.factors[j]) < 1e-8, "{spec} factor {j}");
        }
    }
}

#[test]
fn single_factor_recovers_posterior() {
    let model = synthetic_sin_model();
    let data = sin_dataset(5, 3);
    let p = Conditioned::new(&model, &data);
    let cfg = MeanFieldConfig::default();
    for spec in ["kl", "hellinger:alpha=2", "chi_n:n=2"] {
        let g = gen(spec);
        let mut st = MeanFieldState::gaussian(&[1.5], &[0.5]);
        let out = if spec == "kl" {
            update_rule_f1(&mut st, 0, &p, &g, &cfg)
        } else {
            update_rule_f0(&mut st, 0, &p, &g, &cfg)
        }
        .unwrap();
        let Factor::Gridded { nodes, log_density } = &out else {
            panic!()
        };
        let h = nodes[1] - nodes[0];
        let lj: Vec<f64> = nodes.iter().map(|&z| p.log_joint(&[z])).collect();
        let mx = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = lj.len();
        let z: f64 = lj
            .iter()
            .enumerate()
            .map(|(i, l)| (l - mx).exp() * if i == 0 || i + 1 == n { h / 2.0 } else { h })
            .sum();
        for (l, want) in log_density.iter().zip(&lj) {
            let want = (want - mx).exp() / z;
            assert!((l.exp() - want).abs() <= 1e-9 * (1.0 + want), "{spec}");
        }
    }
}

#[test]
fn chi2_converges_to_symmetric_fixed_point() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig {
        tol: 1e-12,
        ..Default::default()
    };
    let g = gen("chi_n:n=2");
    let mut st = MeanFieldState::gaussian(&[0.5, -0.3], &[0.6, 0.6]);
    let mut prev = meanfield_bound(&st, &p, &g, &cfg).unwrap();
    for _ in 0..3 {
        for j in 0..2 {
            st.factors[j] = update_rule_f0(&mut st, j, &p, &g, &cfg).unwrap();
            let b = meanfield_bound(&st, &p, &g, &cfg).unwrap();
            assert!(b <= prev + 1e-7, "{b} > {prev}");
            prev = b;
        }
    }
    let out = run_meanfield(&p, st, &g, &cfg).unwrap();
    assert!(out.converged, "{:?}", out.bound_trace);
    for m in out.means() {
        assert!(m.abs() < 1e-6, "mean {m}");
    }
    for w in out.bound_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-7);
    }
}

// The F0 update with Hellinger gives m_j = (E[(p/q_-j)^a])^(1/a): the a -> 0 limit
// is CAVI and the a -> 1 limit is the exact marginal of p.
#[test]
fn hellinger_limits() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig::default();
    let cavi = MeanFieldState::gaussian(&[0.0, 0.0], &[0.5, 0.5]);
    let sigma = target.covariance();

    let mut st = cavi.clone();
    let small = update_rule_f0(&mut st, 0, &p, &gen("hellinger:alpha=0.05"), &cfg).unwrap();
    assert!(grid_norm(&small, &cavi.factors[0]) < 1e-2);

    let mut st = cavi.clone();
    let near_one = update_rule_f0(&mut st, 0, &p, &gen("hellinger:alpha=1.05"), &cfg).unwrap();
    let marginal = normal(0.0, sigma[(0, 0)]);
    assert!(grid_norm(&near_one, &marginal) < 1e-2);
    assert!(grid_norm(&near_one, &cavi.factors[0]) > 1e-2);
}

#[test]
fn tv_is_rejected() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let st = MeanFieldState::gaussian(&[0.0, 0.0], &[1.0, 1.0]);
    let err = run_meanfield(&p, st, &gen("tv"), &MeanFieldConfig::default()).unwrap_err();
    assert!(matches!(err, MeanFieldError::Unsupported { .. }));
}

#[test]
fn infinite_tol_runs_one_sweep_and_is_deterministic() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let g = gen("hellinger:alpha=2");
    let cfg = MeanFieldConfig {
        tol: f64::INFINITY,
        ..Default::default()
    };
    let st = MeanFieldState::gaussian(&[0.3, 0.1], &[1.0, 1.0]);
    let a = run_meanfield(&p, st.clone(), &g, &cfg).unwrap();
    assert_eq!(a.sweeps, 1);
    assert_eq!(a.bound_trace.len(), 2);
    let b = run_meanfield(&p, st, &g, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unconverged_is_flagged() {
    let target = corr();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig {
        max_sweeps: 1,
        tol: 0.0,
        ..Default::default()
    };
    let out = run_meanfield(
        &p,
        MeanFieldState::gaussian(&[2.0, 2.0], &[1.0, 1.0]),
        &gen("kl"),
        &cfg,
    )
    .unwrap();
    assert!(!out.converged);
    assert_eq!(out.sweeps, 1);
}

#[test]
fn many_factors_use_monte_carlo() {
    let lam: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| if i == j { 2.0 } else { 0.2 }).collect())
        .collect();
    let target = correlated_gaussian_target(&[0.0; 4], &lam).unwrap();
    let data = empty();
    let p = Conditioned::new(&target, &data);
    let cfg = MeanFieldConfig {
        closed_form: false,
        max_sweeps: 4,
        mc_samples: 2000,
        ..Default::default()
    };
    let out = run_meanfield(
        &p,
        MeanFieldState::gaussian(&[0.2; 4], &[0.5; 4]),
        &gen("kl"),
        &cfg,
    )
    .unwrap();
    for (m, v) in out.means().iter().zip(out.vars()) {
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 0.5).abs() < 0.02, "var {v}");
    }
}
