use criterion::{criterion_group, criterion_main, Criterion};
use fvi_core::meanfield::MeanFieldState;
use fvi_core::models::{correlated_gaussian_target, sin_dataset, synthetic_sin_model};
use fvi_core::oracle::evidence_quadrature;
use fvi_core::{
    grad_iw_reparam, grad_score, iw_bound_mc, run_meanfield, uniform_width_family, Conditioned,
    Dataset, DivergenceGenerator, DivergenceSpec, McConfig, MeanFieldConfig,
};
use std::hint::black_box;

fn spec(s: &str) -> (DivergenceGenerator, fvi_core::Direction) {
    let sp: DivergenceSpec = s.parse().unwrap();
    (sp.build().unwrap(), sp.direction)
}

fn bounds(c: &mut Criterion) {
    let m = synthetic_sin_model();
    let d = sin_dataset(50, 1);
    let t = Conditioned::new(&m, &d);
    let f = uniform_width_family();
    let mut group = c.benchmark_group("iw_bound_mc");
    for s in ["kl", "chi_n:n=2/forward", "tv"] {
        let (g, dir) = spec(s);
        group.bench_function(s, |b| {
            b.iter(|| {
                iw_bound_mc(
                    &g,
                    dir,
                    &t,
                    &f,
                    black_box(&[0.7]),
                    McConfig::new(4096, 4, 0),
                )
            })
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let m = synthetic_sin_model();
    let d = sin_dataset(500, 0);
    let t = Conditioned::new(&m, &d);
    let f = uniform_width_family();
    let (g, dir) = spec("kl");
    c.bench_function("grad_iw_reparam K=1000 L=3", |b| {
        b.iter(|| {
            grad_iw_reparam(
                &g,
                dir,
                &t,
                &f,
                black_box(&[0.7]),
                McConfig::new(1000, 3, 0),
            )
        })
    });
    c.bench_function("grad_score K=1000", |b| {
        b.iter(|| grad_score(&g, dir, &t, &f, black_box(&[0.7]), 1000, 0))
    });
}

fn meanfield(c: &mut Criterion) {
    let target =
        correlated_gaussian_target(&[0.0, 0.0], &[vec![2.0, 0.6], vec![0.6, 2.0]]).unwrap();
    let data = Dataset::new(Vec::new());
    let p = Conditioned::new(&target, &data);
    let mut group = c.benchmark_group("run_meanfield");
    group.sample_size(10);
    for s in ["kl", "chi_n:n=2"] {
        let (g, _) = spec(s);
        let cfg = MeanFieldConfig {
            closed_form: false,
            max_sweeps: 5,
            ..MeanFieldConfig::default()
        };
        group.bench_function(s, |b| {
            b.iter(|| {
                let init = MeanFieldState::gaussian(&[0.5, -0.3], &[0.6, 0.6]);
                run_meanfield(&p, init, &g, &cfg)
            })
        });
    }
    group.finish();
}

fn quadrature(c: &mut Criterion) {
    let m = synthetic_sin_model();
    let d = sin_dataset(50, 1);
    c.bench_function("evidence_quadrature sin n=50", |b| {
        b.iter(|| evidence_quadrature(&m, black_box(&d)))
    });
}

criterion_group!(benches, bounds, gradients, meanfield, quadrature);
criterion_main!(benches);
