use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fbdrift_bench::mollified_hardy;
use fbdrift_core::drift::{estimate_form_bound, TestFunctionFamily};
use fbdrift_core::pde::{solve_terminal, FnSource, GridSettings};
use fbdrift_core::sde::{simulate_ensemble, EnsembleSettings, StartSpec};
use fbdrift_core::{Drift, DriftSpec};

fn drift_eval(c: &mut Criterion) {
    let field = Drift::new(&mollified_hardy(0.1, 16.0, 1.0 / 256.0)).unwrap();
    let mut out = [0.0; 3];
    c.bench_function("mollified_hardy_eval", |b| {
        b.iter(|| {
            field.eval_into(0.0, black_box(&[0.1, 0.02, -0.03]), &mut out);
            out[0]
        })
    });
}

fn form_bound(c: &mut Criterion) {
    let fam = TestFunctionFamily::hardy_quasi_optimizers(3, 1.0).unwrap();
    let spec = DriftSpec::hardy(0.25, 3, 1.0);
    c.bench_function("hardy_form_bound", |b| {
        b.iter(|| {
            estimate_form_bound(black_box(&spec), &fam, &[0.0])
                .unwrap()
                .delta_hat
        })
    });
}

fn ensemble(c: &mut Criterion) {
    let spec = DriftSpec::gaussian(vec![1.0, 0.0, 0.0], 0.5, 1.5);
    let set = EnsembleSettings::new(0.01, 500, 1).with_stride(10);
    let start = StartSpec::point(vec![0.0; 3]);
    c.bench_function("ensemble_500x100", |b| {
        b.iter(|| {
            simulate_ensemble(&spec, &start, 0.0, 1.0, &set)
                .unwrap()
                .positions
                .len()
        })
    });
}

fn heat_solve(c: &mut Criterion) {
    let src = FnSource(|_t: f64, x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>() / 0.32).exp());
    let zero = DriftSpec::zero(3, 1.0);
    let grid = GridSettings::new(3, 2.0, 16);
    let mut g = c.benchmark_group("pde");
    g.sample_size(10);
    g.bench_function("terminal_16_cells", |b| {
        b.iter(|| {
            solve_terminal(&zero, &src, 0.0, 0.1, &grid)
                .unwrap()
                .energy
                .residual
        })
    });
    g.finish();
}

criterion_group!(benches, drift_eval, form_bound, ensemble, heat_solve);
criterion_main!(benches);
