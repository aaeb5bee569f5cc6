use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qsb_core::grid::{assemble_kernel_matrix_with, propagate};
use qsb_core::{build_grid, eigendecompose_q, Exec};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn assembly(c: &mut Criterion) {
    let spec = eigendecompose_q(&nalgebra::dmatrix![2.0], None).unwrap();
    let mut group = c.benchmark_group("assemble_kernel_matrix");
    group.sample_size(10);
    for n in [201usize, 801] {
        let g = build_grid(&[(-2.5, 2.5)], &[n]).unwrap();
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &g, |b, g| {
                b.iter(|| assemble_kernel_matrix_with(g, 0.0, 1.0, &spec, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn matvec(c: &mut Criterion) {
    let spec = eigendecompose_q(&nalgebra::dmatrix![2.0, 0.5; 0.5, 1.0], None).unwrap();
    let g = build_grid(&[(-3.0, 3.0), (-3.0, 3.0)], &[48, 48]).unwrap();
    let k = assemble_kernel_matrix_with(&g, 0.0, 1.0, &spec, Exec::Parallel).unwrap();
    let f: Vec<f64> = (0..g.len()).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
    let mut group = c.benchmark_group("kernel_apply_2304");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| k.forward_with(black_box(&f), exec).unwrap()));
        group.bench_function(BenchmarkId::new("backward", name), |b| b.iter(|| k.backward_with(black_box(&f), exec).unwrap()));
        group.bench_function(BenchmarkId::new("matrix_free", name), |b| {
            b.iter(|| propagate(&g, &spec, 1.0, black_box(&f), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, matvec);
criterion_main!(benches);
