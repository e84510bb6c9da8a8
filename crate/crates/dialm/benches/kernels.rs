//! Sequential vs. data-parallel kernel comparison.
//!
//! Run with `cargo bench --bench kernels` (parallel feature on by default)
//! and `cargo bench --bench kernels --no-default-features` to see the
//! sequential fallback under the same harness. Within one build, the `seq`
//! and `par` groups time both code paths directly.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dialm::tensor::kernels;

fn filled(n: usize) -> Vec<f32> {
    (0..n).map(|i| ((i * 2654435761 % 1000) as f32 - 500.0) / 250.0).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_nn");
    for &dim in &[64usize, 128, 256] {
        let a = filled(dim * dim);
        let b = filled(dim * dim);
        let mut out = vec![0.0f32; dim * dim];
        group.bench_with_input(BenchmarkId::new("seq", dim), &dim, |bench, &d| {
            bench.iter(|| {
                kernels::matmul_nn_seq(black_box(&a), black_box(&b), d, d, d, &mut out);
            })
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", dim), &dim, |bench, &d| {
            bench.iter(|| {
                kernels::matmul_nn_par(black_box(&a), black_box(&b), d, d, d, &mut out);
            })
        });
    }
    group.finish();
}

fn bench_transposed_variants(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_transposed");
    let (m, k, n) = (192usize, 96usize, 192usize);
    let a_t = filled(k * m);
    let b = filled(k * n);
    let a = filled(m * k);
    let b_t = filled(n * k);
    let mut out = vec![0.0f32; m * n];
    group.bench_function("tn_seq", |bench| {
        bench.iter(|| kernels::matmul_tn_seq(black_box(&a_t), black_box(&b), m, k, n, &mut out))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("tn_par", |bench| {
        bench.iter(|| kernels::matmul_tn_par(black_box(&a_t), black_box(&b), m, k, n, &mut out))
    });
    group.bench_function("nt_seq", |bench| {
        bench.iter(|| kernels::matmul_nt_seq(black_box(&a), black_box(&b_t), m, k, n, &mut out))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("nt_par", |bench| {
        bench.iter(|| kernels::matmul_nt_par(black_box(&a), black_box(&b_t), m, k, n, &mut out))
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_matmul, bench_transposed_variants
}
criterion_main!(benches);
