use abmil::train::{accum_grad, chunk_size_for, full_bag_grad};
use abmil_bench::{bench_bag, bench_params};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn gradient_strategies(c: &mut Criterion) {
    let dim = 16;
    let mut group = c.benchmark_group("bag_gradient");
    for &n in &[32usize, 128] {
        let bag = bench_bag(1, n, dim);
        group.bench_with_input(BenchmarkId::new("full_bag", n), &bag, |b, bag| {
            let mut params = bench_params(1, dim);
            b.iter(|| full_bag_grad(&mut params, bag).unwrap());
        });
        for &alpha in &[25.0f64, 100.0] {
            let chunk = chunk_size_for(n, alpha);
            group.bench_with_input(
                BenchmarkId::new(format!("accumulate_{alpha}pct"), n),
                &bag,
                |b, bag| {
                    let mut params = bench_params(1, dim);
                    b.iter(|| accum_grad(&mut params, bag, chunk).unwrap());
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, gradient_strategies);
criterion_main!(benches);
