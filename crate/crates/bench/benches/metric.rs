use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grushin_mfg::coupling::random_density;
use grushin_mfg::metric::{cc_all_pairs, cc_sweep, d1_distance, TransportOptions};
use grushin_mfg_bench::Fixture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("cc_sweep");
    for n in [16, 32, 64] {
        let f = Fixture::new(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f.grid, |b, g| b.iter(|| cc_sweep(black_box(g), 0).unwrap()));
    }
    group.finish();
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("d1_16x16");
    group.sample_size(10);
    let f = Fixture::new(16);
    let table = cc_all_pairs(&f.grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_density(&f.grid, &mut rng);
    let b = random_density(&f.grid, &mut rng);
    for (name, opts) in [("exact", TransportOptions::exact()), ("entropic", TransportOptions::entropic())] {
        group.bench_function(name, |bench| bench.iter(|| d1_distance(black_box(&a), &b, &table, opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sweep, transport);
criterion_main!(benches);
