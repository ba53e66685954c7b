use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hnirm_core::postprocess::{kruskal_mds, spectral_cluster};
use hnirm_core::within_school::pairwise_distances;
use nalgebra::DMatrix;

fn configuration(n: usize) -> DMatrix<f64> {
    // Three loose rings.
    DMatrix::from_fn(n, 2, |r, c| {
        let t = r as f64 * 2.399;
        let radius = 1.0 + (r % 3) as f64 + 0.1 * ((r * 7919) % 13) as f64 / 13.0;
        if c == 0 {
            radius * t.cos()
        } else {
            radius * t.sin()
        }
    })
}

fn embedding(c: &mut Criterion) {
    let mut group = c.benchmark_group("postprocess");
    for n in [20, 72] {
        let dist = pairwise_distances(&configuration(n));
        group.bench_with_input(BenchmarkId::new("kruskal_mds", n), &dist, |b, d| {
            b.iter(|| kruskal_mds(black_box(d), 2).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("spectral_cluster", n), &dist, |b, d| {
            b.iter(|| spectral_cluster(black_box(d), 3, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, embedding);
criterion_main!(benches);
