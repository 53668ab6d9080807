//! Evaluation-protocol costs: nearest neighbor, clustering, and the
//! cluster-to-category assignment.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use simdistill_bench::{random_labels, score_matrix, unit_batch};
use simdistill_core::eval::{hungarian_max, kmeans, knn_classify};

fn bench_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval");
    group.sample_size(20);

    let train = unit_batch(2000, 64, 11);
    let val = unit_batch(500, 64, 12);
    let train_labels = random_labels(2000, 10, 13);
    let val_labels = random_labels(500, 10, 14);
    group.bench_function("knn_1nn_2000_train_500_val_d64", |b| {
        b.iter(|| black_box(knn_classify(&train, &train_labels, &val, &val_labels, 1).unwrap()))
    });

    let points = unit_batch(1000, 32, 15);
    group.bench_function("kmeans_1000x32_k40_50iters", |b| {
        b.iter(|| black_box(kmeans(&points, 40, 50, 0).unwrap()))
    });

    // cluster-to-category shape used by the alignment protocol
    let alignment = score_matrix(40, 10, 16).mapv(f64::abs);
    group.bench_function("hungarian_40x10", |b| {
        b.iter(|| black_box(hungarian_max(black_box(alignment.view())).unwrap()))
    });

    group.finish();
}

criterion_group!(benches, bench_eval);
criterion_main!(benches);
