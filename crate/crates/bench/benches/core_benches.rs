//! Benchmarks for the numerical hot paths: structured-covariance algebra,
//! the conditional sampler, kernel scoring and the Monte Carlo test.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use kscore::inference::{test_statistic_with, ConditionalContext, PsiSource};
use kscore::kernel::{kernel_score, KernelSpec};
use kscore::posterior::PriorConfig;
use kscore::rng::stream_rng;
use kscore::score_model::{
    apply_sigma_inverse, pair_count, simulate_partitioned_scores, simulate_score_vector,
    sums_of_squares, ModelParams,
};
use kscore::spectra::{generate_synthetic_library, SyntheticConfig};
use nalgebra::{DMatrix, DVector};

fn params() -> ModelParams {
    ModelParams::new(1.0, 0.4, 0.2).expect("valid parameters")
}

fn bench_sigma_inverse(c: &mut Criterion) {
    let mut group = c.benchmark_group("sigma_inverse");
    for n_objects in [5usize, 10, 15, 25] {
        let n = pair_count(n_objects);
        let v = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let p = params();
        group.bench_function(format!("spectral_n{n_objects}"), |b| {
            b.iter(|| apply_sigma_inverse(black_box(&p), n_objects, black_box(&v)).unwrap())
        });
        // Dense baseline: build and factor the covariance every call.
        group.bench_function(format!("dense_cholesky_n{n_objects}"), |b| {
            let mut sigma = DMatrix::from_element(n, n, 0.0);
            let pairs = kscore::score_model::pair_list(n_objects);
            for (r, &(i, j)) in pairs.iter().enumerate() {
                for (col, &(k, l)) in pairs.iter().enumerate() {
                    let mut shared = 0.0;
                    if i == k || i == l {
                        shared += 1.0;
                    }
                    if j == k || j == l {
                        shared += 1.0;
                    }
                    sigma[(r, col)] = shared * p.sigma2_a;
                }
                sigma[(r, r)] += p.sigma2_e;
            }
            b.iter_batched(
                || sigma.clone(),
                |s| {
                    nalgebra::Cholesky::new(s)
                        .expect("positive definite")
                        .solve(black_box(&v))
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_conditional_moments(c: &mut Criterion) {
    let p = params();
    let mut rng = stream_rng(1, 0);
    let (_, s_n) = simulate_partitioned_scores(&p, 10, 3, &mut rng);
    let ctx = ConditionalContext::new(10, 3).unwrap();
    let scored = ctx.with_scores(&s_n).unwrap();
    c.bench_function("conditional_moments_n10_m3", |b| {
        b.iter(|| scored.moments(black_box(&p)).unwrap())
    });
}

fn bench_sums_of_squares(c: &mut Criterion) {
    let p = params();
    let mut rng = stream_rng(2, 0);
    let s = simulate_score_vector(&p, 15, &mut rng);
    c.bench_function("sums_of_squares_n15", |b| {
        b.iter(|| sums_of_squares(black_box(&s), 15).unwrap())
    });
}

fn bench_test_statistic(c: &mut Criterion) {
    let p = params();
    let mut rng = stream_rng(3, 0);
    let (s_m, s_n) = simulate_partitioned_scores(&p, 5, 3, &mut rng);
    let prior = PriorConfig::default_for(&s_n, 5).unwrap();
    c.bench_function("test_statistic_n5_m3_k1000", |b| {
        b.iter(|| {
            test_statistic_with(
                black_box(&s_m),
                black_box(&s_n),
                5,
                3,
                PsiSource::Posterior(&prior),
                1000,
                9,
            )
            .unwrap()
        })
    });
}

fn bench_kernel(c: &mut Criterion) {
    let library = generate_synthetic_library(
        &SyntheticConfig {
            n_sources: 2,
            n_replicates: 2,
            grid_len: 2000,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let ids: Vec<String> = library.source_ids().map(String::from).collect();
    let a = &library.spectra_of(&ids[0]).unwrap()[0];
    let b_sp = &library.spectra_of(&ids[1]).unwrap()[0];
    let spec = KernelSpec::default();
    c.bench_function("kernel_score_grid2000", |bench| {
        bench.iter(|| kernel_score(black_box(a), black_box(b_sp), &spec).unwrap())
    });
}

criterion_group!(
    benches,
    bench_sigma_inverse,
    bench_conditional_moments,
    bench_sums_of_squares,
    bench_test_statistic,
    bench_kernel
);
criterion_main!(benches);
