//! Per-path costs of the four hot loops: fGn sampling, signature table
//! assembly plus the Hölder sweep, one-step scheme integration, and the
//! truncated modified-equation solve.

use criterion::{criterion_group, criterion_main, Criterion};
use rough_milstein_bench::{sample_path, sampler};
use rough_milstein_core::modified_eq;
use rough_milstein_core::models::smooth_bounded_model;
use rough_milstein_core::paths::PiecewiseLinearPath;
use rough_milstein_core::schemes::{self, IntegrateOptions, Scheme};
use rough_milstein_core::signature::{holder_seminorm, SigIncrementTable};

fn as_pwl(path: &rough_milstein_core::fbm::FbmPath) -> PiecewiseLinearPath {
    let values: Vec<f64> = (0..=path.n_steps())
        .flat_map(|k| path.node(k).to_vec())
        .collect();
    PiecewiseLinearPath::from_nodes(path.step(), path.dim(), values).unwrap()
}

fn bench_fbm_sampling(c: &mut Criterion) {
    let sampler = sampler(0.40, 4096, 2);
    let mut index = 0u64;
    c.bench_function("fbm_path_h040_n4096_d2", |b| {
        b.iter(|| {
            index += 1;
            sampler.path(index).unwrap()
        })
    });
}

fn bench_signature(c: &mut Criterion) {
    let pwl = as_pwl(&sample_path(0.35, 512, 2));
    c.bench_function("sig_table_build_n512_d2", |b| {
        b.iter(|| SigIncrementTable::build(&pwl))
    });
    let table = SigIncrementTable::build(&pwl);
    c.bench_function("holder_seminorm_n512_d2", |b| {
        b.iter(|| holder_seminorm(&table, 0.30).unwrap())
    });
}

fn bench_schemes(c: &mut Criterion) {
    let model = smooth_bounded_model();
    let path = sample_path(0.40, 4096, model.noise_dim());
    let options = IntegrateOptions::default();
    c.bench_function("milstein_n4096_smooth_bounded", |b| {
        b.iter(|| schemes::integrate(Scheme::ModifiedMilstein, &path, &model, &options).unwrap())
    });
}

fn bench_modified_eq(c: &mut Criterion) {
    let model = smooth_bounded_model();
    let coeffs = modified_eq::build_coefficients(&model);
    let path = sample_path(0.40, 256, model.noise_dim());
    c.bench_function("tme_solve_n256_substeps16", |b| {
        b.iter(|| modified_eq::tme_solve(&path, &coeffs, 16).unwrap())
    });
}

criterion_group!(
    benches,
    bench_fbm_sampling,
    bench_signature,
    bench_schemes,
    bench_modified_eq
);
criterion_main!(benches);
