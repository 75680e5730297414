use criterion::{criterion_group, criterion_main, Criterion};
use gdfcv_bench::gaussian;
use gdfcv_core::learners::Glm;
use gdfcv_core::{akaike_weights, estimate_gdf, repeated_cv, Family, KSpec, PlanTemplate};

fn gdf(c: &mut Criterion) {
    let data = gaussian(250);
    let mut group = c.benchmark_group("gdf");
    group.sample_size(10);
    for k in [1usize, 50, 250] {
        let plan = PlanTemplate {
            k: KSpec::Count(k),
            perturbations_per_datum: 10,
            ..PlanTemplate::default()
        }
        .resolve(data.n(), Family::Gaussian, 7)
        .unwrap();
        group.bench_function(format!("glm_k{k}"), |b| {
            b.iter(|| estimate_gdf(&Glm::default(), &data, &plan).unwrap())
        });
    }
    group.finish();
}

fn cv(c: &mut Criterion) {
    let data = gaussian(250);
    let mut group = c.benchmark_group("cv");
    group.sample_size(10);
    group.bench_function("glm_10fold_x10", |b| {
        b.iter(|| repeated_cv(&Glm::default(), &data, 10, 10, 3).unwrap())
    });
    group.finish();
}

fn weights(c: &mut Criterion) {
    let values: Vec<f64> = (0..64)
        .map(|i| 500.0 + (i as f64 * 0.37).sin() * 20.0)
        .collect();
    c.bench_function("akaike_weights_64", |b| {
        b.iter(|| akaike_weights(&values).unwrap())
    });
}

criterion_group!(benches, gdf, cv, weights);
criterion_main!(benches);
