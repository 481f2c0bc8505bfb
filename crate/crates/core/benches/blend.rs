use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plugblend_core::eval::{equal_pair_configs, heatmap, ppl_grid, shuffled_baseline};
use plugblend_core::{
    blend_step, par, toy, ControlCode, ControlConfig, GenerationParams, LogitVector,
    PosteriorMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POOLS: [(&str, Option<usize>); 2] = [("sequential", Some(1)), ("parallel", None)];

fn bench_heatmap(c: &mut Criterion) {
    let world = toy::agnews();
    let providers = world.providers();
    let clf = world.classifier();
    let prompts = toy::prompts();
    let code = |s: &str| ControlCode::new(s).unwrap();
    let pairs = vec![
        (code("Sports"), code("Business")),
        (code("Science"), code("World")),
    ];
    let params = GenerationParams::default();
    let mut group = c.benchmark_group("heatmap");
    group.sample_size(10);
    for (name, jobs) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_jobs(jobs, || {
                    heatmap(
                        &prompts,
                        &pairs,
                        &[1.0, 2.0],
                        1.0,
                        &providers,
                        &clf,
                        &params,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_ppl_grid(c: &mut Criterion) {
    let world = toy::agnews();
    let providers = world.providers();
    let configs = equal_pair_configs(providers.guide().codes());
    let prompts = toy::prompts();
    let params = GenerationParams::default();
    let mut group = c.benchmark_group("ppl_grid");
    group.sample_size(10);
    for (name, jobs) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_jobs(jobs, || {
                    ppl_grid(
                        &prompts,
                        &configs,
                        &[0.0, 1.0, 2.0, 4.0],
                        &providers,
                        &params,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_baseline(c: &mut Criterion) {
    let world = toy::agnews();
    let clf = world.classifier();
    let stories = toy::random_stories(2000, 5, 1);
    let mut group = c.benchmark_group("shuffled_baseline");
    for (name, jobs) in POOLS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_jobs(jobs, || {
                    shuffled_baseline(&stories, "Sports", "Business", &clf, 7).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_blend_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = 50_000;
    let k = 4;
    let codes: Vec<ControlCode> = (0..k)
        .map(|i| ControlCode::new(format!("c{i}")).unwrap())
        .collect();
    let base = LogitVector::new((0..v).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
    let rows = (0..k)
        .map(|_| (0..v).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let post = PosteriorMatrix::new(codes.clone(), rows).unwrap();
    let cfg = ControlConfig::new(codes.into_iter().map(|c| (c, 1.0)).collect(), 2.0).unwrap();
    c.bench_function("blend_step/v50k_k4", |b| {
        b.iter(|| blend_step(&base, &post, &cfg, 1e-10).unwrap())
    });
}

criterion_group!(
    benches,
    bench_heatmap,
    bench_ppl_grid,
    bench_baseline,
    bench_blend_step
);
criterion_main!(benches);
