use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use radarnomaly::eval::ExperimentConfig;
use radarnomaly::field::train_field_model;
use radarnomaly::monitor::{Monitor, MonitorConfig};
use radarnomaly::timing::train_timing_model;
use radarnomaly::{FeatureSchema, Track};
use radarnomaly_bench::fixture;

fn scoring(c: &mut Criterion) {
    let (store, model) = fixture();
    let plots = store.interleaved();
    let windows: Vec<_> = store
        .tracks()
        .take(20)
        .flat_map(|t| model.timing.windows(t).unwrap())
        .collect();

    let mut g = c.benchmark_group("scoring");
    g.throughput(Throughput::Elements(1));
    g.bench_function("field_plot", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % plots.len();
            black_box(model.field.raw_score(plots[i]).unwrap())
        })
    });
    g.bench_function("timing_window", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % windows.len();
            black_box(model.timing.squared_error(&windows[i]).unwrap())
        })
    });
    g.throughput(Throughput::Elements(plots.len() as u64));
    g.sample_size(20);
    g.bench_function("monitor_corpus", |b| {
        b.iter_batched(
            || Monitor::new(&model, MonitorConfig::default()),
            |mut m| {
                for p in &plots {
                    black_box(m.process(p).unwrap());
                }
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn training(c: &mut Criterion) {
    let (store, _) = fixture();
    let tracks: Vec<Track> = store.tracks().cloned().collect();
    let schema = FeatureSchema::default_radar();
    let mut cfg = ExperimentConfig::default();
    cfg.train.max_epochs = 1;

    let mut g = c.benchmark_group("training_one_epoch");
    g.sample_size(10);
    g.bench_function("field", |b| {
        b.iter(|| train_field_model(&tracks, &schema, &cfg.field, &cfg.train, 42).unwrap())
    });
    g.bench_function("timing", |b| {
        b.iter(|| train_timing_model(&tracks, &schema, &cfg.timing, &cfg.train, 42).unwrap())
    });
    g.finish();
}

criterion_group!(benches, scoring, training);
criterion_main!(benches);
