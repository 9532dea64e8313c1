use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use cohwash_bench::fixture;
use cohwash_core::baselines::{asr_calibrate, asr_clean, fastica_fit, IcaConfig, ASR_DEFAULT_CUTOFF};
use cohwash_core::coherence::{naive, CoherenceConfig, CoherenceEngine};
use cohwash_core::net::{ArtifactNet, NetConfig};

fn coherence(c: &mut Criterion) {
    let fx = fixture(12.0);
    let frame = &fx.frames[3];
    let engine = CoherenceEngine::new(CoherenceConfig::default(), frame.eeg.shape()[1]).unwrap();
    let rows = |t: &cohwash_core::Tensor| (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    let (eeg, imu) = (rows(&frame.eeg), rows(&frame.imu));
    let mut g = c.benchmark_group("coherence");
    g.bench_function("engine_frame", |b| b.iter(|| engine.score(black_box(&frame.eeg), black_box(&frame.imu)).unwrap()));
    g.bench_function("naive_frame", |b| b.iter(|| naive::coherence(black_box(&eeg), black_box(&imu), 40)));
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let fx = fixture(60.0);
    let calib = fx.eeg.slice(0, 30 * 200).unwrap();
    let state = asr_calibrate(&calib, ASR_DEFAULT_CUTOFF).unwrap();
    let mut g = c.benchmark_group("baselines");
    g.sample_size(10);
    g.bench_function("asr_calibrate_30s", |b| b.iter(|| asr_calibrate(black_box(&calib), ASR_DEFAULT_CUTOFF).unwrap()));
    g.bench_function("asr_clean_60s", |b| b.iter(|| asr_clean(black_box(&fx.eeg), &state).unwrap()));
    g.bench_function("fastica_60s", |b| b.iter(|| fastica_fit(black_box(&fx.eeg), &IcaConfig::default()).unwrap()));
    g.finish();
}

fn network(c: &mut Criterion) {
    let fx = fixture(10.0);
    let net = ArtifactNet::new(NetConfig::default()).unwrap();
    let mut g = c.benchmark_group("network");
    g.sample_size(10);
    g.bench_function("denoise_10_frames", |b| b.iter(|| net.denoise(black_box(&fx.frames)).unwrap()));
    g.finish();
}

criterion_group!(benches, coherence, baselines, network);
criterion_main!(benches);
