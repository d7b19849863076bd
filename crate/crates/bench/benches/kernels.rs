use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nqs_bench::{batch, ffnn_state, tfim};
use nqs_core::sampler::sample_batch;
use nqs_core::sr::{solve, EstimatorSet};
use nqs_core::{ProposalRule, SamplerConfig, SpinConfig, SrConfig};

fn amplitude(c: &mut Criterion) {
    let h = tfim(4);
    let state = ffnn_state(&h, 8.0, 1.0, 0);
    let sigma = SpinConfig::all_up(16);
    c.bench_function("log_psi_4x4_a8", |b| b.iter(|| state.log_psi(black_box(&sigma)).unwrap()));
    c.bench_function("log_psi_delta_4x4_a8", |b| {
        b.iter(|| state.log_psi_delta(black_box(&sigma), &[5]).unwrap())
    });
    c.bench_function("local_energy_4x4_a8", |b| b.iter(|| h.local_energy(&state, black_box(&sigma)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let h = tfim(4);
    let state = ffnn_state(&h, 8.0, 1.0, 0);
    let lattice = h.lattice();
    let mut group = c.benchmark_group("sample_1024");
    group.sample_size(10);
    group.bench_function("4x4_a8", |b| {
        b.iter(|| sample_batch(&state, &SamplerConfig::new(1024, ProposalRule::SingleFlip, 3), &lattice).unwrap())
    });
    group.finish();
}

fn sr_solve(c: &mut Criterion) {
    let h = tfim(4);
    let mut group = c.benchmark_group("sr_step_1024");
    group.sample_size(10);
    for keep in [1.0, 0.5, 0.0625] {
        let state = ffnn_state(&h, 8.0, keep, 0);
        let samples = batch(&h, &state, 1024);
        let cfg = SrConfig::default();
        group.bench_with_input(BenchmarkId::new("keep", keep), &keep, |b, _| {
            b.iter(|| {
                let est = EstimatorSet::from_batch(&h, &state, &samples).unwrap();
                solve(&est, &cfg).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, amplitude, sampling, sr_solve);
criterion_main!(benches);
