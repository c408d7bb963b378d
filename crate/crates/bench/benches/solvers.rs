use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dpmfuse::denoiser::Condition;
use dpmfuse::inversion::{invert_ode, invert_sde, reconstruct_exact};
use dpmfuse::lab::{generate_signal, spectrogram, SignalKind};
use dpmfuse::sampler::{pure_noise, sample, SamplerConfig, SolverMode};
use dpmfuse::schedule::{NoiseSchedule, ScheduleKind};
use dpmfuse::{fuse, FusionConfig};
use dpmfuse_bench::{clean_latent, gaussian_oracle};

const DIM: usize = 64;

fn grid() -> NoiseSchedule {
    NoiseSchedule::build(ScheduleKind::LogLinearLambda, 201, 10.0, -10.0).unwrap()
}

fn schedules(c: &mut Criterion) {
    let mut g = c.benchmark_group("schedule_build");
    for n in [200, 1000] {
        for kind in [ScheduleKind::LogLinearLambda, ScheduleKind::Cosine] {
            g.bench_with_input(BenchmarkId::new(format!("{kind:?}"), n), &n, |b, &n| {
                b.iter(|| NoiseSchedule::build(kind, n, 10.0, -10.0).unwrap())
            });
        }
    }
    g.finish();
}

fn inversion(c: &mut Criterion) {
    let s = grid();
    let x0 = clean_latent(DIM, 1);
    c.bench_function("invert_sde_200", |b| b.iter(|| invert_sde(black_box(&x0), &s, 200).unwrap()));
    c.bench_function("invert_ode_200", |b| b.iter(|| invert_ode(black_box(&x0), &s, 200).unwrap()));
    let rec = invert_ode(&x0, &s, 200).unwrap();
    let cfg = SamplerConfig::new(SolverMode::Ode, 1, 0);
    c.bench_function("reconstruct_exact_200", |b| {
        b.iter(|| reconstruct_exact(black_box(&rec), &cfg, &s).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let s = grid();
    let oracle = gaussian_oracle(DIM);
    let start = pure_noise(0, DIM, &s);
    let mut g = c.benchmark_group("sample_200");
    for mode in [SolverMode::Ode, SolverMode::Sde] {
        for order in 1..=3 {
            let cfg = SamplerConfig::new(mode, order, 0);
            g.bench_function(BenchmarkId::new(mode.to_string(), order), |b| {
                b.iter(|| sample(&start, &oracle, &Condition::null(), &cfg, &s, 0).unwrap())
            });
        }
    }
    g.finish();
}

fn fusion(c: &mut Criterion) {
    let s = grid();
    let x0 = clean_latent(DIM, 2);
    let x_ref = clean_latent(DIM, 3).values;
    let rec = invert_ode(&x0, &s, 200).unwrap();
    let oracle = dpmfuse::DenoiserOracle::memorizing(x_ref.clone(), 1.0);
    let cfg = FusionConfig::new(Some(120), SolverMode::Sde, 3, 5);
    c.bench_function("fuse_t120_order3", |b| b.iter(|| fuse(&rec, &oracle, &x_ref, &cfg, &s).unwrap()));
}

fn lab(c: &mut Criterion) {
    let signal = generate_signal(SignalKind::Chirp, 0, 4096).unwrap();
    c.bench_function("spectrogram_4096_1024_256", |b| {
        b.iter(|| spectrogram(black_box(&signal), 1024, 256).unwrap())
    });
}

criterion_group!(benches, schedules, inversion, sampling, fusion, lab);
criterion_main!(benches);
