use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use evblur::filter_engine::{discretize, estimate_blurred_output, step, FilterState};
use evblur::numerics::mat_exp;
use evblur::simulator::{simulate, Radiometry, SimOptions};
use evblur::{EventCameraConfig, PixelBandwidthParams};
use evblur_bench::{block_matrix, small_bar};

fn kernels(c: &mut Criterion) {
    let params = PixelBandwidthParams::default();
    let u = params.effective_log_radiance(200.0);

    let z = block_matrix();
    c.bench_function("mat_exp_6x6", |b| b.iter(|| mat_exp(black_box(&z)).unwrap()));

    c.bench_function("discretize", |b| b.iter(|| discretize(&params, black_box(u), black_box(1e-5)).unwrap()));

    let d = discretize(&params, u, 1e-5).unwrap();
    let s0 = FilterState::steady(u - 0.5, 0.0);
    c.bench_function("step", |b| b.iter(|| step(black_box(&s0), u, u, &d)));

    c.bench_function("blurred_output_n30", |b| {
        b.iter(|| estimate_blurred_output(&params, 0.05, 0.0, 30, |t| u + (200.0 * t).sin()).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let params = PixelBandwidthParams::default();
    let camera = EventCameraConfig::default();
    let radiometry = Radiometry::default();
    let scene = small_bar(16);
    let mut g = c.benchmark_group("simulate_bar_16x16");
    g.sample_size(10);
    for threads in [1, 0] {
        let opts = SimOptions { threads, ..SimOptions::default() };
        g.bench_function(format!("threads_{threads}"), |b| {
            b.iter(|| simulate(&scene, &params, &camera, &radiometry, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, simulation);
criterion_main!(benches);
