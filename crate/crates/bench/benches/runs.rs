use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dslam_core::harness::{
    evaluate_ate, generate, run_centralized, run_distributed, RunConfig, ScenarioSpec, Topology, TrajectoryKind,
};

fn short_loop() -> ScenarioSpec {
    let mut spec = ScenarioSpec::preset(TrajectoryKind::Loop, 1);
    spec.n_frames = 200;
    spec
}

fn runs(c: &mut Criterion) {
    let spec = short_loop();
    let sc = generate(&spec).expect("valid");
    let cfg = RunConfig::default();
    let mut g = c.benchmark_group("runs");
    g.sample_size(10);
    g.bench_function("generate_loop_200", |b| b.iter(|| generate(black_box(&spec))));
    g.bench_function("centralized_loop_200", |b| b.iter(|| run_centralized(black_box(&sc), &cfg)));
    g.bench_function("three_node_loop_200", |b| {
        b.iter(|| run_distributed(black_box(&sc), &Topology::three_node(), &cfg).expect("completes"))
    });
    g.finish();

    let long = generate(&ScenarioSpec::preset(TrajectoryKind::FigureEight, 2)).expect("valid");
    let est = run_centralized(&long, &cfg).tracker().trajectory.clone();
    c.bench_function("ate_figure_eight", |b| b.iter(|| evaluate_ate(black_box(&est), &long.ground_truth, true)));
}

criterion_group!(benches, runs);
criterion_main!(benches);
