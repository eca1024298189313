use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dslam_bench::strip_problem;

fn bundle_adjust(c: &mut Criterion) {
    let mut g = c.benchmark_group("bundle_adjust");
    // A local window and a small global problem.
    for (poses, points) in [(4, 60), (12, 150), (40, 400)] {
        let problem = strip_problem(poses, points, 1.6, 1);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{poses}x{points}")), &problem, |b, p| {
            b.iter(|| {
                let mut p = p.clone();
                black_box(p.solve(10, 1e-6).expect("well posed"))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bundle_adjust);
criterion_main!(benches);
