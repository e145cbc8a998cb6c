use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fmeasure::covariance::estimate_error_kernel;
use fmeasure::sim::{simulate_dataset, sqexp_kernel, Setting, SimScenario};
use fmeasure::{eigen_decompose, fit_surrogate, run_scenario, Family, Grid};

fn scenario(family: Family, n: usize) -> SimScenario {
    let mut s = SimScenario::new(family, Setting::SqExp, n, 5.0, 0.08);
    s.reps = 1;
    s.replicates_per_subject = 10;
    s
}

pub fn criterion_benchmark(c: &mut Criterion) {
    for m in [51, 101, 201] {
        let grid = Grid::unit(m).unwrap();
        let kernel = sqexp_kernel(5.0, 0.08, &grid).unwrap();
        c.bench_with_input(BenchmarkId::new("eigen_decompose", m), &kernel, |b, k| {
            b.iter(|| eigen_decompose(black_box(k), 20))
        });
    }

    let s = scenario(Family::Gaussian, 500);
    let data = simulate_dataset(&s, 0).unwrap();
    c.bench_function("estimate_error_kernel/n500", |b| {
        b.iter(|| estimate_error_kernel(black_box(&data.replicates)))
    });

    let kernel = estimate_error_kernel(&data.replicates).unwrap();
    for family in [Family::Gaussian, Family::Binary] {
        let mut s = scenario(family, 500);
        s.binary_link = fmeasure::sim::BinaryLink::LinearLogistic;
        let d = simulate_dataset(&s, 0).unwrap();
        let cfg = s.pipeline_config();
        c.bench_function(&format!("fit_surrogate/{}", family.as_str()), |b| {
            b.iter(|| fit_surrogate(black_box(&d.w), &kernel, &d.y, None, &cfg))
        });
    }

    let mut group = c.benchmark_group("scenario_rep");
    group.sample_size(10);
    for n in [250, 1000] {
        let s = scenario(Family::Gaussian, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| b.iter(|| run_scenario(s)));
    }
    group.finish();
}

criterion_group!(benches, criterion_benchmark);
criterion_main!(benches);
