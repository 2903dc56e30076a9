use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use dropsim_bench::{run_untraced, scheduler_churn};
use dropsim_core::{parse_scenario, DROP_SCENARIO, NODROP_SCENARIO};

fn scenarios(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario");
    group.sample_size(20);
    for (name, text) in [("drop", DROP_SCENARIO), ("nodrop", NODROP_SCENARIO)] {
        let s = parse_scenario(text).unwrap();
        group.bench_function(name, |b| b.iter(|| run_untraced(black_box(&s)).unwrap()));
    }
    group.finish();
}

fn scheduler(c: &mut Criterion) {
    let mut group = c.benchmark_group("scheduler");
    let total = 100_000;
    group.throughput(Throughput::Elements(total));
    for width in [16, 1024] {
        group.bench_with_input(BenchmarkId::new("churn", width), &width, |b, &w| {
            b.iter(|| scheduler_churn(w, total))
        });
    }
    group.finish();
}

criterion_group!(benches, scenarios, scheduler);
criterion_main!(benches);
