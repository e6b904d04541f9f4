use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fjlab::layout::simplex_layout;
use fjlab::par::Execution;
use fjlab::sim::{replicate, AccessScheme, Mode, SimConfig};

fn replication(c: &mut Criterion) {
    let scheme = AccessScheme::Layout(simplex_layout(3).unwrap());
    let config = SimConfig::new(Mode::Fa, scheme, 1.2, 1.0).with_arrivals(20_000);
    let mut group = c.benchmark_group("replicate_8");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| replicate(&config, 8, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replication);
criterion_main!(benches);
