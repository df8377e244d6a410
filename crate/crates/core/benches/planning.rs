use std::hint::black_box;

use blackstart::expand_node_breaker;
use blackstart::par::Execution;
use blackstart::sequencer::{run_with, Config};
use blackstart::synth::{synth_case, SynthSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn subarea_planning(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan");
    group.sample_size(10);
    for zones in [2, 6] {
        let net = expand_node_breaker(&synth_case(&SynthSpec {
            zones,
            buses_per_zone: 8,
            seed: 42,
        }))
        .unwrap();
        let cfg = Config::default();
        for (name, exec) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(
                BenchmarkId::new(name, format!("{zones}x8")),
                &net,
                |b, net| b.iter(|| run_with(black_box(net), &[], &cfg, exec).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, subarea_planning);
criterion_main!(benches);
