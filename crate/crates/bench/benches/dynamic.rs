use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use quotalab::lab::{build_fixture, FixtureParams};
use quotalab::{counterexample_policy, simulate_discounted, value_iterate, DynamicMechanism};

fn dynamic(c: &mut Criterion) {
    let a = build_fixture("allocation", &FixtureParams::default()).unwrap();
    let alloc = DynamicMechanism::new(a.env, a.scf, 0.99).unwrap();
    c.bench_function("value_iterate/allocation beta=0.99 R=32", |b| {
        b.iter(|| value_iterate(black_box(&alloc), 32).unwrap())
    });
    let w = build_fixture("weak-cm", &FixtureParams::default()).unwrap();
    let weak = DynamicMechanism::new(w.env, w.scf, 0.99).unwrap();
    let policy = counterexample_policy(&weak);
    c.bench_function("simulate/weak-cm beta=0.99 x200", |b| {
        b.iter(|| simulate_discounted(black_box(&weak), &policy, None, 200, 3, 0).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = dynamic
}
criterion_main!(benches);
