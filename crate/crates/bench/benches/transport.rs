use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use quotalab::{nearest_optimal_coupling, optimal_mass_on_set, solve_ot, CostMatrix, Extremum, PairSet};

fn staircase(m: usize) -> CostMatrix {
    CostMatrix::from_table(
        (0..m)
            .map(|l| {
                (0..m)
                    .map(|p| match p.cmp(&l) {
                        std::cmp::Ordering::Less => (m - 1) as f64,
                        std::cmp::Ordering::Equal => 0.0,
                        std::cmp::Ordering::Greater => -1.0,
                    })
                    .collect()
            })
            .collect(),
    )
    .unwrap()
}

fn skewed(m: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=m).map(|i| i as f64).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn transport(c: &mut Criterion) {
    let mut g = c.benchmark_group("transport");
    for m in [3usize, 5, 8] {
        let cost = staircase(m);
        let p = skewed(m);
        let q = vec![1.0 / m as f64; m];
        g.bench_with_input(BenchmarkId::new("solve_ot", m), &m, |b, _| {
            b.iter(|| solve_ot(black_box(&cost), &p, &q).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("diagonal_max", m), &m, |b, _| {
            b.iter(|| optimal_mass_on_set(black_box(&cost), &p, &q, &PairSet::diagonal(m), Extremum::Max).unwrap())
        });
        let gamma = solve_ot(&cost, &p, &q).unwrap().coupling;
        g.bench_with_input(BenchmarkId::new("nearest", m), &m, |b, _| {
            b.iter(|| nearest_optimal_coupling(black_box(&cost), &gamma, &q, &p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, transport);
criterion_main!(benches);
