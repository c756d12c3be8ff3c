use ase_bench::graph_case;
use ase_core::effects::{estimate_cf_ase, estimate_cf_ase_multi, estimate_cf_pse, estimate_tcfe};
use ase_core::AgentSet;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn graph_estimators(c: &mut Criterion) {
    let (scm, q) = graph_case(1000);
    let mut g = c.benchmark_group("graph_h1000");
    g.bench_function("tcfe", |b| {
        b.iter(|| estimate_tcfe(&scm, black_box(&q)).unwrap())
    });
    g.bench_function("cf_ase", |b| {
        b.iter(|| estimate_cf_ase(&scm, black_box(&q)).unwrap())
    });
    g.bench_function("cf_pse", |b| {
        b.iter(|| estimate_cf_pse(&scm, black_box(&q)).unwrap())
    });
    let mut pool = AgentSet::all(6);
    pool.0 &= !(1 << q.agent);
    let sets = AgentSet::nonempty_subsets(pool);
    g.bench_function("cf_ase_31_sets", |b| {
        b.iter(|| estimate_cf_ase_multi(&scm, black_box(&q), &sets).unwrap())
    });
    g.finish();
}

criterion_group!(benches, graph_estimators);
criterion_main!(benches);
