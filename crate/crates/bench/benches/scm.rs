use ase_bench::graph_case;
use ase_core::rng::chunk_rng;
use ase_core::InterventionSet;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn abduction_and_simulation(c: &mut Criterion) {
    let (scm, q) = graph_case(1);
    let tau = q.trajectory.clone().unwrap();
    let posterior = scm.posterior(&tau).unwrap();
    let none = InterventionSet::new(scm.layout());
    let mut rng = chunk_rng(3, 0);
    c.bench_function("posterior_build", |b| {
        b.iter(|| scm.posterior(black_box(&tau)).unwrap())
    });
    c.bench_function("posterior_sample", |b| {
        b.iter(|| posterior.sample(&mut rng))
    });
    let u = posterior.sample(&mut rng);
    c.bench_function("simulate", |b| {
        b.iter(|| scm.simulate_with_noise(black_box(&u), &none).unwrap())
    });
}

criterion_group!(benches, abduction_and_simulation);
criterion_main!(benches);
