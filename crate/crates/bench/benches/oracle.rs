use ase_core::effects::EffectKind;
use ase_core::fixtures::{random_model, random_query, FixtureShape};
use ase_core::oracle::{exact_query, ExactKind, DEFAULT_BUDGET};
use ase_core::rng::chunk_rng;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn exact_cf_ase(c: &mut Criterion) {
    let mut rng = chunk_rng(17, 0);
    let cases: Vec<_> = (0..20)
        .map(|_| {
            let scm = random_model(&mut rng, &FixtureShape::default()).unwrap();
            let q = random_query(&mut rng, &scm, EffectKind::CfAse, 1).unwrap();
            (scm, q)
        })
        .collect();
    c.bench_function("exact_cf_ase_20_fixtures", |b| {
        b.iter(|| {
            cases
                .iter()
                .map(|(scm, q)| {
                    exact_query(scm, black_box(q), ExactKind::CfAse, None, DEFAULT_BUDGET)
                        .unwrap()
                        .value
                })
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, exact_cf_ase);
criterion_main!(benches);
