//! Shared inputs for the benchmarks.

use ase_core::effects::{estimate_tcfe, EffectQuery};
use ase_core::env::generate_failure_set;
use ase_core::env::graph::{build_graph_env, is_failure, success_outcome, GraphEnvConfig};
use ase_core::{build_scm, AgentSet, MmdpScm};

/// The six-agent Graph model and a query on one of its failures whose
/// alternative action has a positive total effect.
pub fn graph_case(samples: usize) -> (MmdpScm, EffectQuery) {
    let (spec, policy, ord) =
        build_graph_env(&GraphEnvConfig::default()).expect("default graph config is valid");
    let scm = build_scm(spec, policy, ord).expect("graph model builds");
    let failures =
        generate_failure_set(&scm, 8, 1, |t| is_failure(6, t)).expect("graph failures are common");
    for tau in &failures {
        for agent in 0..6 {
            for a in 0..3 {
                if a == tau.action(agent, 0) {
                    continue;
                }
                let q = EffectQuery {
                    trajectory: Some(tau.clone()),
                    agent,
                    time: 0,
                    action: a,
                    reference: None,
                    effect_agents: AgentSet::all(6).complement(6),
                    outcome: success_outcome(6),
                    samples: 200,
                    seed: 5,
                };
                if estimate_tcfe(&scm, &q)
                    .map(|e| e.value > 0.2)
                    .unwrap_or(false)
                {
                    let mut others = AgentSet::all(6);
                    others.0 &= !(1 << agent);
                    return (
                        scm,
                        EffectQuery {
                            effect_agents: others,
                            samples,
                            ..q
                        },
                    );
                }
            }
        }
    }
    panic!("no effective alternative among the sampled failures");
}
