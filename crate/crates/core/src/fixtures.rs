//! Random small models and queries for property tests, acceptance runs and
//! benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::effects::{EffectKind, EffectQuery, Outcome};
use crate::error::Result;
use crate::model::{
    AgentPolicy, AgentSet, AgentSpec, JointPolicy, MmdpSpec, Ordering, TotalOrdering,
    TransitionTable,
};
use crate::scm::{build_scm, MmdpScm};

/// Shape limits of a random model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureShape {
    pub max_states: usize,
    pub num_agents: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    /// Chance that any single probability is forced to zero.
    pub sparsity: f64,
}

impl Default for FixtureShape {
    fn default() -> Self {
        Self {
            max_states: 3,
            num_agents: 2,
            max_actions: 3,
            max_horizon: 3,
            sparsity: 0.2,
        }
    }
}

/// A random probability vector of length `n` with some zeros.
pub fn random_pmf<R: Rng + ?Sized>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else {
                rng.random::<f64>() + 0.05
            }
        })
        .collect();
    if p.iter().all(|&x| x == 0.0) {
        p[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

pub fn random_ordering<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Ordering {
    let mut v: Vec<u32> = (0..n as u32).collect();
    v.shuffle(rng);
    Ordering(v)
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// A random MMDP with random policies (possibly time-indexed, possibly
/// turn-based with dependence on earlier movers) and random orderings.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, shape: &FixtureShape) -> Result<MmdpScm> {
    let num_states = rng.random_range(2..=shape.max_states.max(2));
    let horizon = rng.random_range(1..=shape.max_horizon.max(1));
    let turn_based = rng.random::<bool>();
    let agents: Vec<AgentSpec> = (0..shape.num_agents)
        .map(|i| AgentSpec {
            name: format!("agent{i}"),
            actions: names("a", rng.random_range(2..=shape.max_actions.max(2))),
        })
        .collect();
    let mut spec = MmdpSpec {
        states: names("s", num_states),
        agents,
        transition: TransitionTable::new(num_states, 1),
        horizon,
        initial: random_pmf(rng, num_states, shape.sparsity),
        turn_based,
    };
    let mut transition = TransitionTable::new(num_states, spec.num_joint());
    for s in 0..num_states {
        for j in 0..spec.num_joint() {
            let p = random_pmf(rng, num_states, shape.sparsity);
            let entries: Vec<(u32, f64)> =
                p.iter().enumerate().map(|(k, &x)| (k as u32, x)).collect();
            transition.set(s as u32, j, &entries);
        }
    }
    spec.transition = transition;
    let policies = (0..shape.num_agents)
        .map(|i| {
            let slots = if rng.random::<bool>() { horizon } else { 1 };
            let prior = if turn_based && i > 0 && rng.random::<bool>() {
                spec.prior_configs(i)
            } else {
                1
            };
            let mut pol = AgentPolicy::new(num_states, spec.num_actions(i), slots, prior);
            for slot in 0..slots {
                for s in 0..num_states {
                    for k in 0..prior {
                        pol.set_row(
                            slot,
                            s as u32,
                            k,
                            &random_pmf(rng, spec.num_actions(i), shape.sparsity),
                        );
                    }
                }
            }
            pol
        })
        .collect();
    let orderings = TotalOrdering {
        states: random_ordering(rng, num_states),
        actions: (0..shape.num_agents)
            .map(|i| random_ordering(rng, spec.num_actions(i)))
            .collect(),
    };
    build_scm(spec, JointPolicy::new(policies), orderings)
}

/// A random query of `kind` whose trajectory (if any) is sampled from the
/// model, hence has positive probability.
pub fn random_query<R: Rng + ?Sized>(
    rng: &mut R,
    scm: &MmdpScm,
    kind: EffectKind,
    samples: usize,
) -> Result<EffectQuery> {
    let spec = scm.spec();
    let n = spec.num_agents();
    let h = spec.horizon;
    let agent = rng.random_range(0..n);
    let time = rng.random_range(0..h);
    let actions = spec.num_actions(agent) as u32;
    let mut effect = AgentSet::empty();
    while effect.is_empty() {
        effect = AgentSet(rng.random_range(1..(1u64 << n)));
    }
    let states: Vec<u32> = (0..spec.num_states() as u32).collect();
    let count = rng.random_range(1..states.len());
    let accepted = states
        .choose_multiple(rng, count)
        .copied()
        .collect::<Vec<_>>();
    let trajectory = if kind.is_counterfactual() {
        Some(scm.sample_trajectory(rng)?.0)
    } else {
        None
    };
    Ok(EffectQuery {
        trajectory,
        agent,
        time,
        action: rng.random_range(0..actions),
        reference: (!kind.is_counterfactual()).then(|| rng.random_range(0..actions)),
        effect_agents: effect,
        outcome: Outcome::new(rng.random_range(time + 1..=h), accepted),
        samples,
        seed: rng.random(),
    })
}

const WITNESS_MODEL: &str = r#"{
    "states": ["0", "1"],
    "agents": [{"name": "x", "actions": ["0", "1", "2"]}, {"name": "y", "actions": ["0", "1"]}],
    "transition": [
        {"state": 0, "actions": [0, 0], "next": [[0, 1.0]]},
        {"state": 0, "actions": [1, 0], "next": [[0, 1.0]]},
        {"state": 0, "actions": [2, 0], "next": [[0, 1.0]]},
        {"state": 0, "next": [[1, 1.0]]},
        {"state": 1, "actions": [0, 0], "next": [[0, 1.0]]},
        {"state": 1, "actions": [1, 0], "next": [[0, 1.0]]},
        {"state": 1, "actions": [2, 0], "next": [[0, 1.0]]},
        {"state": 1, "next": [[1, 1.0]]}
    ],
    "horizon": 2,
    "initial": [1.0, 0.0],
    "turn_based": true,
    "policies": [
        {"agent": "x", "rows": [{"probs": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]}]},
        {"agent": "y", "rows": [
            {"prior": [0], "probs": [0.6666666666666666, 0.3333333333333334]},
            {"prior": [1], "probs": [0.3333333333333334, 0.6666666666666666]},
            {"prior": [2], "probs": [0.6666666666666666, 0.3333333333333334]}
        ]}
    ]
}"#;

/// Two models with identical observational tables: `S_{t+1} = A_y`, agent
/// `y` responds to agent `x` through a three-piece noise grid. The first is
/// the canonical quantile model; in the second `y` uses `1,0,0` / `1,0,1` /
/// `0,0,1` for `x = 0, 1, 2`, monotonic for `x` in `{0, 1}` but not
/// noise-monotonic.
pub fn witness_models() -> Result<(MmdpScm, MmdpScm)> {
    let canonical = crate::schema::ModelFile::from_json(WITNESS_MODEL)?.build()?;
    let mut alt = canonical.clone();
    let rows = [[1, 0, 0], [1, 0, 1], [0, 0, 1]];
    let table = &canonical.policy().agents[1];
    for state in 0..2 {
        for (prior, values) in rows.iter().enumerate() {
            let key = table.row_key(0, state, prior);
            alt.set_custom_row(
                crate::scm::RowRef::Policy { agent: 1, key },
                crate::scm::StepRow::equal_pieces(values),
            )?;
        }
    }
    Ok((canonical, alt))
}

/// cf-ASE through `y` of switching `x` from 0 to `action` at step 0, on the
/// all-zero trajectory, toward `S_1 = 1`.
pub fn witness_query(action: u32, samples: usize, seed: u64) -> EffectQuery {
    let tau = crate::model::Trajectory::from_parts(&[0, 0, 0], &[vec![0, 0], vec![0, 0]])
        .expect("well formed");
    EffectQuery {
        trajectory: Some(tau),
        agent: 0,
        time: 0,
        action,
        reference: None,
        effect_agents: AgentSet::from_agents([1]),
        outcome: Outcome::state_is(1, 1),
        samples,
        seed,
    }
}
