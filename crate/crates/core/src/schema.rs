//! JSON documents: model files, trajectory files and policy tables.
//!
//! States, agents and actions may be referenced by name or by index.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{
    ActionId, AgentPolicy, AgentSpec, JointPolicy, MmdpSpec, Ordering, StateId, TotalOrdering,
    Trajectory, TransitionTable,
};
use crate::scm::{build_scm, MmdpScm};

/// A state, agent or action given by name or by index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Id {
    Index(u32),
    Name(String),
}

impl Id {
    fn resolve(&self, names: &[String], what: &str) -> Result<u32> {
        match self {
            Id::Index(i) if (*i as usize) < names.len() => Ok(*i),
            Id::Index(i) => Err(invalid(format!("{what} index {i} is out of range"))),
            Id::Name(n) => names
                .iter()
                .position(|x| x == n)
                .map(|i| i as u32)
                .ok_or_else(|| invalid(format!("unknown {what} `{n}`"))),
        }
    }
}

/// One transition row. Without `actions` it covers every joint action not
/// listed explicitly for the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub state: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Id>>,
    /// Successor state to probability.
    pub next: Vec<(Id, f64)>,
}

/// One policy row. Missing `time`, `state` or `prior` act as wildcards and
/// more specific rows override less specific ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Id>,
    /// Actions of the earlier movers at the same step (turn-based models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<Id>>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub agent: Id,
    #[serde(default)]
    pub time_indexed: bool,
    pub rows: Vec<PolicyRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Id>>,
    /// Agent name to its action ordering, lowest first.
    #[serde(default)]
    pub actions: BTreeMap<String, Vec<Id>>,
}

/// The model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub agents: Vec<AgentSpec>,
    pub transition: Vec<TransitionEntry>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub policies: Vec<PolicyEntry>,
    #[serde(default)]
    pub orderings: OrderingsEntry,
    #[serde(default)]
    pub turn_based: bool,
}

fn action_names(spec: &MmdpSpec, agent: usize) -> &[String] {
    &spec.agents[agent].actions
}

fn unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    match names.iter().find(|n| !seen.insert(n.as_str())) {
        Some(n) => Err(invalid(format!("duplicate {what} name `{n}`"))),
        None => Ok(()),
    }
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("model file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validated spec, policy and orderings.
    pub fn into_parts(&self) -> Result<(MmdpSpec, JointPolicy, TotalOrdering)> {
        unique(&self.states, "state")?;
        unique(
            &self
                .agents
                .iter()
                .map(|a| a.name.clone())
                .collect::<Vec<_>>(),
            "agent",
        )?;
        for a in &self.agents {
            unique(&a.actions, "action")?;
            if a.actions.is_empty() {
                return Err(invalid(format!("agent `{}` has no actions", a.name)));
            }
        }
        if self.agents.is_empty() {
            return Err(invalid("model has no agents"));
        }
        if self.initial.len() != self.states.len() {
            return Err(invalid(format!(
                "initial distribution has {} entries for {} states",
                self.initial.len(),
                self.states.len()
            )));
        }
        let mut spec = MmdpSpec {
            states: self.states.clone(),
            agents: self.agents.clone(),
            transition: TransitionTable::new(self.states.len(), 1),
            horizon: self.horizon,
            initial: self.initial.clone(),
            turn_based: self.turn_based,
        };
        spec.transition = self.transitions(&spec)?;
        spec.validate()?;
        let policy = self.policy(&spec)?;
        policy.validate(&spec)?;
        let orderings = self.orderings(&spec)?;
        orderings.validate(&spec)?;
        Ok((spec, policy, orderings))
    }

    pub fn build(&self) -> Result<MmdpScm> {
        let (spec, policy, orderings) = self.into_parts()?;
        build_scm(spec, policy, orderings)
    }

    fn transitions(&self, spec: &MmdpSpec) -> Result<TransitionTable> {
        let mut table = TransitionTable::new(spec.num_states(), spec.num_joint());
        let mut explicit = vec![false; spec.num_states() * spec.num_joint()];
        let mut defaults: Vec<Option<u32>> = vec![None; spec.num_states()];
        for (k, e) in self.transition.iter().enumerate() {
            let s = e.state.resolve(&spec.states, "state")?;
            let next = e
                .next
                .iter()
                .map(|(id, p)| Ok((id.resolve(&spec.states, "state")?, *p)))
                .collect::<Result<Vec<(StateId, f64)>>>()?;
            let row = table.add_row(&next);
            match &e.actions {
                Some(actions) => {
                    if actions.len() != spec.num_agents() {
                        return Err(invalid(format!(
                            "transition entry {k} lists {} actions for {} agents",
                            actions.len(),
                            spec.num_agents()
                        )));
                    }
                    let joint: Vec<ActionId> = actions
                        .iter()
                        .enumerate()
                        .map(|(i, a)| a.resolve(action_names(spec, i), "action"))
                        .collect::<Result<_>>()?;
                    let j = spec.joint_index(&joint);
                    let slot = s as usize * spec.num_joint() + j;
                    if explicit[slot] {
                        return Err(invalid(format!(
                            "duplicate transition entry for {}",
                            spec.describe_key(s, j)
                        )));
                    }
                    explicit[slot] = true;
                    table.assign(s, j, row);
                }
                None => {
                    if defaults[s as usize].replace(row).is_some() {
                        return Err(invalid(format!(
                            "state `{}` has two default transition entries",
                            spec.states[s as usize]
                        )));
                    }
                }
            }
        }
        for s in 0..spec.num_states() {
            if let Some(row) = defaults[s] {
                for j in 0..spec.num_joint() {
                    if !explicit[s * spec.num_joint() + j] {
                        table.assign(s as StateId, j, row);
                    }
                }
            }
        }
        Ok(table)
    }

    fn policy(&self, spec: &MmdpSpec) -> Result<JointPolicy> {
        let mut agents: Vec<Option<AgentPolicy>> = vec![None; spec.num_agents()];
        let agent_names: Vec<String> = spec.agents.iter().map(|a| a.name.clone()).collect();
        for entry in &self.policies {
            let i = entry.agent.resolve(&agent_names, "agent")? as usize;
            if agents[i].is_some() {
                return Err(invalid(format!(
                    "agent `{}` has two policies",
                    agent_names[i]
                )));
            }
            agents[i] = Some(policy_for(spec, i, entry)?);
        }
        let agents = agents
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| invalid(format!("agent `{}` has no policy", agent_names[i])))
            })
            .collect::<Result<_>>()?;
        Ok(JointPolicy::new(agents))
    }

    fn orderings(&self, spec: &MmdpSpec) -> Result<TotalOrdering> {
        let mut ord = TotalOrdering::identity(spec);
        if let Some(states) = &self.orderings.states {
            ord.states = Ordering(
                states
                    .iter()
                    .map(|s| s.resolve(&spec.states, "state"))
                    .collect::<Result<_>>()?,
            );
        }
        for (name, actions) in &self.orderings.actions {
            let i = spec
                .agent_index(name)
                .ok_or_else(|| invalid(format!("ordering names unknown agent `{name}`")))?;
            ord.actions[i] = Ordering(
                actions
                    .iter()
                    .map(|a| a.resolve(action_names(spec, i), "action"))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(ord)
    }

    /// Writes a spec, policy and orderings as a model file with indices
    /// replaced by names.
    pub fn from_parts(spec: &MmdpSpec, policy: &JointPolicy, orderings: &TotalOrdering) -> Self {
        let name = |s: StateId| Id::Name(spec.states[s as usize].clone());
        let transition = spec
            .transition
            .keys()
            .map(|(s, j, row)| {
                let (next, prob) = spec.transition.row_entries(row);
                TransitionEntry {
                    state: name(s),
                    actions: Some(
                        spec.joint_actions(j)
                            .iter()
                            .enumerate()
                            .map(|(i, &a)| Id::Name(action_names(spec, i)[a as usize].clone()))
                            .collect(),
                    ),
                    next: next.iter().zip(prob).map(|(&n, &p)| (name(n), p)).collect(),
                }
            })
            .collect();
        let policies = policy
            .agents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let time_indexed = p.time_slots() > 1;
                let rows = (0..p.num_rows())
                    .filter_map(|key| {
                        let probs = p.row_by_key(key)?.to_vec();
                        let (slot, state, prior) = p.key_parts(key);
                        let prior = (p.prior_configs() > 1).then(|| {
                            prior_actions(spec, i, prior)
                                .into_iter()
                                .enumerate()
                                .map(|(j, a)| Id::Name(action_names(spec, j)[a as usize].clone()))
                                .collect()
                        });
                        Some(PolicyRow {
                            time: time_indexed.then_some(slot),
                            state: Some(name(state)),
                            prior,
                            probs,
                        })
                    })
                    .collect();
                PolicyEntry {
                    agent: Id::Name(spec.agents[i].name.clone()),
                    time_indexed,
                    rows,
                }
            })
            .collect();
        let orderings = OrderingsEntry {
            states: Some(orderings.states.0.iter().map(|&s| name(s)).collect()),
            actions: orderings
                .actions
                .iter()
                .enumerate()
                .map(|(i, o)| {
                    (
                        spec.agents[i].name.clone(),
                        o.0.iter()
                            .map(|&a| Id::Name(action_names(spec, i)[a as usize].clone()))
                            .collect(),
                    )
                })
                .collect(),
        };
        Self {
            states: spec.states.clone(),
            agents: spec.agents.clone(),
            transition,
            horizon: spec.horizon,
            initial: spec.initial.clone(),
            policies,
            orderings,
            turn_based: spec.turn_based,
        }
    }
}

/// Earlier movers' actions encoded by prior configuration `k` of `agent`.
fn prior_actions(spec: &MmdpSpec, agent: usize, mut k: usize) -> Vec<ActionId> {
    let mut out = vec![0; agent];
    for j in (0..agent).rev() {
        let m = spec.num_actions(j);
        out[j] = (k % m) as ActionId;
        k /= m;
    }
    out
}

fn prior_index(spec: &MmdpSpec, actions: &[ActionId]) -> usize {
    actions
        .iter()
        .enumerate()
        .fold(0, |acc, (j, &a)| acc * spec.num_actions(j) + a as usize)
}

fn policy_for(spec: &MmdpSpec, agent: usize, entry: &PolicyEntry) -> Result<AgentPolicy> {
    let slots = if entry.time_indexed { spec.horizon } else { 1 };
    let uses_prior = entry.rows.iter().any(|r| r.prior.is_some());
    if uses_prior && !spec.turn_based {
        return Err(invalid(format!(
            "agent `{}` conditions on earlier movers in a simultaneous model",
            spec.agents[agent].name
        )));
    }
    let priors = if uses_prior {
        spec.prior_configs(agent)
    } else {
        1
    };
    let mut pol = AgentPolicy::new(spec.num_states(), spec.num_actions(agent), slots, priors);
    let mut rows: Vec<&PolicyRow> = entry.rows.iter().collect();
    rows.sort_by_key(|r| {
        r.time.is_some() as u8 + r.state.is_some() as u8 + r.prior.is_some() as u8
    });
    for r in rows {
        if r.probs.len() != spec.num_actions(agent) {
            return Err(invalid(format!(
                "policy row of `{}` has {} probabilities for {} actions",
                spec.agents[agent].name,
                r.probs.len(),
                spec.num_actions(agent)
            )));
        }
        let times: Vec<usize> = match r.time {
            Some(_) if !entry.time_indexed => {
                return Err(invalid(
                    "policy row has a time but the policy is not time-indexed",
                ))
            }
            Some(t) if t < slots => vec![t],
            Some(t) => {
                return Err(invalid(format!(
                    "policy row time {t} is beyond the horizon"
                )))
            }
            None => (0..slots).collect(),
        };
        let states: Vec<StateId> = match &r.state {
            Some(s) => vec![s.resolve(&spec.states, "state")?],
            None => (0..spec.num_states() as StateId).collect(),
        };
        let priors_of_row: Vec<usize> = match &r.prior {
            Some(p) => {
                if p.len() != agent {
                    return Err(invalid(format!(
                        "prior of `{}` must list {} earlier actions",
                        spec.agents[agent].name, agent
                    )));
                }
                let acts: Vec<ActionId> = p
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a.resolve(action_names(spec, j), "action"))
                    .collect::<Result<_>>()?;
                vec![prior_index(spec, &acts)]
            }
            None => (0..priors).collect(),
        };
        for &t in &times {
            for &s in &states {
                for &k in &priors_of_row {
                    pol.set_row(t, s, k, &r.probs);
                }
            }
        }
    }
    Ok(pol)
}

/// Observed trajectory file: `states` has `h + 1` entries, `actions` has `h`
/// joint actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub states: Vec<Id>,
    pub actions: Vec<Vec<Id>>,
}

impl TrajectoryFile {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| invalid(format!("trajectory file: {e}")))
    }

    pub fn resolve(&self, spec: &MmdpSpec) -> Result<Trajectory> {
        let states: Vec<StateId> = self
            .states
            .iter()
            .map(|s| s.resolve(&spec.states, "state"))
            .collect::<Result<_>>()?;
        let actions: Vec<Vec<ActionId>> = self
            .actions
            .iter()
            .map(|joint| {
                if joint.len() != spec.num_agents() {
                    return Err(invalid(format!(
                        "joint action lists {} actions for {} agents",
                        joint.len(),
                        spec.num_agents()
                    )));
                }
                joint
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a.resolve(action_names(spec, i), "action"))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let tau = Trajectory::from_parts(&states, &actions)?;
        tau.validate(spec)?;
        Ok(tau)
    }

    /// Index form of a trajectory.
    pub fn from_trajectory(tau: &Trajectory) -> Self {
        Self {
            states: tau.states().into_iter().map(Id::Index).collect(),
            actions: tau
                .actions()
                .into_iter()
                .map(|j| j.into_iter().map(Id::Index).collect())
                .collect(),
        }
    }
}

/// Parses an agent list such as `clinician,ai` or `0,2`.
pub fn parse_agents(text: &str, spec: &MmdpSpec) -> Result<Vec<usize>> {
    let names: Vec<String> = spec.agents.iter().map(|a| a.name.clone()).collect();
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let id = s
                .parse::<u32>()
                .map(Id::Index)
                .unwrap_or_else(|_| Id::Name(s.to_string()));
            id.resolve(&names, "agent").map(|i| i as usize)
        })
        .collect()
}

/// Resolves an action of `agent` given by name or index.
pub fn parse_action(text: &str, spec: &MmdpSpec, agent: usize) -> Result<ActionId> {
    let text = text.trim();
    match spec.action_index(agent, text) {
        Some(a) => Ok(a),
        None => {
            let id = text
                .parse::<u32>()
                .map(Id::Index)
                .map_err(|_| invalid(format!("unknown action `{text}`")))?;
            id.resolve(action_names(spec, agent), "action")
        }
    }
}

/// Resolves an agent given by name or index.
pub fn parse_agent(text: &str, spec: &MmdpSpec) -> Result<usize> {
    match parse_agents(text, spec)?.as_slice() {
        [one] => Ok(*one),
        _ => Err(invalid(format!("expected a single agent, got `{text}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COPY_MODEL: &str = r#"{
        "states": ["zero", "one"],
        "agents": [{"name": "a", "actions": ["0", "1"]}, {"name": "b", "actions": ["0", "1"]}],
        "transition": [
            {"state": "zero", "actions": ["0", "0"], "next": [["zero", 1.0]]},
            {"state": "zero", "actions": ["1", "0"], "next": [["zero", 1.0]]},
            {"state": "zero", "next": [["one", 1.0]]},
            {"state": 1, "next": [[1, 1.0]]}
        ],
        "horizon": 1,
        "initial": [1.0, 0.0],
        "turn_based": true,
        "policies": [
            {"agent": "a", "rows": [{"probs": [0.5, 0.5]}]},
            {"agent": "b", "rows": [
                {"prior": ["0"], "probs": [1.0, 0.0]},
                {"prior": ["1"], "probs": [0.2, 0.8]}
            ]}
        ]
    }"#;

    #[test]
    fn copy_model_loads() {
        let scm = ModelFile::from_json(COPY_MODEL).unwrap().build().unwrap();
        let spec = scm.spec();
        assert_eq!(
            spec.transition.row(0, spec.joint_index(&[1, 1])).unwrap().0,
            &[1]
        );
        assert_eq!(
            spec.transition.row(0, spec.joint_index(&[1, 0])).unwrap().0,
            &[0]
        );
        let b = scm.layout().action(1, 0);
        assert_eq!(scm.row(b, &[0, 1]).unwrap().pmf(2), vec![0.2, 0.8]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = COPY_MODEL.replacen("\"horizon\": 1", "\"horizon\": 1, \"extra\": 3", 1);
        assert!(ModelFile::from_json(&text).is_err());
    }

    #[test]
    fn unnormalized_rows_name_the_row() {
        let text = COPY_MODEL.replace("[0.2, 0.8]", "[0.2, 0.7]");
        let err = ModelFile::from_json(&text)
            .unwrap()
            .build()
            .unwrap_err()
            .to_string();
        assert!(err.contains("b"), "{err}");
    }

    #[test]
    fn missing_transition_is_reported_on_use() {
        let text = COPY_MODEL
            .replace(
                r#"{"state": 1, "next": [[1, 1.0]]}"#,
                r#"{"state": 1, "actions": [0, 0], "next": [[1, 1.0]]}"#,
            )
            .replace("[1.0, 0.0]", "[0.0, 1.0]")
            .replace("[0.5, 0.5]", "[0.0, 1.0]");
        let scm = ModelFile::from_json(&text).unwrap().build().unwrap();
        let err = scm
            .sample_trajectory(&mut crate::rng::chunk_rng(1, 0))
            .unwrap_err();
        assert!(
            matches!(err, crate::Error::UnknownParentConfig { .. }),
            "{err}"
        );
    }

    #[test]
    fn round_trips_through_parts() {
        let file = ModelFile::from_json(COPY_MODEL).unwrap();
        let (spec, pol, ord) = file.into_parts().unwrap();
        let again = ModelFile::from_parts(&spec, &pol, &ord);
        let (spec2, pol2, ord2) = ModelFile::from_json(&again.to_json().unwrap())
            .unwrap()
            .into_parts()
            .unwrap();
        assert_eq!(spec.states, spec2.states);
        assert_eq!(ord, ord2);
        for s in 0..2 {
            for j in 0..4 {
                assert_eq!(spec.transition.row(s, j), spec2.transition.row(s, j));
            }
        }
        for i in 0..2 {
            for s in 0..2 {
                for k in 0..2 {
                    assert_eq!(pol.agents[i].row(0, s, k), pol2.agents[i].row(0, s, k));
                }
            }
        }
    }

    #[test]
    fn trajectories_accept_names_and_indices() {
        let scm = ModelFile::from_json(COPY_MODEL).unwrap().build().unwrap();
        let file: TrajectoryFile =
            serde_json::from_str(r#"{"states": ["zero", 0], "actions": [["0", 0]]}"#).unwrap();
        let tau = file.resolve(scm.spec()).unwrap();
        assert_eq!(tau.states(), vec![0, 0]);
        assert_eq!(parse_agents("b, a", scm.spec()).unwrap(), vec![1, 0]);
        assert_eq!(parse_action("1", scm.spec(), 0).unwrap(), 1);
        assert!(parse_action("2", scm.spec(), 0).is_err());
    }
}
