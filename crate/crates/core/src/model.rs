//! The multi-agent MDP tuple, joint policies, total orderings and trajectories.
//!
//! Variables of the unrolled process are laid out in a fixed topological
//! order: `S_0, A_{0,0} .. A_{n-1,0}, S_1, A_{0,1}, .., S_h`. In turn-based
//! mode agents move in declared order, so `A_{j,t}` is a parent of `A_{i,t}`
//! for every `j < i`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type StateId = u32;
pub type ActionId = u32;

/// Tolerance used when checking that probability rows are normalised.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Index of a variable in the unrolled SCM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// What a variable stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variable {
    State { time: usize },
    Action { agent: usize, time: usize },
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::State { time } => write!(f, "S_{time}"),
            Variable::Action { agent, time } => write!(f, "A_{{{agent},{time}}}"),
        }
    }
}

/// Position arithmetic for the unrolled variable order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarLayout {
    pub num_agents: usize,
    pub horizon: usize,
}

impl VarLayout {
    pub fn new(num_agents: usize, horizon: usize) -> Self {
        Self {
            num_agents,
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.horizon * (self.num_agents + 1) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, time: usize) -> VarId {
        debug_assert!(time <= self.horizon);
        VarId((time * (self.num_agents + 1)) as u32)
    }

    pub fn action(&self, agent: usize, time: usize) -> VarId {
        debug_assert!(agent < self.num_agents && time < self.horizon);
        VarId((time * (self.num_agents + 1) + 1 + agent) as u32)
    }

    pub fn variable(&self, var: VarId) -> Variable {
        let stride = self.num_agents + 1;
        let idx = var.index();
        let time = idx / stride;
        match idx % stride {
            0 => Variable::State { time },
            k => Variable::Action { agent: k - 1, time },
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> {
        (0..self.len() as u32).map(VarId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub actions: Vec<String>,
}

/// Sparse transition table `T(s' | s, a)` keyed by state and joint action index.
///
/// Rows are stored once and may be shared by many `(state, joint action)` keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    num_states: usize,
    num_joint: usize,
    row_of: Vec<u32>,
    offsets: Vec<u32>,
    next: Vec<StateId>,
    prob: Vec<f64>,
}

const NO_ROW: u32 = u32::MAX;

impl TransitionTable {
    pub fn new(num_states: usize, num_joint: usize) -> Self {
        Self {
            num_states,
            num_joint,
            row_of: vec![NO_ROW; num_states * num_joint],
            offsets: vec![0],
            next: Vec::new(),
            prob: Vec::new(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.num_joint
    }

    /// Stores a distribution and returns its row index. Duplicate successor
    /// entries are merged.
    pub fn add_row(&mut self, entries: &[(StateId, f64)]) -> u32 {
        let mut merged: Vec<(StateId, f64)> = entries.to_vec();
        merged.sort_by_key(|e| e.0);
        merged.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        for (s, p) in merged {
            self.next.push(s);
            self.prob.push(p);
        }
        self.offsets.push(self.next.len() as u32);
        (self.offsets.len() - 2) as u32
    }

    pub fn assign(&mut self, state: StateId, joint: usize, row: u32) {
        self.row_of[state as usize * self.num_joint + joint] = row;
    }

    pub fn set(&mut self, state: StateId, joint: usize, entries: &[(StateId, f64)]) {
        let row = self.add_row(entries);
        self.assign(state, joint, row);
    }

    pub fn row_index(&self, state: StateId, joint: usize) -> Option<u32> {
        match self.row_of.get(state as usize * self.num_joint + joint) {
            Some(&r) if r != NO_ROW => Some(r),
            _ => None,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Successor states and probabilities of a stored row.
    pub fn row_entries(&self, row: u32) -> (&[StateId], &[f64]) {
        let lo = self.offsets[row as usize] as usize;
        let hi = self.offsets[row as usize + 1] as usize;
        (&self.next[lo..hi], &self.prob[lo..hi])
    }

    pub fn row(&self, state: StateId, joint: usize) -> Option<(&[StateId], &[f64])> {
        self.row_index(state, joint).map(|r| self.row_entries(r))
    }

    /// All keys with an assigned row, in (state, joint) order.
    pub fn keys(&self) -> impl Iterator<Item = (StateId, usize, u32)> + '_ {
        self.row_of
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != NO_ROW)
            .map(move |(k, &r)| ((k / self.num_joint) as StateId, k % self.num_joint, r))
    }
}

/// The multi-agent MDP: states, agents with action sets, transitions, horizon
/// and initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdpSpec {
    pub states: Vec<String>,
    pub agents: Vec<AgentSpec>,
    pub transition: TransitionTable,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub turn_based: bool,
}

impl MmdpSpec {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_actions(&self, agent: usize) -> usize {
        self.agents[agent].actions.len()
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout::new(self.num_agents(), self.horizon)
    }

    pub fn num_joint(&self) -> usize {
        self.agents.iter().map(|a| a.actions.len()).product()
    }

    /// Mixed-radix index of a joint action, agent 0 most significant.
    pub fn joint_index(&self, actions: &[ActionId]) -> usize {
        actions
            .iter()
            .zip(&self.agents)
            .fold(0, |acc, (&a, spec)| acc * spec.actions.len() + a as usize)
    }

    pub fn joint_actions(&self, index: usize) -> Vec<ActionId> {
        let mut out = vec![0; self.num_agents()];
        let mut rest = index;
        for (i, spec) in self.agents.iter().enumerate().rev() {
            let k = spec.actions.len();
            out[i] = (rest % k) as ActionId;
            rest /= k;
        }
        out
    }

    /// Number of earlier-mover action configurations agent `agent` observes.
    pub fn prior_configs(&self, agent: usize) -> usize {
        if self.turn_based {
            self.agents[..agent]
                .iter()
                .map(|a| a.actions.len())
                .product()
        } else {
            1
        }
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states
            .iter()
            .position(|s| s == name)
            .map(|i| i as StateId)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn action_index(&self, agent: usize, name: &str) -> Option<ActionId> {
        self.agents[agent]
            .actions
            .iter()
            .position(|a| a == name)
            .map(|i| i as ActionId)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if self.states.is_empty() {
            return Err(invalid("state set is empty"));
        }
        if self.agents.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        if self.agents.len() > 63 {
            return Err(invalid("at most 63 agents are supported"));
        }
        for a in &self.agents {
            if a.actions.is_empty() {
                return Err(invalid(format!("agent {} has no actions", a.name)));
            }
        }
        let t = &self.transition;
        if t.num_states() != self.num_states() || t.num_joint() != self.num_joint() {
            return Err(invalid(format!(
                "transition table is {}x{} but the model has {} states and {} joint actions",
                t.num_states(),
                t.num_joint(),
                self.num_states(),
                self.num_joint()
            )));
        }
        check_distribution("initial", self.initial.iter().copied(), self.num_states())?;
        for r in 0..t.num_rows() as u32 {
            let (next, prob) = t.row_entries(r);
            if let Some(&s) = next.iter().find(|&&s| s as usize >= self.num_states()) {
                return Err(invalid(format!(
                    "transition row {r} names unknown state {s}"
                )));
            }
            if check_probabilities("", prob).is_err() {
                let owner = t
                    .keys()
                    .find(|k| k.2 == r)
                    .map(|(s, j, _)| self.describe_key(s, j))
                    .unwrap_or_else(|| format!("#{r}"));
                check_probabilities(&format!("T(.|{owner})"), prob)?;
            }
        }
        Ok(())
    }

    pub fn describe_key(&self, state: StateId, joint: usize) -> String {
        let names: Vec<&str> = self
            .joint_actions(joint)
            .iter()
            .enumerate()
            .map(|(i, &a)| self.agents[i].actions[a as usize].as_str())
            .collect();
        format!("{}, [{}]", self.states[state as usize], names.join(","))
    }
}

fn check_distribution(label: &str, probs: impl Iterator<Item = f64>, len: usize) -> Result<()> {
    let v: Vec<f64> = probs.collect();
    if v.len() != len {
        return Err(invalid(format!(
            "{label} has {} entries, expected {len}",
            v.len()
        )));
    }
    check_probabilities(label, &v)
}

pub(crate) fn check_probabilities(label: &str, probs: &[f64]) -> Result<()> {
    if let Some(p) = probs
        .iter()
        .find(|p| !(0.0..=1.0 + NORMALIZATION_TOLERANCE).contains(*p))
    {
        return Err(invalid(format!(
            "{label} contains probability {p} outside [0,1]"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized {
            row: label.to_string(),
            sum,
        });
    }
    Ok(())
}

/// Policy table of one agent: `pi(a | time slot, state, earlier movers' actions)`.
///
/// `prior_configs == 1` means the agent ignores earlier movers even in
/// turn-based mode; the row is then shared by every prior configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    num_states: usize,
    num_actions: usize,
    time_slots: usize,
    prior_configs: usize,
    probs: Vec<f64>,
    defined: Vec<bool>,
}

impl AgentPolicy {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        time_slots: usize,
        prior_configs: usize,
    ) -> Self {
        let rows = time_slots * num_states * prior_configs;
        Self {
            num_states,
            num_actions,
            time_slots,
            prior_configs,
            probs: vec![0.0; rows * num_actions],
            defined: vec![false; rows],
        }
    }

    /// A stationary policy that ignores earlier movers, one row per state.
    pub fn stationary(rows: &[Vec<f64>]) -> Self {
        let num_actions = rows.first().map_or(0, Vec::len);
        let mut p = Self::new(rows.len(), num_actions, 1, 1);
        for (s, row) in rows.iter().enumerate() {
            p.set_row(0, s as StateId, 0, row);
        }
        p
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn time_slots(&self) -> usize {
        self.time_slots
    }

    pub fn prior_configs(&self) -> usize {
        self.prior_configs
    }

    pub fn num_rows(&self) -> usize {
        self.defined.len()
    }

    pub fn row_key(&self, slot: usize, state: StateId, prior: usize) -> usize {
        (slot * self.num_states + state as usize) * self.prior_configs + prior
    }

    /// Decomposes a flat row index into `(slot, state, prior)`.
    pub fn key_parts(&self, key: usize) -> (usize, StateId, usize) {
        let prior = key % self.prior_configs;
        let rest = key / self.prior_configs;
        (
            rest / self.num_states,
            (rest % self.num_states) as StateId,
            prior,
        )
    }

    pub fn slot_for_time(&self, time: usize) -> usize {
        time.min(self.time_slots - 1)
    }

    pub fn set_row(&mut self, slot: usize, state: StateId, prior: usize, probs: &[f64]) {
        assert_eq!(probs.len(), self.num_actions, "policy row length");
        let key = self.row_key(slot, state, prior);
        self.probs[key * self.num_actions..(key + 1) * self.num_actions].copy_from_slice(probs);
        self.defined[key] = true;
    }

    pub fn row_by_key(&self, key: usize) -> Option<&[f64]> {
        self.defined[key].then(|| &self.probs[key * self.num_actions..(key + 1) * self.num_actions])
    }

    pub fn row(&self, time: usize, state: StateId, prior: usize) -> Option<&[f64]> {
        let prior = if self.prior_configs == 1 { 0 } else { prior };
        self.row_by_key(self.row_key(self.slot_for_time(time), state, prior))
    }
}

/// Joint policy, one table per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub agents: Vec<AgentPolicy>,
}

impl JointPolicy {
    pub fn new(agents: Vec<AgentPolicy>) -> Self {
        Self { agents }
    }

    pub fn validate(&self, spec: &MmdpSpec) -> Result<()> {
        if self.agents.len() != spec.num_agents() {
            return Err(invalid(format!(
                "policy covers {} agents, model has {}",
                self.agents.len(),
                spec.num_agents()
            )));
        }
        for (i, p) in self.agents.iter().enumerate() {
            let name = &spec.agents[i].name;
            if p.num_actions != spec.num_actions(i) || p.num_states != spec.num_states() {
                return Err(invalid(format!(
                    "policy table of agent {name} has the wrong shape"
                )));
            }
            if p.time_slots != 1 && p.time_slots != spec.horizon {
                return Err(invalid(format!(
                    "policy of agent {name} must be stationary or indexed by every time step"
                )));
            }
            if p.prior_configs != 1 && p.prior_configs != spec.prior_configs(i) {
                return Err(invalid(format!(
                    "policy of agent {name} conditions on {} earlier-mover configurations, expected {}",
                    p.prior_configs,
                    spec.prior_configs(i)
                )));
            }
            for key in 0..p.num_rows() {
                if let Some(row) = p.row_by_key(key) {
                    let (slot, s, prior) = p.key_parts(key);
                    check_probabilities(
                        &format!(
                            "pi_{name}(.|slot {slot}, {}, prior {prior})",
                            spec.states[s as usize]
                        ),
                        row,
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// A permutation of a finite domain listing values from lowest to highest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering(pub Vec<u32>);

impl Ordering {
    pub fn identity(n: usize) -> Self {
        Self((0..n as u32).collect())
    }

    pub fn reversed(n: usize) -> Self {
        Self((0..n as u32).rev().collect())
    }

    /// `rank[v]` is the position of value `v` in the ordering.
    pub fn ranks(&self) -> Vec<u32> {
        let mut rank = vec![0; self.0.len()];
        for (pos, &v) in self.0.iter().enumerate() {
            rank[v as usize] = pos as u32;
        }
        rank
    }

    pub fn validate(&self, domain: usize, label: &str) -> Result<()> {
        let mut seen = vec![false; domain];
        if self.0.len() != domain {
            return Err(invalid(format!(
                "ordering for {label} must list all {domain} values"
            )));
        }
        for &v in &self.0 {
            match seen.get_mut(v as usize) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(invalid(format!(
                        "ordering for {label} is not a permutation"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Orderings for the state family and for each agent's action family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotalOrdering {
    pub states: Ordering,
    pub actions: Vec<Ordering>,
}

impl TotalOrdering {
    pub fn identity(spec: &MmdpSpec) -> Self {
        Self {
            states: Ordering::identity(spec.num_states()),
            actions: (0..spec.num_agents())
                .map(|i| Ordering::identity(spec.num_actions(i)))
                .collect(),
        }
    }

    pub fn validate(&self, spec: &MmdpSpec) -> Result<()> {
        self.states.validate(spec.num_states(), "states")?;
        if self.actions.len() != spec.num_agents() {
            return Err(invalid("an action ordering is required for every agent"));
        }
        for (i, o) in self.actions.iter().enumerate() {
            o.validate(spec.num_actions(i), &spec.agents[i].name)?;
        }
        Ok(())
    }
}

/// A set of agents stored as a bitmask over agent indices.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct AgentSet(pub u64);

impl AgentSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn all(num_agents: usize) -> Self {
        Self(if num_agents >= 64 {
            u64::MAX
        } else {
            (1u64 << num_agents) - 1
        })
    }

    pub fn from_agents(agents: impl IntoIterator<Item = usize>) -> Self {
        Self(agents.into_iter().fold(0, |m, a| m | (1u64 << a)))
    }

    pub fn contains(self, agent: usize) -> bool {
        agent < 64 && self.0 & (1u64 << agent) != 0
    }

    pub fn insert(&mut self, agent: usize) {
        self.0 |= 1u64 << agent;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn complement(self, num_agents: usize) -> Self {
        Self(!self.0 & Self::all(num_agents).0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&a| self.contains(a))
    }

    /// Every non-empty subset of `pool`, in increasing bitmask order.
    pub fn nonempty_subsets(pool: AgentSet) -> Vec<AgentSet> {
        let mut out = Vec::new();
        let mut sub = pool.0;
        while sub != 0 {
            out.push(AgentSet(sub));
            sub = (sub - 1) & pool.0;
        }
        out.reverse();
        out
    }

    /// Agent indices joined by `+`, e.g. `0+2`.
    pub fn label(self) -> String {
        self.iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// A realised value for every variable, in layout order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    layout: VarLayout,
    values: Vec<u32>,
}

impl Trajectory {
    pub fn from_values(layout: VarLayout, values: Vec<u32>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(invalid(format!(
                "trajectory has {} values, expected {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }

    /// Builds a trajectory from `h + 1` states and `h` joint actions.
    pub fn from_parts(states: &[StateId], actions: &[Vec<ActionId>]) -> Result<Self> {
        if states.is_empty() || actions.len() + 1 != states.len() {
            return Err(invalid("a trajectory needs h+1 states and h joint actions"));
        }
        let n = actions.first().map_or(0, Vec::len);
        if n == 0 || actions.iter().any(|a| a.len() != n) {
            return Err(invalid("every joint action must name one action per agent"));
        }
        let layout = VarLayout::new(n, actions.len());
        let mut values = Vec::with_capacity(layout.len());
        for (t, joint) in actions.iter().enumerate() {
            values.push(states[t]);
            values.extend_from_slice(joint);
        }
        values.push(states[actions.len()]);
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    pub fn value(&self, var: VarId) -> u32 {
        self.values[var.index()]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn state(&self, time: usize) -> StateId {
        self.values[self.layout.state(time).index()]
    }

    pub fn action(&self, agent: usize, time: usize) -> ActionId {
        self.values[self.layout.action(agent, time).index()]
    }

    pub fn states(&self) -> Vec<StateId> {
        (0..=self.layout.horizon).map(|t| self.state(t)).collect()
    }

    pub fn joint_action(&self, time: usize) -> &[ActionId] {
        let start = self.layout.action(0, time).index();
        &self.values[start..start + self.layout.num_agents]
    }

    pub fn actions(&self) -> Vec<Vec<ActionId>> {
        (0..self.layout.horizon)
            .map(|t| self.joint_action(t).to_vec())
            .collect()
    }

    /// Checks lengths and domains against a model.
    pub fn validate(&self, spec: &MmdpSpec) -> Result<()> {
        if self.layout != spec.layout() {
            return Err(invalid("trajectory shape does not match the model"));
        }
        for var in self.layout.vars() {
            let v = self.value(var);
            let domain = match self.layout.variable(var) {
                Variable::State { .. } => spec.num_states(),
                Variable::Action { agent, .. } => spec.num_actions(agent),
            };
            if v as usize >= domain {
                return Err(invalid(format!(
                    "{} = {v} is outside its domain",
                    self.layout.variable(var)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trips_variables() {
        let l = VarLayout::new(3, 4);
        assert_eq!(l.len(), 17);
        assert_eq!(l.variable(l.state(2)), Variable::State { time: 2 });
        assert_eq!(
            l.variable(l.action(1, 3)),
            Variable::Action { agent: 1, time: 3 }
        );
        assert_eq!(l.state(4).index(), 16);
        assert!(l.action(2, 0) < l.state(1));
    }

    #[test]
    fn joint_index_is_mixed_radix() {
        let spec = MmdpSpec {
            states: vec!["s".into()],
            agents: vec![
                AgentSpec {
                    name: "a".into(),
                    actions: vec!["0".into(), "1".into()],
                },
                AgentSpec {
                    name: "b".into(),
                    actions: vec!["0".into(), "1".into(), "2".into()],
                },
            ],
            transition: TransitionTable::new(1, 6),
            horizon: 1,
            initial: vec![1.0],
            turn_based: true,
        };
        assert_eq!(spec.joint_index(&[1, 2]), 5);
        assert_eq!(spec.joint_actions(4), vec![1, 1]);
        assert_eq!(spec.prior_configs(1), 2);
        assert_eq!(spec.prior_configs(0), 1);
    }

    #[test]
    fn transition_rows_merge_duplicates_and_share() {
        let mut t = TransitionTable::new(2, 2);
        let r = t.add_row(&[(1, 0.25), (0, 0.5), (1, 0.25)]);
        t.assign(0, 0, r);
        t.assign(1, 1, r);
        assert_eq!(t.row(0, 0).unwrap(), (&[0u32, 1][..], &[0.5, 0.5][..]));
        assert_eq!(t.row(1, 1), t.row(0, 0));
        assert!(t.row(0, 1).is_none());
        assert_eq!(t.num_rows(), 1);
    }

    #[test]
    fn unnormalised_rows_are_rejected_by_name() {
        let mut t = TransitionTable::new(2, 1);
        t.set(0, 0, &[(0, 0.5), (1, 0.4)]);
        let spec = MmdpSpec {
            states: vec!["x".into(), "y".into()],
            agents: vec![AgentSpec {
                name: "a".into(),
                actions: vec!["go".into()],
            }],
            transition: t,
            horizon: 1,
            initial: vec![1.0, 0.0],
            turn_based: false,
        };
        match spec.validate() {
            Err(Error::NotNormalized { row, .. }) => assert!(row.contains("x, [go]"), "{row}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ordering_must_be_a_permutation() {
        assert!(Ordering(vec![0, 2, 1]).validate(3, "x").is_ok());
        assert!(Ordering(vec![0, 0, 1]).validate(3, "x").is_err());
        assert!(Ordering(vec![0, 1]).validate(3, "x").is_err());
        assert_eq!(Ordering(vec![2, 0, 1]).ranks(), vec![1, 2, 0]);
    }

    #[test]
    fn agent_subsets_enumerate_all_nonempty() {
        let pool = AgentSet::from_agents([0, 2, 3]);
        let subs = AgentSet::nonempty_subsets(pool);
        assert_eq!(subs.len(), 7);
        assert!(subs.iter().all(|s| !s.is_empty() && s.0 & !pool.0 == 0));
        assert_eq!(AgentSet::all(6).complement(6), AgentSet::empty());
        assert_eq!(AgentSet::from_agents([1, 4]).label(), "1+4");
    }

    #[test]
    fn trajectory_parts_round_trip() {
        let tau = Trajectory::from_parts(&[0, 1, 2], &[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(tau.states(), vec![0, 1, 2]);
        assert_eq!(tau.action(1, 1), 1);
        assert_eq!(tau.joint_action(0), &[1, 0]);
        assert_eq!(tau.values(), &[0, 1, 0, 1, 0, 1, 2]);
    }
}
