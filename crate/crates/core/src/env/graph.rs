//! Six agents crossing a layered graph: one initial node, three columns of
//! three nodes, three terminal nodes. Success means two agents per terminal
//! node.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::effects::Outcome;
use crate::error::{invalid, Result};
use crate::model::{
    AgentPolicy, AgentSpec, JointPolicy, MmdpSpec, Ordering, StateId, TotalOrdering, Trajectory,
    TransitionTable,
};

pub const UP: u32 = 0;
pub const DOWN: u32 = 1;
pub const STRAIGHT: u32 = 2;
pub const ROWS: usize = 3;
pub const COLUMNS: usize = 3;
pub const HORIZON: usize = COLUMNS + 1;
pub const INITIAL: StateId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphEnvConfig {
    pub num_agents: usize,
    /// Random-action probability of each agent.
    pub randomness: Vec<f64>,
}

impl Default for GraphEnvConfig {
    fn default() -> Self {
        Self::with_agents(6)
    }
}

impl GraphEnvConfig {
    pub fn with_agents(num_agents: usize) -> Self {
        Self {
            num_agents,
            randomness: (1..=num_agents).map(|i| 0.05 * i as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 || self.num_agents > 8 {
            return Err(invalid("graph environment supports 1 to 8 agents"));
        }
        if self.randomness.len() != self.num_agents {
            return Err(invalid(format!(
                "expected {} randomness values, got {}",
                self.num_agents,
                self.randomness.len()
            )));
        }
        if let Some(p) = self.randomness.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("randomness {p} is outside [0, 1]")));
        }
        Ok(())
    }
}

/// State numbering of a graph instance with `n` agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStates {
    pub num_agents: usize,
}

impl GraphStates {
    pub fn per_column(self) -> usize {
        ROWS.pow(self.num_agents as u32)
    }

    pub fn goal(self) -> StateId {
        (1 + COLUMNS * self.per_column()) as StateId
    }

    pub fn fail(self) -> StateId {
        self.goal() + 1
    }

    pub fn count(self) -> usize {
        self.fail() as usize + 1
    }

    /// Id of the state with every agent in `column` (1-based) at `rows`.
    pub fn encode(self, column: usize, rows: &[usize]) -> StateId {
        let code: usize = rows.iter().rev().fold(0, |acc, &r| acc * ROWS + r);
        (1 + (column - 1) * self.per_column() + code) as StateId
    }

    /// Column and rows of an intermediate state; the initial node counts as
    /// column 0 with everyone in the middle row.
    pub fn decode(self, state: StateId) -> Option<(usize, Vec<usize>)> {
        if state == INITIAL {
            return Some((0, vec![1; self.num_agents]));
        }
        if state >= self.goal() {
            return None;
        }
        let k = state as usize - 1;
        let (column, mut code) = (k / self.per_column() + 1, k % self.per_column());
        let rows = (0..self.num_agents)
            .map(|_| {
                let r = code % ROWS;
                code /= ROWS;
                r
            })
            .collect();
        Some((column, rows))
    }

    pub fn name(self, state: StateId) -> String {
        if state == self.goal() {
            return "goal".into();
        }
        if state == self.fail() {
            return "fail".into();
        }
        match self.decode(state) {
            Some((0, _)) => "start".into(),
            Some((c, rows)) => format!(
                "c{c}:{}",
                rows.iter().map(|r| r.to_string()).collect::<String>()
            ),
            None => unreachable!(),
        }
    }
}

/// Row reached from `row` by `action`; out-of-bounds moves go straight.
pub fn next_row(row: usize, action: u32) -> usize {
    match action {
        UP if row + 1 < ROWS => row + 1,
        DOWN if row > 0 => row - 1,
        _ => row,
    }
}

fn occupancy(rows: &[usize]) -> [usize; ROWS] {
    let mut occ = [0; ROWS];
    rows.iter().for_each(|&r| occ[r] += 1);
    occ
}

/// Action probabilities `[up, down, straight]` of `agent` with randomness
/// `p` when agents sit at `rows` of an intermediate column.
pub fn action_probs(agent: usize, p: f64, rows: &[usize]) -> [f64; 3] {
    let occ = occupancy(rows);
    let row = rows[agent];
    let n = occ[row];
    let mut probs = [p / 3.0; 3];
    let common = 1.0 - p;
    if n <= 2 {
        probs[STRAIGHT as usize] += common;
        return probs;
    }
    let targets: Vec<u32> = [UP, DOWN]
        .into_iter()
        .filter(|&a| next_row(row, a) != row && occ[next_row(row, a)] < 2)
        .collect();
    if targets.is_empty() {
        probs[STRAIGHT as usize] += common;
        return probs;
    }
    let away = common * (n - 2) as f64 / n as f64;
    probs[STRAIGHT as usize] += common - away;
    for &a in &targets {
        probs[a as usize] += away / targets.len() as f64;
    }
    probs
}

/// The joint policy for randomness values `p`.
pub fn graph_policy(num_agents: usize, p: &[f64]) -> JointPolicy {
    let states = GraphStates { num_agents };
    let agents = (0..num_agents)
        .map(|i| {
            let mut pol = AgentPolicy::new(states.count(), 3, 1, 1);
            for s in 0..states.count() as StateId {
                let row = match states.decode(s) {
                    Some((0, _)) | None => [1.0 / 3.0; 3],
                    Some((_, rows)) => action_probs(i, p[i], &rows),
                };
                pol.set_row(0, s, 0, &row);
            }
            pol
        })
        .collect();
    JointPolicy::new(agents)
}

fn transitions(spec: &MmdpSpec, states: GraphStates) -> TransitionTable {
    let n = states.num_agents;
    let mut table = TransitionTable::new(states.count(), spec.num_joint());
    let mut rows: HashMap<StateId, u32> = HashMap::new();
    let mut row_for = |table: &mut TransitionTable, next: StateId| {
        *rows
            .entry(next)
            .or_insert_with(|| table.add_row(&[(next, 1.0)]))
    };
    for s in 0..states.goal() {
        let (column, rows_now) = states.decode(s).expect("intermediate state");
        for j in 0..spec.num_joint() {
            let actions = spec.joint_actions(j);
            let next: Vec<usize> = (0..n).map(|i| next_row(rows_now[i], actions[i])).collect();
            let target = if column == COLUMNS {
                if occupancy(&next).iter().all(|&k| k * ROWS == n) {
                    states.goal()
                } else {
                    states.fail()
                }
            } else {
                states.encode(column + 1, &next)
            };
            let r = row_for(&mut table, target);
            table.assign(s, j, r);
        }
    }
    table
}

/// The graph MMDP, its joint policy and the `up < down < straight` ordering.
pub fn build_graph_env(config: &GraphEnvConfig) -> Result<(MmdpSpec, JointPolicy, TotalOrdering)> {
    config.validate()?;
    let states = GraphStates {
        num_agents: config.num_agents,
    };
    let actions: Vec<String> = ["up", "down", "straight"].map(String::from).to_vec();
    let mut initial = vec![0.0; states.count()];
    initial[INITIAL as usize] = 1.0;
    let mut spec = MmdpSpec {
        states: (0..states.count() as StateId)
            .map(|s| states.name(s))
            .collect(),
        agents: (1..=config.num_agents)
            .map(|i| AgentSpec {
                name: format!("agent{i}"),
                actions: actions.clone(),
            })
            .collect(),
        transition: TransitionTable::new(states.count(), 1),
        horizon: HORIZON,
        initial,
        turn_based: false,
    };
    spec.transition = transitions(&spec, states);
    let policy = graph_policy(config.num_agents, &config.randomness);
    let orderings = TotalOrdering {
        states: Ordering::identity(states.count()),
        actions: vec![Ordering::identity(3); config.num_agents],
    };
    Ok((spec, policy, orderings))
}

/// Success outcome: the final state is the goal.
pub fn success_outcome(num_agents: usize) -> Outcome {
    Outcome::state_is(HORIZON, GraphStates { num_agents }.goal())
}

pub fn is_failure(num_agents: usize, tau: &Trajectory) -> bool {
    tau.state(HORIZON) == GraphStates { num_agents }.fail()
}

/// Final occupancy of the terminal column, recomputed from the actions.
pub fn terminal_occupancy(tau: &Trajectory) -> [usize; ROWS] {
    let n = tau.layout().num_agents;
    let mut rows = vec![1; n];
    for t in 0..HORIZON {
        for (i, r) in rows.iter_mut().enumerate() {
            *r = next_row(*r, tau.action(i, t));
        }
    }
    occupancy(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::build_scm;

    #[test]
    fn state_codes_round_trip() {
        let st = GraphStates { num_agents: 6 };
        assert_eq!(st.count(), 2190);
        assert_eq!(st.goal(), 2188);
        for s in [1, 2, 729, 730, 2187] {
            let (c, rows) = st.decode(s).unwrap();
            assert_eq!(st.encode(c, &rows), s);
        }
    }

    #[test]
    fn sixth_agent_randomness() {
        let cfg = GraphEnvConfig::default();
        assert!((cfg.randomness[5] - 0.30).abs() < 1e-15);
    }

    #[test]
    fn pair_occupancy_goes_straight() {
        let rows = [0, 0, 1, 1, 2, 2];
        for i in 0..6 {
            let p = 0.05 * (i + 1) as f64;
            let probs = action_probs(i, p, &rows);
            assert!((probs[STRAIGHT as usize] - (1.0 - p + p / 3.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn crowded_node_splits_towards_sparse_rows() {
        // four agents in the middle row, top and bottom each hold one
        let rows = [1, 1, 1, 1, 0, 2];
        let p = 0.1;
        let probs = action_probs(0, p, &rows);
        let away = (1.0 - p) * 2.0 / 4.0;
        assert!((probs[UP as usize] - (p / 3.0 + away / 2.0)).abs() < 1e-15);
        assert!((probs[DOWN as usize] - (p / 3.0 + away / 2.0)).abs() < 1e-15);
        assert!((probs[STRAIGHT as usize] - (p / 3.0 + (1.0 - p) * 2.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_up_is_straight() {
        assert_eq!(next_row(2, UP), 2);
        assert_eq!(next_row(0, DOWN), 0);
        assert_eq!(next_row(1, UP), 2);
    }

    #[test]
    fn policy_rows_match_hand_coded_probabilities() {
        let cfg = GraphEnvConfig::default();
        let (spec, policy, ord) = build_graph_env(&cfg).unwrap();
        let st = GraphStates { num_agents: 6 };
        let s = st.encode(2, &[1, 1, 1, 0, 0, 2]);
        let scm = build_scm(spec, policy, ord).unwrap();
        for i in 0..6 {
            let var = scm.layout().action(i, 2);
            let row = scm.row(var, &[s]).unwrap();
            let expected = action_probs(i, cfg.randomness[i], &[1, 1, 1, 0, 0, 2]);
            let pmf = row.pmf(3);
            for a in 0..3 {
                assert!((pmf[a] - expected[a]).abs() < 1e-12);
            }
            assert!((expected.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
