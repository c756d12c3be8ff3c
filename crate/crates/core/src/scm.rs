//! The SCM view of an MMDP under a joint policy.
//!
//! Every variable gets uniform noise on `(0, 1]` and a quantile structural
//! function `f(pa, u) = inf { v : F(v | pa) >= u }` under its family's total
//! ordering. Individual rows may be replaced by hand-written step tables,
//! which is how non-canonical models with the same observational
//! distribution are expressed.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{
    AgentSet, JointPolicy, MmdpSpec, Ordering, TotalOrdering, Trajectory, VarId, VarLayout,
    Variable,
};

/// A step function on `(0, 1]`: segment `k` is `(upper[k-1], upper[k]]` and
/// maps to `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    values: Vec<u32>,
    upper: Vec<f64>,
}

impl StepRow {
    /// Quantile row of a dense PMF (indexed by value) under an ordering.
    pub fn quantile(pmf: &[f64], ordering: &Ordering) -> Self {
        let entries: Vec<(u32, f64)> = ordering.0.iter().map(|&v| (v, pmf[v as usize])).collect();
        Self::from_ordered(&entries)
    }

    /// Quantile row of a sparse PMF; `ranks[v]` is the position of `v`.
    pub fn quantile_sparse(values: &[u32], probs: &[f64], ranks: &[u32]) -> Self {
        let mut entries: Vec<(u32, f64)> =
            values.iter().copied().zip(probs.iter().copied()).collect();
        entries.sort_by_key(|&(v, _)| ranks[v as usize]);
        Self::from_ordered(&entries)
    }

    /// Entries already listed from lowest to highest. Zero-probability values
    /// get no segment; the total is rescaled to one.
    fn from_ordered(entries: &[(u32, f64)]) -> Self {
        let total: f64 = entries.iter().map(|e| e.1).sum();
        let mut values = Vec::with_capacity(entries.len());
        let mut upper = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for &(v, p) in entries {
            if p > 0.0 {
                acc += p / total;
                values.push(v);
                upper.push(acc.min(1.0));
            }
        }
        if let Some(last) = upper.last_mut() {
            *last = 1.0;
        }
        Self { values, upper }
    }

    /// A hand-written step table: `(value, upper breakpoint)` pairs with
    /// strictly increasing breakpoints ending at 1.
    pub fn custom(segments: &[(u32, f64)]) -> Result<Self> {
        let mut prev = 0.0;
        for &(_, b) in segments {
            if !(b > prev && b <= 1.0) {
                return Err(invalid(
                    "step table breakpoints must increase strictly within (0,1]",
                ));
            }
            prev = b;
        }
        if prev != 1.0 {
            return Err(invalid("the last step table breakpoint must be 1"));
        }
        Ok(Self {
            values: segments.iter().map(|s| s.0).collect(),
            upper: segments.iter().map(|s| s.1).collect(),
        })
    }

    /// A step table over `k` equal pieces of the noise range.
    pub fn equal_pieces(values: &[u32]) -> Self {
        let k = values.len() as f64;
        let upper = (1..=values.len())
            .map(|j| if j == values.len() { 1.0 } else { j as f64 / k })
            .collect();
        Self {
            values: values.to_vec(),
            upper,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Upper breakpoints of the segments.
    pub fn breakpoints(&self) -> &[f64] {
        &self.upper
    }

    /// Number of segments.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.upper[k - 1]
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> u32 {
        let k = self.upper.partition_point(|&b| b < u);
        self.values[k.min(self.values.len() - 1)]
    }

    /// Segments `(lo, hi]` on which the row outputs `v`.
    pub fn preimage(&self, v: u32) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.values.len())
            .filter(move |&k| self.values[k] == v)
            .map(move |k| (self.lower(k), self.upper[k]))
    }

    /// Probability of `v` under uniform noise.
    pub fn mass(&self, v: u32) -> f64 {
        self.preimage(v).map(|(lo, hi)| hi - lo).sum()
    }

    /// Implied PMF over a domain of the given size.
    pub fn pmf(&self, domain: usize) -> Vec<f64> {
        let mut out = vec![0.0; domain];
        for k in 0..self.values.len() {
            out[self.values[k] as usize] += self.upper[k] - self.lower(k);
        }
        out
    }

    /// Outputs on a grid containing every breakpoint and every segment midpoint.
    pub fn grid_outputs(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(2 * self.len());
        for k in 0..self.len() {
            out.push(self.eval(0.5 * (self.lower(k) + self.upper[k])));
            out.push(self.eval(self.upper[k]));
        }
        out
    }

    /// True iff the outputs never decrease under `ranks`.
    pub fn is_noise_monotonic(&self, ranks: &[u32]) -> bool {
        self.grid_outputs()
            .windows(2)
            .all(|w| ranks[w[0] as usize] <= ranks[w[1] as usize])
    }
}

/// Identifies one structural row of the SCM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowRef {
    Initial,
    Transition(u32),
    Policy { agent: usize, key: usize },
}

/// An MMDP coupled with a joint policy and total orderings, in SCM form.
#[derive(Debug, Clone)]
pub struct MmdpScm {
    spec: MmdpSpec,
    policy: JointPolicy,
    orderings: TotalOrdering,
    layout: VarLayout,
    parents: Vec<Vec<VarId>>,
    initial: StepRow,
    transitions: Vec<StepRow>,
    policies: Vec<Vec<StepRow>>,
    custom: Vec<RowRef>,
}

/// Builds the canonical noise-monotonic SCM of `spec` under `policy`.
pub fn build_scm(spec: MmdpSpec, policy: JointPolicy, orderings: TotalOrdering) -> Result<MmdpScm> {
    MmdpScm::new(spec, policy, orderings)
}

impl MmdpScm {
    pub fn new(spec: MmdpSpec, policy: JointPolicy, orderings: TotalOrdering) -> Result<Self> {
        spec.validate()?;
        policy.validate(&spec)?;
        orderings.validate(&spec)?;
        let layout = spec.layout();
        let state_ranks = orderings.states.ranks();
        let initial = StepRow::quantile(&spec.initial, &orderings.states);
        let transitions = (0..spec.transition.num_rows() as u32)
            .map(|r| {
                let (next, prob) = spec.transition.row_entries(r);
                StepRow::quantile_sparse(next, prob, &state_ranks)
            })
            .collect();
        let policies = policy
            .agents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                (0..p.num_rows())
                    .map(|key| match p.row_by_key(key) {
                        Some(row) => StepRow::quantile(row, &orderings.actions[i]),
                        None => StepRow {
                            values: Vec::new(),
                            upper: Vec::new(),
                        },
                    })
                    .collect()
            })
            .collect();
        let parents = layout
            .vars()
            .map(|v| match layout.variable(v) {
                Variable::State { time: 0 } => Vec::new(),
                Variable::State { time } => std::iter::once(layout.state(time - 1))
                    .chain((0..layout.num_agents).map(|j| layout.action(j, time - 1)))
                    .collect(),
                Variable::Action { agent, time } => {
                    let earlier = if spec.turn_based { agent } else { 0 };
                    std::iter::once(layout.state(time))
                        .chain((0..earlier).map(|j| layout.action(j, time)))
                        .collect()
                }
            })
            .collect();
        Ok(Self {
            spec,
            policy,
            orderings,
            layout,
            parents,
            initial,
            transitions,
            policies,
            custom: Vec::new(),
        })
    }

    pub fn spec(&self) -> &MmdpSpec {
        &self.spec
    }

    pub fn policy(&self) -> &JointPolicy {
        &self.policy
    }

    pub fn orderings(&self) -> &TotalOrdering {
        &self.orderings
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn num_vars(&self) -> usize {
        self.layout.len()
    }

    pub fn parents(&self, var: VarId) -> &[VarId] {
        &self.parents[var.index()]
    }

    pub fn domain_size(&self, var: VarId) -> usize {
        match self.layout.variable(var) {
            Variable::State { .. } => self.spec.num_states(),
            Variable::Action { agent, .. } => self.spec.num_actions(agent),
        }
    }

    /// Ranks of the ordering that applies to `var`.
    pub fn ranks(&self, var: VarId) -> Vec<u32> {
        match self.layout.variable(var) {
            Variable::State { .. } => self.orderings.states.ranks(),
            Variable::Action { agent, .. } => self.orderings.actions[agent].ranks(),
        }
    }

    /// Human-readable variable name using agent names.
    pub fn describe(&self, var: VarId) -> String {
        match self.layout.variable(var) {
            Variable::State { time } => format!("S_{time}"),
            Variable::Action { agent, time } => {
                format!("A_{{{},{time}}}", self.spec.agents[agent].name)
            }
        }
    }

    /// Replaces one structural row with a hand-written step table.
    pub fn set_custom_row(&mut self, at: RowRef, row: StepRow) -> Result<()> {
        let domain = match at {
            RowRef::Initial | RowRef::Transition(_) => self.spec.num_states(),
            RowRef::Policy { agent, .. } => {
                if agent >= self.spec.num_agents() {
                    return Err(invalid(format!("unknown agent index {agent}")));
                }
                self.spec.num_actions(agent)
            }
        };
        if row.values.iter().any(|&v| v as usize >= domain) {
            return Err(invalid("step table value outside the variable domain"));
        }
        let slot = match at {
            RowRef::Initial => &mut self.initial,
            RowRef::Transition(r) => self
                .transitions
                .get_mut(r as usize)
                .ok_or_else(|| invalid(format!("unknown transition row {r}")))?,
            RowRef::Policy { agent, key } => self.policies[agent]
                .get_mut(key)
                .ok_or_else(|| invalid(format!("unknown policy row {key} of agent {agent}")))?,
        };
        *slot = row;
        if !self.custom.contains(&at) {
            self.custom.push(at);
        }
        Ok(())
    }

    /// Rows that were replaced by hand-written tables.
    pub fn custom_rows(&self) -> &[RowRef] {
        &self.custom
    }

    pub fn step_row(&self, at: RowRef) -> &StepRow {
        match at {
            RowRef::Initial => &self.initial,
            RowRef::Transition(r) => &self.transitions[r as usize],
            RowRef::Policy { agent, key } => &self.policies[agent][key],
        }
    }

    /// Which structural row applies to `var`; `get(slot, parent)` supplies the
    /// value of the parent at position `slot` of [`Self::parents`].
    #[inline]
    pub fn row_ref_with(
        &self,
        var: VarId,
        mut get: impl FnMut(usize, VarId) -> u32,
    ) -> Result<RowRef> {
        let pa = &self.parents[var.index()];
        match self.layout.variable(var) {
            Variable::State { time: 0 } => Ok(RowRef::Initial),
            Variable::State { .. } => {
                let state = get(0, pa[0]);
                let mut joint = 0usize;
                for (j, &p) in pa[1..].iter().enumerate() {
                    joint = joint * self.spec.agents[j].actions.len() + get(j + 1, p) as usize;
                }
                self.spec
                    .transition
                    .row_index(state, joint)
                    .map(RowRef::Transition)
                    .ok_or_else(|| self.unknown_config(var, &mut get))
            }
            Variable::Action { agent, time } => {
                let table = &self.policy.agents[agent];
                let state = get(0, pa[0]);
                let mut prior = 0usize;
                if table.prior_configs() > 1 {
                    for (j, &p) in pa[1..].iter().enumerate() {
                        prior = prior * self.spec.agents[j].actions.len() + get(j + 1, p) as usize;
                    }
                }
                let key = table.row_key(table.slot_for_time(time), state, prior);
                if self.policies[agent][key].is_empty() {
                    return Err(self.unknown_config(var, &mut get));
                }
                Ok(RowRef::Policy { agent, key })
            }
        }
    }

    fn unknown_config(&self, var: VarId, get: &mut impl FnMut(usize, VarId) -> u32) -> Error {
        let pa: Vec<String> = self.parents[var.index()]
            .iter()
            .enumerate()
            .map(|(slot, &p)| format!("{}={}", self.describe(p), get(slot, p)))
            .collect();
        Error::UnknownParentConfig {
            variable: self.describe(var),
            parents: format!("[{}]", pa.join(", ")),
        }
    }

    #[inline]
    pub fn row_with(&self, var: VarId, get: impl FnMut(usize, VarId) -> u32) -> Result<&StepRow> {
        self.row_ref_with(var, get).map(|r| self.step_row(r))
    }

    /// Structural row for explicit parent values, in [`Self::parents`] order.
    pub fn row(&self, var: VarId, parent_values: &[u32]) -> Result<&StepRow> {
        if parent_values.len() != self.parents[var.index()].len() {
            return Err(invalid(format!(
                "{} has {} parents, got {} values",
                self.describe(var),
                self.parents[var.index()].len(),
                parent_values.len()
            )));
        }
        for (slot, &p) in self.parents[var.index()].iter().enumerate() {
            if parent_values[slot] as usize >= self.domain_size(p) {
                return Err(invalid(format!(
                    "{} = {} is outside its domain",
                    self.describe(p),
                    parent_values[slot]
                )));
            }
        }
        self.row_with(var, |slot, _| parent_values[slot])
    }

    /// Evaluates the structural function of `var`.
    pub fn quantile_eval(&self, var: VarId, parent_values: &[u32], u: f64) -> Result<u32> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(invalid(format!("noise value {u} is outside (0,1]")));
        }
        Ok(self.row(var, parent_values)?.eval(u))
    }

    /// Row lookup against the values of a single world.
    #[inline]
    fn row_in(&self, var: VarId, values: &[u32]) -> Result<&StepRow> {
        self.row_with(var, |_, p| values[p.index()])
    }

    /// Draws prior noise and the trajectory it induces.
    pub fn sample_trajectory<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(Trajectory, NoiseVector)> {
        let noise = NoiseVector::sample_prior(self.num_vars(), rng);
        let tau = self.simulate_with_noise(&noise, &InterventionSet::new(self.layout))?;
        Ok((tau, noise))
    }

    /// Evaluates `M^{do(I)}` under the given noise.
    pub fn simulate_with_noise(
        &self,
        noise: &NoiseVector,
        interventions: &InterventionSet,
    ) -> Result<Trajectory> {
        if noise.len() != self.num_vars() {
            return Err(invalid("noise vector length does not match the model"));
        }
        let mut out = Vec::with_capacity(self.num_vars());
        self.simulate_into(
            noise.as_slice(),
            interventions,
            self.num_vars() - 1,
            &mut out,
        )?;
        Trajectory::from_values(self.layout, out)
    }

    /// Evaluates variables `0..=upto` into `out`.
    pub fn simulate_into(
        &self,
        noise: &[f64],
        iv: &InterventionSet,
        upto: usize,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        out.clear();
        for idx in 0..=upto {
            let var = VarId(idx as u32);
            let v = match iv.get(var) {
                Some(v) => v,
                None => self.row_in(var, out)?.eval(noise[idx]),
            };
            out.push(v);
        }
        Ok(())
    }

    /// Evaluates the path-modified model: parents along spliced edges are read
    /// from the given source worlds instead of the world being built.
    pub fn simulate_spliced(
        &self,
        noise: &[f64],
        iv: &InterventionSet,
        splice: &Splice,
        sources: &[&[u32]],
        upto: usize,
        out: &mut Vec<u32>,
    ) -> Result<()> {
        out.clear();
        for idx in 0..=upto {
            let var = VarId(idx as u32);
            let v = match iv.get(var) {
                Some(v) => v,
                None => {
                    let tags = splice.tags(var);
                    let row = self.row_with(var, |slot, p| match tags[slot] {
                        0 => out[p.index()],
                        k => sources[k as usize - 1][p.index()],
                    })?;
                    row.eval(noise[idx])
                }
            };
            out.push(v);
        }
        Ok(())
    }

    /// Abduction: the posterior of the noise given a full trajectory.
    pub fn posterior(&self, tau: &Trajectory) -> Result<Posterior> {
        Posterior::new(self, tau)
    }

    /// One draw from `P(u | tau)`.
    pub fn sample_posterior_noise<R: Rng + ?Sized>(
        &self,
        tau: &Trajectory,
        rng: &mut R,
    ) -> Result<NoiseVector> {
        Ok(self.posterior(tau)?.sample(rng))
    }

    /// Probability of a trajectory under the model.
    pub fn trajectory_probability(&self, tau: &Trajectory) -> Result<f64> {
        tau.validate(&self.spec)?;
        let mut p = 1.0;
        for var in self.layout.vars() {
            p *= self.row_in(var, tau.values())?.mass(tau.value(var));
        }
        Ok(p)
    }

    /// Every structural row together with the variable family it belongs to.
    pub fn all_rows(&self) -> Vec<(RowRef, &StepRow)> {
        let mut out = vec![(RowRef::Initial, &self.initial)];
        out.extend(
            self.transitions
                .iter()
                .enumerate()
                .map(|(r, row)| (RowRef::Transition(r as u32), row)),
        );
        for (agent, rows) in self.policies.iter().enumerate() {
            out.extend(
                rows.iter()
                    .enumerate()
                    .filter(|(_, r)| !r.is_empty())
                    .map(|(key, row)| (RowRef::Policy { agent, key }, row)),
            );
        }
        out
    }

    /// Rows `var` can use across all parent configurations, deduplicated.
    pub fn rows_of_var(&self, var: VarId) -> Vec<&StepRow> {
        let refs: BTreeSet<usize> = match self.layout.variable(var) {
            Variable::State { time: 0 } => return vec![&self.initial],
            Variable::State { .. } => self.spec.transition.keys().map(|k| k.2 as usize).collect(),
            Variable::Action { agent, time } => {
                let table = &self.policy.agents[agent];
                let slot = table.slot_for_time(time);
                (0..table.num_rows())
                    .filter(|&k| {
                        table.key_parts(k).0 == slot && !self.policies[agent][k].is_empty()
                    })
                    .collect()
            }
        };
        match self.layout.variable(var) {
            Variable::State { .. } => refs.into_iter().map(|r| &self.transitions[r]).collect(),
            Variable::Action { agent, .. } => {
                refs.into_iter().map(|k| &self.policies[agent][k]).collect()
            }
        }
    }

    /// Actions causally downstream of `A_{agent,time}`: every action at later
    /// steps and, in turn-based mode, later movers of the same step.
    pub fn downstream_actions(&self, agent: usize, time: usize) -> Vec<(usize, usize)> {
        let n = self.spec.num_agents();
        let mut out = Vec::new();
        if self.spec.turn_based {
            out.extend((agent + 1..n).map(|j| (j, time)));
        }
        for t in time + 1..self.spec.horizon {
            out.extend((0..n).map(|j| (j, t)));
        }
        out
    }

    /// All edges `(parent, child)` of the causal graph.
    pub fn edges(&self) -> Vec<Edge> {
        self.layout
            .vars()
            .flat_map(|v| self.parents(v).iter().map(move |&p| (p, v)))
            .collect()
    }

    pub fn out_edges(&self, var: VarId) -> Vec<Edge> {
        self.edges().into_iter().filter(|e| e.0 == var).collect()
    }

    /// `(g, g*)`: outgoing edges of the effect agents' and the non-effect
    /// agents' downstream actions.
    pub fn ase_subgraphs(&self, agent: usize, time: usize, effect: AgentSet) -> (EdgeSet, EdgeSet) {
        let (mut g, mut g_star) = (EdgeSet::default(), EdgeSet::default());
        let downstream: Vec<(usize, usize)> = self.downstream_actions(agent, time);
        for (p, child) in self.edges() {
            if let Variable::Action { agent: j, time: t } = self.layout.variable(p) {
                if downstream.contains(&(j, t)) {
                    if effect.contains(j) {
                        g.insert((p, child));
                    } else {
                        g_star.insert((p, child));
                    }
                }
            }
        }
        (g, g_star)
    }

    /// Effect subgraph of the counterfactual path-specific effect: the graph
    /// without incoming edges of the non-effect agents' downstream actions.
    pub fn cf_pse_subgraph(&self, agent: usize, time: usize, effect: AgentSet) -> EdgeSet {
        let downstream = self.downstream_actions(agent, time);
        let mut g = EdgeSet::default();
        for (p, child) in self.edges() {
            let cut = match self.layout.variable(child) {
                Variable::Action { agent: j, time: t } => {
                    !effect.contains(j) && downstream.contains(&(j, t))
                }
                Variable::State { .. } => false,
            };
            if !cut {
                g.insert((p, child));
            }
        }
        g
    }

    /// Complement of an edge set in the causal graph.
    pub fn complement(&self, g: &EdgeSet) -> EdgeSet {
        EdgeSet(
            self.edges()
                .into_iter()
                .filter(|e| !g.contains(e))
                .collect(),
        )
    }
}

pub type Edge = (VarId, VarId);

/// A set of `(parent, child)` edges of the causal graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSet(pub BTreeSet<Edge>);

impl EdgeSet {
    pub fn insert(&mut self, e: Edge) {
        self.0.insert(e);
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.0.contains(e)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Edge> {
        self.0.iter()
    }
}

/// Per-variable, per-parent-slot source tags for a path-modified model: `0`
/// reads the world being built, `k > 0` reads source world `k - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splice {
    tags: Vec<Vec<u8>>,
}

impl Splice {
    /// Edges of `sets[k]` read from source world `k`.
    pub fn new(scm: &MmdpScm, sets: &[&EdgeSet]) -> Result<Self> {
        let edges: BTreeSet<Edge> = scm.edges().into_iter().collect();
        for (k, set) in sets.iter().enumerate() {
            if let Some(e) = set.iter().find(|e| !edges.contains(e)) {
                return Err(invalid(format!(
                    "edge {} -> {} is not in the causal graph",
                    scm.describe(e.0),
                    scm.describe(e.1)
                )));
            }
            for other in &sets[k + 1..] {
                if let Some(e) = set.iter().find(|e| other.contains(e)) {
                    return Err(invalid(format!(
                        "subgraphs overlap on edge {} -> {}",
                        scm.describe(e.0),
                        scm.describe(e.1)
                    )));
                }
            }
        }
        let tags = scm
            .layout()
            .vars()
            .map(|v| {
                scm.parents(v)
                    .iter()
                    .map(|&p| {
                        sets.iter()
                            .position(|s| s.contains(&(p, v)))
                            .map_or(0, |k| k as u8 + 1)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { tags })
    }

    #[inline]
    pub fn tags(&self, var: VarId) -> &[u8] {
        &self.tags[var.index()]
    }
}

/// One exogenous value per variable, each in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(u) = values.iter().find(|u| !(**u > 0.0 && **u <= 1.0)) {
            return Err(invalid(format!("noise value {u} is outside (0,1]")));
        }
        Ok(Self(values))
    }

    pub fn sample_prior<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| 1.0 - rng.random::<f64>()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hard interventions, at most one per variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionSet {
    fixed: Vec<u32>,
}

const FREE: u32 = u32::MAX;

impl InterventionSet {
    pub fn new(layout: VarLayout) -> Self {
        Self {
            fixed: vec![FREE; layout.len()],
        }
    }

    /// Adds `var := value`; a second entry for the same variable is an error.
    pub fn insert(&mut self, var: VarId, value: u32) -> Result<()> {
        match self.fixed.get_mut(var.index()) {
            None => Err(invalid(format!("variable {} does not exist", var.0))),
            Some(slot) if *slot != FREE => {
                Err(invalid(format!("variable {} is intervened twice", var.0)))
            }
            Some(slot) => {
                *slot = value;
                Ok(())
            }
        }
    }

    /// Overwrites an entry; used when materialising natural interventions.
    #[inline]
    pub fn set(&mut self, var: VarId, value: u32) {
        self.fixed[var.index()] = value;
    }

    pub fn clear(&mut self) {
        self.fixed.fill(FREE);
    }

    #[inline]
    pub fn get(&self, var: VarId) -> Option<u32> {
        match self.fixed[var.index()] {
            FREE => None,
            v => Some(v),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (VarId, u32)> + '_ {
        self.fixed
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != FREE)
            .map(|(i, &v)| (VarId(i as u32), v))
    }

    pub fn validate(&self, scm: &MmdpScm) -> Result<()> {
        if self.fixed.len() != scm.num_vars() {
            return Err(invalid("intervention set does not match the model"));
        }
        for (var, v) in self.entries() {
            if v as usize >= scm.domain_size(var) {
                return Err(invalid(format!(
                    "do({} := {v}) is outside the domain",
                    scm.describe(var)
                )));
            }
        }
        Ok(())
    }
}

/// The factorised noise posterior given a trajectory: each component is
/// uniform on the preimage of the observed value.
#[derive(Debug, Clone)]
pub struct Posterior {
    offsets: Vec<u32>,
    segments: Vec<(f64, f64)>,
    mass: Vec<f64>,
}

impl Posterior {
    pub fn new(scm: &MmdpScm, tau: &Trajectory) -> Result<Self> {
        tau.validate(scm.spec())?;
        let mut offsets = vec![0];
        let mut segments = Vec::new();
        let mut mass = Vec::with_capacity(scm.num_vars());
        for var in scm.layout().vars() {
            let row = scm.row_in(var, tau.values())?;
            let before = segments.len();
            segments.extend(row.preimage(tau.value(var)).filter(|(lo, hi)| hi > lo));
            let m: f64 = segments[before..].iter().map(|(lo, hi)| hi - lo).sum();
            if m <= 0.0 {
                return Err(Error::ZeroProbabilityEvidence {
                    variable: scm.describe(var),
                });
            }
            mass.push(m);
            offsets.push(segments.len() as u32);
        }
        Ok(Self {
            offsets,
            segments,
            mass,
        })
    }

    /// Preimage segments of variable `idx`.
    pub fn segments(&self, idx: usize) -> &[(f64, f64)] {
        &self.segments[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }

    /// Probability of the observed value of variable `idx` given its parents.
    pub fn mass(&self, idx: usize) -> f64 {
        self.mass[idx]
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseVector {
        let mut out = Vec::with_capacity(self.len());
        self.sample_into(rng, &mut out);
        NoiseVector(out)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        for idx in 0..self.len() {
            let segs = self.segments(idx);
            let x = rng.random::<f64>() * self.mass[idx];
            let mut acc = 0.0;
            let mut u = segs[segs.len() - 1].1;
            for &(lo, hi) in segs {
                let len = hi - lo;
                if x < acc + len {
                    u = hi - (x - acc);
                    if u <= lo {
                        u = hi;
                    }
                    break;
                }
                acc += len;
            }
            out.push(u);
        }
    }
}

/// Checks observational fidelity of every canonical row against its input
/// table, returning the largest absolute PMF difference.
pub fn max_reproduction_error(scm: &MmdpScm) -> f64 {
    let spec = scm.spec();
    let mut worst: f64 = 0.0;
    let norm = |p: &[f64]| -> Vec<f64> {
        let s: f64 = p.iter().sum();
        p.iter().map(|x| x / s).collect()
    };
    let diff = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    worst = worst.max(diff(
        &scm.initial.pmf(spec.num_states()),
        &norm(&spec.initial),
    ));
    for r in 0..spec.transition.num_rows() as u32 {
        let (next, prob) = spec.transition.row_entries(r);
        let mut dense = vec![0.0; spec.num_states()];
        for (&s, &p) in next.iter().zip(prob) {
            dense[s as usize] += p;
        }
        worst = worst.max(diff(
            &scm.transitions[r as usize].pmf(spec.num_states()),
            &norm(&dense),
        ));
    }
    for (i, table) in scm.policy.agents.iter().enumerate() {
        for key in 0..table.num_rows() {
            if let Some(row) = table.row_by_key(key) {
                worst = worst.max(diff(
                    &scm.policies[i][key].pmf(spec.num_actions(i)),
                    &norm(row),
                ));
            }
        }
    }
    worst
}

/// True iff every row of `scm` is noise-monotonic under its family ordering.
pub fn all_rows_noise_monotonic(scm: &MmdpScm) -> bool {
    let state_ranks = scm.orderings().states.ranks();
    let action_ranks: Vec<Vec<u32>> = scm
        .orderings()
        .actions
        .iter()
        .map(Ordering::ranks)
        .collect();
    scm.all_rows().into_iter().all(|(at, row)| match at {
        RowRef::Initial | RowRef::Transition(_) => row.is_noise_monotonic(&state_ranks),
        RowRef::Policy { agent, .. } => row.is_noise_monotonic(&action_ranks[agent]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentPolicy, AgentSpec, TransitionTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_row_matches_worked_example() {
        let row = StepRow::quantile(&[0.2, 0.5, 0.3], &Ordering::identity(3));
        assert_eq!(row.eval(0.2), 0);
        assert_eq!(row.eval(0.200001), 1);
        assert_eq!(row.eval(0.7), 1);
        assert_eq!(row.eval(0.71), 2);
        assert_eq!(row.eval(1.0), 2);
        assert_eq!(row.preimage(1).collect::<Vec<_>>(), vec![(0.2, 0.7)]);
    }

    #[test]
    fn deterministic_row_ignores_noise() {
        let row = StepRow::quantile(&[0.0, 1.0, 0.0], &Ordering::identity(3));
        for u in [1e-12, 0.3, 1.0] {
            assert_eq!(row.eval(u), 1);
        }
        assert_eq!(row.len(), 1);
    }

    #[test]
    fn ordering_changes_the_row() {
        let row = StepRow::quantile(&[0.2, 0.5, 0.3], &Ordering(vec![2, 0, 1]));
        assert_eq!(row.eval(0.3), 2);
        assert_eq!(row.eval(0.31), 0);
        assert!(row.is_noise_monotonic(&Ordering(vec![2, 0, 1]).ranks()));
        assert!(!row.is_noise_monotonic(&Ordering::identity(3).ranks()));
    }

    #[test]
    fn custom_rows_validate_breakpoints() {
        assert!(StepRow::custom(&[(0, 0.5), (1, 1.0)]).is_ok());
        assert!(StepRow::custom(&[(0, 0.5), (1, 0.5), (0, 1.0)]).is_err());
        assert!(StepRow::custom(&[(0, 0.5)]).is_err());
        let r = StepRow::equal_pieces(&[1, 0, 1]);
        assert_eq!(r.preimage(1).count(), 2);
        assert!((r.mass(1) - 2.0 / 3.0).abs() < 1e-15);
    }

    fn two_agent_model() -> MmdpScm {
        let bin = || vec!["0".to_string(), "1".to_string()];
        let mut t = TransitionTable::new(2, 4);
        for s in 0..2 {
            for j in 0..4u32 {
                let a2 = j % 2;
                t.set(s, j as usize, &[(a2, 1.0)]);
            }
        }
        let spec = MmdpSpec {
            states: bin(),
            agents: vec![
                AgentSpec {
                    name: "a".into(),
                    actions: bin(),
                },
                AgentSpec {
                    name: "b".into(),
                    actions: bin(),
                },
            ],
            transition: t,
            horizon: 1,
            initial: vec![1.0, 0.0],
            turn_based: true,
        };
        let a = AgentPolicy::stationary(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let mut b = AgentPolicy::new(2, 2, 1, 2);
        for s in 0..2 {
            b.set_row(0, s, 0, &[1.0, 0.0]);
            b.set_row(0, s, 1, &[0.2, 0.8]);
        }
        let ord = TotalOrdering::identity(&spec);
        build_scm(spec, JointPolicy::new(vec![a, b]), ord).unwrap()
    }

    #[test]
    fn turn_based_parents_include_earlier_movers() {
        let scm = two_agent_model();
        let l = scm.layout();
        assert_eq!(scm.parents(l.action(1, 0)), &[l.state(0), l.action(0, 0)]);
        assert_eq!(
            scm.parents(l.state(1)),
            &[l.state(0), l.action(0, 0), l.action(1, 0)]
        );
        assert_eq!(scm.quantile_eval(l.action(1, 0), &[0, 1], 0.2).unwrap(), 0);
        assert_eq!(scm.quantile_eval(l.action(1, 0), &[0, 1], 0.21).unwrap(), 1);
        assert!(scm.quantile_eval(l.action(1, 0), &[0, 1], 0.0).is_err());
    }

    #[test]
    fn posterior_draws_reproduce_the_trajectory() {
        let scm = two_agent_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let empty = InterventionSet::new(scm.layout());
        for _ in 0..200 {
            let (tau, _) = scm.sample_trajectory(&mut rng).unwrap();
            let post = scm.posterior(&tau).unwrap();
            for _ in 0..20 {
                let u = post.sample(&mut rng);
                assert_eq!(scm.simulate_with_noise(&u, &empty).unwrap(), tau);
            }
        }
    }

    #[test]
    fn zero_probability_evidence_names_the_variable() {
        let scm = two_agent_model();
        // agent b never plays 1 after a plays 0
        let tau = Trajectory::from_parts(&[0, 1], &[vec![0, 1]]).unwrap();
        match scm.posterior(&tau) {
            Err(Error::ZeroProbabilityEvidence { variable }) => assert_eq!(variable, "A_{b,0}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interventions_reject_duplicates() {
        let scm = two_agent_model();
        let mut iv = InterventionSet::new(scm.layout());
        iv.insert(VarId(1), 1).unwrap();
        assert!(iv.insert(VarId(1), 0).is_err());
        iv.set(VarId(2), 5);
        assert!(iv.validate(&scm).is_err());
    }

    #[test]
    fn ase_subgraphs_split_downstream_out_edges() {
        let scm = two_agent_model();
        let l = scm.layout();
        let (g, g_star) = scm.ase_subgraphs(0, 0, AgentSet::from_agents([1]));
        assert_eq!(
            g.0.iter().copied().collect::<Vec<_>>(),
            vec![(l.action(1, 0), l.state(1))]
        );
        assert!(g_star.is_empty());
        let pse = scm.cf_pse_subgraph(0, 0, AgentSet::from_agents([0]));
        assert!(!pse.contains(&(l.state(0), l.action(1, 0))));
        assert!(!pse.contains(&(l.action(0, 0), l.action(1, 0))));
        assert_eq!(pse.len(), scm.edges().len() - 2);
    }

    #[test]
    fn splice_rejects_overlap() {
        let scm = two_agent_model();
        let (g, _) = scm.ase_subgraphs(0, 0, AgentSet::from_agents([1]));
        assert!(Splice::new(&scm, &[&g, &g]).is_err());
        assert!(Splice::new(&scm, &[&g, &EdgeSet::default()]).is_ok());
    }

    #[test]
    fn canonical_rows_reproduce_inputs() {
        let scm = two_agent_model();
        assert!(max_reproduction_error(&scm) <= 1e-12);
        assert!(all_rows_noise_monotonic(&scm));
    }
}
