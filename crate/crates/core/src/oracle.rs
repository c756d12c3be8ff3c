//! Exact evaluation of counterfactual and interventional quantities on small
//! models.
//!
//! Every structural function is a step function of its own noise, so each
//! query is a finite sum over products of noise intervals. A query is
//! written as a *world program*: a few worlds that share one noise vector,
//! each giving every variable a rule (natural, fixed, copied from another
//! world, or natural with some parents read from other worlds). The value is
//! a linear readout of outcome indicators across worlds, conditioned on the
//! evidence world when a trajectory is observed.

use serde::{Deserialize, Serialize};

use crate::effects::{EffectQuery, Outcome};
use crate::error::{invalid, Error, Result};
use crate::model::{AgentSet, Ordering, Trajectory, VarId};
use crate::scm::{EdgeSet, InterventionSet, MmdpScm, Splice, StepRow};
use crate::stats::NeumaierSum;

/// Default limit on evaluated leaves or enumerated cells.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Conditional PMFs `P(X | pa)` of one variable, one row per parent
/// configuration, with a total ordering of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub ordering: Ordering,
    pub rows: Vec<Vec<f64>>,
}

impl ConditionalTable {
    pub fn new(ordering: Ordering, rows: Vec<Vec<f64>>) -> Result<Self> {
        let domain = ordering.0.len();
        ordering.validate(domain, "conditional table")?;
        for (k, r) in rows.iter().enumerate() {
            if r.len() != domain {
                return Err(invalid(format!(
                    "row {k} has {} entries, expected {domain}",
                    r.len()
                )));
            }
            crate::model::check_probabilities(&format!("P(X|pa{k})"), r)?;
        }
        Ok(Self { ordering, rows })
    }

    /// `P(X <= x | pa)` under the ordering.
    pub fn cdf(&self, x: u32, pa: usize) -> f64 {
        let mut acc = 0.0;
        for &v in &self.ordering.0 {
            acc += self.rows[pa][v as usize];
            if v == x {
                break;
            }
        }
        acc
    }

    /// `P(X < x | pa)` under the ordering.
    pub fn cdf_strict(&self, x: u32, pa: usize) -> f64 {
        let mut acc = 0.0;
        for &v in &self.ordering.0 {
            if v == x {
                break;
            }
            acc += self.rows[pa][v as usize];
        }
        acc
    }

    /// Quantile step function of parent configuration `pa`.
    pub fn step_row(&self, pa: usize) -> StepRow {
        StepRow::quantile(&self.rows[pa], &self.ordering)
    }
}

/// Joint probability `P(x^1_{pa^1} ∧ .. ∧ x^k_{pa^k})` of a noise-monotonic
/// variable, from its conditional table alone.
pub fn ctf_factor_prob(table: &ConditionalTable, pairs: &[(u32, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid(
            "at least one (value, parent configuration) pair is required",
        ));
    }
    let domain = table.ordering.0.len();
    for &(x, pa) in pairs {
        if x as usize >= domain || pa >= table.rows.len() {
            return Err(invalid(format!("pair ({x}, {pa}) is outside the table")));
        }
    }
    let hi = pairs
        .iter()
        .map(|&(x, pa)| table.cdf(x, pa))
        .fold(f64::INFINITY, f64::min);
    let lo = pairs
        .iter()
        .map(|&(x, pa)| table.cdf_strict(x, pa))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((hi - lo).max(0.0))
}

/// Outputs of a function `f(pa, u)` on an increasing grid of noise values,
/// one row per parent configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub rows: Vec<Vec<u32>>,
}

/// True iff every row is nondecreasing in the noise under `ordering`.
pub fn check_noise_monotonic(table: &FunctionTable, ordering: &Ordering) -> bool {
    let ranks = ordering.ranks();
    table.rows.iter().all(|r| {
        r.iter().all(|&v| (v as usize) < ranks.len())
            && r.windows(2)
                .all(|w| ranks[w[0] as usize] <= ranks[w[1] as usize])
    })
}

/// Every total ordering of a small domain.
pub fn all_orderings(domain: usize) -> Vec<Ordering> {
    fn rec(prefix: &mut Vec<u32>, rest: &mut Vec<u32>, out: &mut Vec<Ordering>) {
        if rest.is_empty() {
            out.push(Ordering(prefix.clone()));
            return;
        }
        for k in 0..rest.len() {
            let v = rest.remove(k);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(k, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..domain as u32).collect(), &mut out);
    out
}

/// A two-variable binary SCM `X -> Y` with `Y = f(X, U)`, `U` uniform on
/// `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPairScm {
    pub p_x1: f64,
    /// `f(0, .)` and `f(1, .)`.
    pub f_y: [StepRow; 2],
}

impl BinaryPairScm {
    /// The canonical quantile model with `P(Y = 1 | X = x) = p_y1[x]` under
    /// the given ordering of `{0, 1}`.
    pub fn canonical(p_x1: f64, p_y1: [f64; 2], ordering: &Ordering) -> Self {
        let row = |p: f64| StepRow::quantile(&[1.0 - p, p], ordering);
        Self {
            p_x1,
            f_y: [row(p_y1[0]), row(p_y1[1])],
        }
    }

    /// `E[Y | X = x]`.
    pub fn mean_y(&self, x: usize) -> f64 {
        self.f_y[x].mass(1)
    }

    /// `P(Y_{x1} = 1 ∧ Y_{x2} = 0)` by interval enumeration.
    pub fn joint_flip(&self, x1: usize, x2: usize) -> f64 {
        let (a, b) = (&self.f_y[x1], &self.f_y[x2]);
        let cuts = merged_cuts([a, b].into_iter());
        let mut acc = NeumaierSum::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if a.eval(mid) == 1 && b.eval(mid) == 0 {
                acc.add(w[1] - w[0]);
            }
        }
        acc.value()
    }

    pub fn function_table(&self) -> FunctionTable {
        let cuts = merged_cuts(self.f_y.iter());
        let grid: Vec<f64> = cuts
            .windows(2)
            .flat_map(|w| [0.5 * (w[0] + w[1]), w[1]])
            .collect();
        FunctionTable {
            rows: self
                .f_y
                .iter()
                .map(|r| grid.iter().map(|&u| r.eval(u)).collect())
                .collect(),
        }
    }
}

/// Monotonicity of `Y` relative to `X`: for every ordered pair with
/// `E[Y|x1] <= E[Y|x2]`, `P(Y_{x1} = 1 ∧ Y_{x2} = 0) = 0`.
pub fn check_binary_monotonic(scm: &BinaryPairScm) -> Result<bool> {
    if scm.f_y.iter().any(|r| r.values().iter().any(|&v| v > 1)) || !(0.0..=1.0).contains(&scm.p_x1)
    {
        return Err(invalid("binary monotonicity needs binary X and Y"));
    }
    for (x1, x2) in [(0, 1), (1, 0)] {
        if scm.mean_y(x1) <= scm.mean_y(x2) && scm.joint_flip(x1, x2) > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Sorted distinct cut points `0 = c_0 < .. < c_m = 1` of several rows.
fn merged_cuts<'a>(rows: impl Iterator<Item = &'a StepRow>) -> Vec<f64> {
    let mut cuts = vec![0.0, 1.0];
    for r in rows {
        cuts.extend_from_slice(r.breakpoints());
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts
}

/// How a world determines one variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Its structural function, parents read per the world's splice.
    Natural,
    Fixed(u32),
    /// The value the variable takes in another world.
    Copy(usize),
}

/// One world of a program.
#[derive(Debug, Clone)]
pub struct World {
    rules: Vec<Rule>,
    /// Splice tags plus the worlds tag `k > 0` refers to.
    splice: Option<(Splice, Vec<usize>)>,
}

impl World {
    pub fn natural(scm: &MmdpScm) -> Self {
        Self {
            rules: vec![Rule::Natural; scm.num_vars()],
            splice: None,
        }
    }

    pub fn with_interventions(scm: &MmdpScm, iv: &InterventionSet) -> Self {
        let mut w = Self::natural(scm);
        for (v, x) in iv.entries() {
            w.rules[v.index()] = Rule::Fixed(x);
        }
        w
    }

    pub fn set(&mut self, var: VarId, rule: Rule) {
        self.rules[var.index()] = rule;
    }

    /// Reads parents along `sets[k]` from world `worlds[k]`.
    pub fn spliced(mut self, scm: &MmdpScm, sets: &[&EdgeSet], worlds: &[usize]) -> Result<Self> {
        self.splice = Some((Splice::new(scm, sets)?, worlds.to_vec()));
        Ok(self)
    }
}

/// Worlds sharing one noise vector plus a linear readout.
#[derive(Debug, Clone)]
pub struct WorldProgram {
    /// If present, world 0 is natural and constrained to this trajectory.
    pub evidence: Option<Trajectory>,
    pub worlds: Vec<World>,
    pub readout: Vec<(usize, f64)>,
    pub constant: f64,
    pub outcome: Outcome,
}

/// Quantities the oracle evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactKind {
    Tcfe,
    CfAse,
    CfPse,
    Ase,
    Fpse,
    Pse,
    Tce,
    CfFpse,
}

impl ExactKind {
    pub fn is_counterfactual(self) -> bool {
        matches!(self, Self::Tcfe | Self::CfAse | Self::CfPse | Self::CfFpse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tcfe => "tcfe",
            Self::CfAse => "cf_ase",
            Self::CfPse => "cf_pse",
            Self::Ase => "ase",
            Self::Fpse => "fpse",
            Self::Pse => "pse",
            Self::Tce => "tce",
            Self::CfFpse => "cf_fpse",
        }
    }
}

impl std::str::FromStr for ExactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "tcfe" => Self::Tcfe,
            "cf_ase" => Self::CfAse,
            "cf_pse" => Self::CfPse,
            "ase" => Self::Ase,
            "fpse" => Self::Fpse,
            "pse" => Self::Pse,
            "tce" => Self::Tce,
            "cf_fpse" => Self::CfFpse,
            other => return Err(invalid(format!("unknown oracle kind `{other}`"))),
        })
    }
}

/// Edge subgraphs for path-specific kinds. PSE uses only `g`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subgraphs {
    pub g: EdgeSet,
    pub g_star: EdgeSet,
}

impl WorldProgram {
    /// The defining expression of `kind` for query `q`. Path-specific kinds
    /// take `subgraphs`; without them FPSE-type kinds use the agent-specific
    /// mapping of `q.effect_agents` and PSE the counterfactual path-specific
    /// subgraph.
    pub fn for_kind(
        scm: &MmdpScm,
        q: &EffectQuery,
        kind: ExactKind,
        subgraphs: Option<&Subgraphs>,
    ) -> Result<Self> {
        use crate::effects::EffectKind as K;
        let check_kind = match kind {
            ExactKind::Tcfe => K::Tcfe,
            ExactKind::CfAse | ExactKind::CfFpse => K::CfAse,
            ExactKind::CfPse => K::CfPse,
            ExactKind::Ase | ExactKind::Fpse | ExactKind::Pse => K::Ase,
            ExactKind::Tce => K::Tcfe,
        };
        let probe = match kind {
            ExactKind::Tce => EffectQuery {
                effect_agents: AgentSet(1),
                trajectory: None,
                ..q.clone()
            },
            ExactKind::Fpse | ExactKind::Pse if subgraphs.is_some() => EffectQuery {
                effect_agents: AgentSet(1),
                ..q.clone()
            },
            _ => q.clone(),
        };
        if kind == ExactKind::Tce {
            probe.validate(scm, K::Ase)?;
        } else {
            probe.validate(scm, check_kind)?;
        }
        let layout = scm.layout();
        let x = layout.action(q.agent, q.time);
        let do_value = |v: u32| {
            let mut w = World::natural(scm);
            w.set(x, Rule::Fixed(v));
            w
        };
        let default_fpse = || {
            let (g, g_star) = scm.ase_subgraphs(q.agent, q.time, q.effect_agents);
            Subgraphs { g, g_star }
        };
        let downstream: Vec<(VarId, bool)> = scm
            .downstream_actions(q.agent, q.time)
            .into_iter()
            .map(|(j, t)| (layout.action(j, t), q.effect_agents.contains(j)))
            .collect();
        let indicator = q.factual_indicator();
        let outcome = q.outcome.clone();
        let mk = |evidence: Option<Trajectory>,
                  worlds: Vec<World>,
                  readout: Vec<(usize, f64)>,
                  constant: f64| WorldProgram {
            evidence,
            worlds,
            readout,
            constant,
            outcome: outcome.clone(),
        };
        Ok(match kind {
            ExactKind::Tcfe => {
                let tau = q.trajectory.clone().expect("validated");
                mk(
                    Some(tau),
                    vec![World::natural(scm), do_value(q.action)],
                    vec![(1, 1.0)],
                    -indicator,
                )
            }
            ExactKind::CfAse => {
                let tau = q.trajectory.clone().expect("validated");
                let mut w2 = do_value(tau.value(x));
                for &(v, effect) in &downstream {
                    w2.set(
                        v,
                        if effect {
                            Rule::Copy(1)
                        } else {
                            Rule::Fixed(tau.value(v))
                        },
                    );
                }
                mk(
                    Some(tau),
                    vec![World::natural(scm), do_value(q.action), w2],
                    vec![(2, 1.0)],
                    -indicator,
                )
            }
            ExactKind::CfPse => {
                let tau = q.trajectory.clone().expect("validated");
                let mut w1 = do_value(q.action);
                for &(v, effect) in &downstream {
                    if !effect {
                        w1.set(v, Rule::Fixed(tau.value(v)));
                    }
                }
                mk(
                    Some(tau),
                    vec![World::natural(scm), w1],
                    vec![(1, 1.0)],
                    -indicator,
                )
            }
            ExactKind::Ase => {
                let r = q.reference.expect("validated");
                let mut w2 = do_value(r);
                for &(v, effect) in &downstream {
                    w2.set(v, Rule::Copy(if effect { 0 } else { 1 }));
                }
                mk(
                    None,
                    vec![do_value(q.action), do_value(r), w2],
                    vec![(2, 1.0), (1, -1.0)],
                    0.0,
                )
            }
            ExactKind::Fpse => {
                let r = q.reference.expect("validated");
                let sg = subgraphs.cloned().unwrap_or_else(default_fpse);
                let wq = do_value(r).spliced(scm, &[&sg.g, &sg.g_star], &[0, 1])?;
                mk(
                    None,
                    vec![do_value(q.action), do_value(r), wq],
                    vec![(2, 1.0), (1, -1.0)],
                    0.0,
                )
            }
            ExactKind::Pse => {
                let r = q.reference.expect("validated");
                let g = match subgraphs {
                    Some(s) => s.g.clone(),
                    None => scm.cf_pse_subgraph(q.agent, q.time, q.effect_agents),
                };
                let g_bar = scm.complement(&g);
                let w_x = do_value(q.action).spliced(scm, &[&g_bar], &[0])?;
                let w_ref = do_value(r).spliced(scm, &[&g_bar], &[0])?;
                mk(
                    None,
                    vec![do_value(r), w_x, w_ref],
                    vec![(1, 1.0), (2, -1.0)],
                    0.0,
                )
            }
            ExactKind::Tce => {
                let r = q.reference.expect("validated");
                mk(
                    None,
                    vec![do_value(q.action), do_value(r)],
                    vec![(0, 1.0), (1, -1.0)],
                    0.0,
                )
            }
            ExactKind::CfFpse => {
                let tau = q.trajectory.clone().expect("validated");
                let sg = subgraphs.cloned().unwrap_or_else(default_fpse);
                let fact = tau.value(x);
                let wq = do_value(fact).spliced(scm, &[&sg.g, &sg.g_star], &[1, 2])?;
                mk(
                    Some(tau),
                    vec![World::natural(scm), do_value(q.action), do_value(fact), wq],
                    vec![(3, 1.0)],
                    -indicator,
                )
            }
        })
    }
}

/// An exact value and the number of leaves evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactValue {
    pub value: f64,
    pub leaves: u64,
}

/// Exact value of `kind` for query `q`.
pub fn exact_query(
    scm: &MmdpScm,
    q: &EffectQuery,
    kind: ExactKind,
    subgraphs: Option<&Subgraphs>,
    budget: u64,
) -> Result<ExactValue> {
    let program = WorldProgram::for_kind(scm, q, kind, subgraphs)?;
    evaluate(scm, &program, budget)
}

struct Dfs<'a> {
    scm: &'a MmdpScm,
    program: &'a WorldProgram,
    y: usize,
    budget: u64,
    leaves: u64,
    num: NeumaierSum,
    den: NeumaierSum,
    values: Vec<Vec<u32>>,
}

/// Evaluates a world program by depth-first search over noise intervals.
///
/// At each variable the cut points of every row in use are merged; each
/// elementary interval fixes the output of every world, and intervals with
/// identical outputs are merged before recursing.
pub fn evaluate(scm: &MmdpScm, program: &WorldProgram, budget: u64) -> Result<ExactValue> {
    if let Some(tau) = &program.evidence {
        // surfaces zero-probability evidence before any work
        scm.posterior(tau)?;
    }
    let y = program.outcome.var(scm.layout()).index();
    let mut dfs = Dfs {
        scm,
        program,
        y,
        budget,
        leaves: 0,
        num: NeumaierSum::new(),
        den: NeumaierSum::new(),
        values: vec![Vec::with_capacity(y + 1); program.worlds.len()],
    };
    dfs.visit(0, 1.0)?;
    let den = dfs.den.value();
    let value = if program.evidence.is_some() {
        dfs.num.value() / den
    } else {
        dfs.num.value()
    };
    Ok(ExactValue {
        value: value + program.constant,
        leaves: dfs.leaves,
    })
}

impl<'a> Dfs<'a> {
    fn natural_row(&self, w: usize, var: VarId) -> Result<&'a StepRow> {
        let world = &self.program.worlds[w];
        let values = &self.values;
        match &world.splice {
            None => self.scm.row_with(var, |_, p| values[w][p.index()]),
            Some((splice, sources)) => {
                let tags = splice.tags(var);
                self.scm.row_with(var, |slot, p| match tags[slot] {
                    0 => values[w][p.index()],
                    k => values[sources[k as usize - 1]][p.index()],
                })
            }
        }
    }

    fn visit(&mut self, idx: usize, weight: f64) -> Result<()> {
        if idx > self.y {
            self.leaves += 1;
            if self.leaves > self.budget {
                return Err(Error::CellBudgetExceeded {
                    required: format!(
                        "more than {} leaves (full product {})",
                        self.budget,
                        full_product_size(self.scm, self.y)
                    ),
                    budget: self.budget,
                });
            }
            let mut hit = 0.0;
            for &(w, c) in &self.program.readout {
                if self.program.outcome.hit(self.values[w][self.y]) {
                    hit += c;
                }
            }
            self.num.add(weight * hit);
            self.den.add(weight);
            return Ok(());
        }
        let var = VarId(idx as u32);
        let nw = self.program.worlds.len();
        let mut rows: Vec<Option<&StepRow>> = vec![None; nw];
        for (w, slot) in rows.iter_mut().enumerate() {
            if self.program.worlds[w].rules[idx] == Rule::Natural {
                *slot = Some(self.natural_row(w, var)?);
            }
        }
        let observed = self.program.evidence.as_ref().map(|t| t.value(var));
        let mut branches: Vec<(Vec<u32>, f64)> = Vec::new();
        if rows.iter().all(Option::is_none) {
            branches.push((self.resolve(idx, &rows, 0.5), 1.0));
        } else {
            let cuts = merged_cuts(rows.iter().flatten().copied());
            for c in cuts.windows(2) {
                let len = c[1] - c[0];
                if len <= 0.0 {
                    continue;
                }
                let mid = 0.5 * (c[0] + c[1]);
                let out = self.resolve(idx, &rows, mid);
                if let Some(v) = observed {
                    if out[0] != v {
                        continue;
                    }
                }
                match branches.iter_mut().find(|b| b.0 == out) {
                    Some(b) => b.1 += len,
                    None => branches.push((out, len)),
                }
            }
        }
        for (out, len) in branches {
            for (w, &v) in out.iter().enumerate() {
                self.values[w].push(v);
            }
            let r = self.visit(idx + 1, weight * len);
            for w in 0..nw {
                self.values[w].pop();
            }
            r?;
        }
        Ok(())
    }

    /// Values of every world at variable `idx` for noise `u`.
    fn resolve(&self, idx: usize, rows: &[Option<&StepRow>], u: f64) -> Vec<u32> {
        let worlds = &self.program.worlds;
        let mut out: Vec<Option<u32>> = worlds
            .iter()
            .zip(rows)
            .map(|(w, r)| match (w.rules[idx], r) {
                (Rule::Fixed(v), _) => Some(v),
                (Rule::Natural, Some(r)) => Some(r.eval(u)),
                _ => None,
            })
            .collect();
        while out.iter().any(Option::is_none) {
            let mut progressed = false;
            for w in 0..worlds.len() {
                if let (None, Rule::Copy(src)) = (out[w], worlds[w].rules[idx]) {
                    if let Some(v) = out[src] {
                        out[w] = Some(v);
                        progressed = true;
                    }
                }
            }
            assert!(progressed, "copy rules form a cycle");
        }
        out.into_iter().map(|v| v.expect("resolved")).collect()
    }
}

/// Per-variable cut points of the full product partition: for each variable
/// the union of the breakpoints of every row it can use.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCellPartition {
    pub cuts: Vec<Vec<f64>>,
}

impl NoiseCellPartition {
    /// Number of elementary intervals of each variable.
    pub fn intervals(&self) -> Vec<usize> {
        self.cuts.iter().map(|c| c.len() - 1).collect()
    }

    /// Number of cells as a decimal string (may exceed `u128`).
    pub fn cell_count(&self) -> String {
        count_string(&self.intervals())
    }

    pub fn cell_count_u128(&self) -> Option<u128> {
        self.intervals()
            .iter()
            .try_fold(1u128, |acc, &k| acc.checked_mul(k as u128))
    }

    /// Every cell as `(noise at the cell midpoint, probability)`.
    pub fn cells(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let sizes = self.intervals();
        let total = self.cell_count_u128().unwrap_or(u128::MAX);
        let mut digits = vec![0usize; sizes.len()];
        let mut emitted: u128 = 0;
        std::iter::from_fn(move || {
            if emitted >= total {
                return None;
            }
            let mut noise = Vec::with_capacity(digits.len());
            let mut p = 1.0;
            for (k, &d) in digits.iter().enumerate() {
                let (a, b) = (self.cuts[k][d], self.cuts[k][d + 1]);
                noise.push(0.5 * (a + b));
                p *= b - a;
            }
            emitted += 1;
            for k in (0..digits.len()).rev() {
                digits[k] += 1;
                if digits[k] < sizes[k] {
                    break;
                }
                digits[k] = 0;
            }
            Some((noise, p))
        })
    }
}

fn count_string(sizes: &[usize]) -> String {
    match sizes
        .iter()
        .try_fold(1u128, |acc, &k| acc.checked_mul(k as u128))
    {
        Some(n) => n.to_string(),
        None => {
            let log10: f64 = sizes.iter().map(|&k| (k as f64).log10()).sum();
            format!("~1e{}", log10.floor() as i64)
        }
    }
}

fn var_cuts(scm: &MmdpScm, var: VarId) -> Vec<f64> {
    merged_cuts(scm.rows_of_var(var).into_iter())
}

fn full_product_size(scm: &MmdpScm, upto: usize) -> String {
    let sizes: Vec<usize> = (0..=upto)
        .map(|i| var_cuts(scm, VarId(i as u32)).len() - 1)
        .collect();
    count_string(&sizes)
}

/// The full product partition of the noise space.
pub fn enumerate_cells(scm: &MmdpScm, budget: u64) -> Result<NoiseCellPartition> {
    let part = NoiseCellPartition {
        cuts: scm.layout().vars().map(|v| var_cuts(scm, v)).collect(),
    };
    match part.cell_count_u128() {
        Some(n) if n <= budget as u128 => Ok(part),
        _ => Err(Error::CellBudgetExceeded {
            required: part.cell_count(),
            budget,
        }),
    }
}

/// Values of every world of `program` for one concrete noise vector.
pub fn eval_worlds(scm: &MmdpScm, program: &WorldProgram, noise: &[f64]) -> Result<Vec<Vec<u32>>> {
    let nw = program.worlds.len();
    let mut values: Vec<Vec<u32>> = vec![Vec::with_capacity(noise.len()); nw];
    for (idx, &u) in noise.iter().enumerate() {
        let var = VarId(idx as u32);
        let mut out: Vec<Option<u32>> = vec![None; nw];
        for w in 0..nw {
            let world = &program.worlds[w];
            out[w] = match world.rules[idx] {
                Rule::Fixed(v) => Some(v),
                Rule::Copy(_) => None,
                Rule::Natural => {
                    let row = match &world.splice {
                        None => scm.row_with(var, |_, p| values[w][p.index()])?,
                        Some((splice, sources)) => {
                            let tags = splice.tags(var);
                            scm.row_with(var, |slot, p| match tags[slot] {
                                0 => values[w][p.index()],
                                k => values[sources[k as usize - 1]][p.index()],
                            })?
                        }
                    };
                    Some(row.eval(u))
                }
            };
        }
        while out.iter().any(Option::is_none) {
            for w in 0..nw {
                if let (None, Rule::Copy(src)) = (out[w], program.worlds[w].rules[idx]) {
                    out[w] = out[src];
                }
            }
        }
        for w in 0..nw {
            values[w].push(out[w].expect("resolved"));
        }
    }
    Ok(values)
}

/// Evaluates a program over the full product partition, conditioning by
/// discarding cells whose factual world disagrees with the evidence.
pub fn evaluate_by_cells(scm: &MmdpScm, program: &WorldProgram, budget: u64) -> Result<ExactValue> {
    let part = enumerate_cells(scm, budget)?;
    let y = program.outcome.var(scm.layout()).index();
    let (mut num, mut den) = (NeumaierSum::new(), NeumaierSum::new());
    let mut leaves = 0;
    for (noise, p) in part.cells() {
        leaves += 1;
        let values = eval_worlds(scm, program, &noise)?;
        if let Some(tau) = &program.evidence {
            if values[0] != tau.values() {
                continue;
            }
        }
        let hit: f64 = program
            .readout
            .iter()
            .filter(|(w, _)| program.outcome.hit(values[*w][y]))
            .map(|(_, c)| c)
            .sum();
        num.add(p * hit);
        den.add(p);
    }
    if program.evidence.is_some() && den.value() <= 0.0 {
        return Err(Error::ZeroProbabilityEvidence {
            variable: "trajectory".into(),
        });
    }
    let value = if program.evidence.is_some() {
        num.value() / den.value()
    } else {
        num.value()
    };
    Ok(ExactValue {
        value: value + program.constant,
        leaves,
    })
}

/// Exact value by full cell enumeration.
pub fn exact_query_by_cells(
    scm: &MmdpScm,
    q: &EffectQuery,
    kind: ExactKind,
    subgraphs: Option<&Subgraphs>,
    budget: u64,
) -> Result<ExactValue> {
    let program = WorldProgram::for_kind(scm, q, kind, subgraphs)?;
    evaluate_by_cells(scm, &program, budget)
}
