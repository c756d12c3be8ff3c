//! Monte Carlo estimators of total, agent-specific and path-specific effects.
//!
//! Counterfactual kinds draw noise from the posterior given the observed
//! trajectory; interventional kinds draw prior noise. Each draw feeds every
//! world of the query (common random numbers). Draws are processed in seeded
//! chunks, see [`crate::rng`].

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ActionId, AgentSet, MmdpSpec, StateId, Trajectory, VarId, VarLayout};
use crate::rng::{chunk_rng, num_chunks, CHUNK};
use crate::scm::{EdgeSet, InterventionSet, MmdpScm, NoiseVector, Splice};
use crate::stats::bernoulli_se;

/// Predicate `S_time ∈ accepted`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub time: usize,
    accepted: Vec<StateId>,
}

impl Outcome {
    pub fn new(time: usize, accepted: impl IntoIterator<Item = StateId>) -> Self {
        let mut accepted: Vec<StateId> = accepted.into_iter().collect();
        accepted.sort_unstable();
        accepted.dedup();
        Self { time, accepted }
    }

    pub fn state_is(time: usize, state: StateId) -> Self {
        Self::new(time, [state])
    }

    pub fn accepted(&self) -> &[StateId] {
        &self.accepted
    }

    pub fn var(&self, layout: VarLayout) -> VarId {
        layout.state(self.time)
    }

    #[inline]
    pub fn hit(&self, state: StateId) -> bool {
        self.accepted.binary_search(&state).is_ok()
    }

    /// Parses `final_state==<id>` or `state[t]==<id>`; `<id>` is a state
    /// name or index.
    pub fn parse(text: &str, spec: &MmdpSpec) -> Result<Self> {
        let text = text.trim();
        let (lhs, rhs) = text.split_once("==").ok_or_else(|| {
            invalid(format!(
                "outcome `{text}` must have the form final_state==<id> or state[t]==<id>"
            ))
        })?;
        let (lhs, rhs) = (lhs.trim(), rhs.trim());
        let time = if lhs == "final_state" {
            spec.horizon
        } else if let Some(t) = lhs.strip_prefix("state[").and_then(|r| r.strip_suffix(']')) {
            t.trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("bad time index in outcome `{text}`")))?
        } else {
            return Err(invalid(format!(
                "outcome `{text}` must start with final_state or state[t]"
            )));
        };
        if time > spec.horizon {
            return Err(invalid(format!(
                "outcome time {time} exceeds the horizon {}",
                spec.horizon
            )));
        }
        let state = spec
            .state_index(rhs)
            .or_else(|| {
                rhs.parse::<StateId>()
                    .ok()
                    .filter(|&s| (s as usize) < spec.num_states())
            })
            .ok_or_else(|| invalid(format!("unknown state `{rhs}` in outcome")))?;
        Ok(Self::state_is(time, state))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.accepted.iter().map(|s| s.to_string()).collect();
        write!(f, "S_{} in {{{}}}", self.time, ids.join(","))
    }
}

/// Quantity estimated by a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Tcfe,
    CfAse,
    CfPse,
    Ase,
    Fpse,
}

impl EffectKind {
    pub const ALL: [EffectKind; 5] = [Self::Tcfe, Self::CfAse, Self::CfPse, Self::Ase, Self::Fpse];

    pub fn is_counterfactual(self) -> bool {
        matches!(self, Self::Tcfe | Self::CfAse | Self::CfPse)
    }

    pub fn needs_effect_agents(self) -> bool {
        !matches!(self, Self::Tcfe)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tcfe => "tcfe",
            Self::CfAse => "cf_ase",
            Self::CfPse => "cf_pse",
            Self::Ase => "ase",
            Self::Fpse => "fpse",
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EffectKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "tcfe" => Ok(Self::Tcfe),
            "cf_ase" => Ok(Self::CfAse),
            "cf_pse" => Ok(Self::CfPse),
            "ase" => Ok(Self::Ase),
            "fpse" => Ok(Self::Fpse),
            other => Err(invalid(format!("unknown effect kind `{other}`"))),
        }
    }
}

/// One effect query against an MMDP-SCM.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectQuery {
    /// Observed trajectory, required by counterfactual kinds.
    pub trajectory: Option<Trajectory>,
    pub agent: usize,
    pub time: usize,
    /// Alternative action `a_{i,t}`.
    pub action: ActionId,
    /// Reference action `a*_{i,t}`, required by interventional kinds.
    pub reference: Option<ActionId>,
    pub effect_agents: AgentSet,
    pub outcome: Outcome,
    pub samples: usize,
    pub seed: u64,
}

impl EffectQuery {
    pub fn validate(&self, scm: &MmdpScm, kind: EffectKind) -> Result<()> {
        let spec = scm.spec();
        if self.agent >= spec.num_agents() {
            return Err(invalid(format!("agent index {} out of range", self.agent)));
        }
        if self.time >= spec.horizon {
            return Err(invalid(format!(
                "action time {} must be below the horizon {}",
                self.time, spec.horizon
            )));
        }
        if self.action as usize >= spec.num_actions(self.agent) {
            return Err(invalid(format!(
                "action {} is not available to agent {}",
                self.action, spec.agents[self.agent].name
            )));
        }
        if self.outcome.time <= self.time || self.outcome.time > spec.horizon {
            return Err(invalid(format!(
                "outcome S_{} must come after A_{{{},{}}}",
                self.outcome.time, spec.agents[self.agent].name, self.time
            )));
        }
        if self
            .outcome
            .accepted
            .iter()
            .any(|&s| s as usize >= spec.num_states())
        {
            return Err(invalid("outcome names an unknown state"));
        }
        if self.samples == 0 {
            return Err(invalid("sample budget must be at least 1"));
        }
        if kind.needs_effect_agents() {
            if self.effect_agents.is_empty() {
                return Err(invalid("effect agent set must not be empty"));
            }
            if self.effect_agents.0 & !AgentSet::all(spec.num_agents()).0 != 0 {
                return Err(invalid("effect agent set names an unknown agent"));
            }
        }
        if kind.is_counterfactual() {
            let tau = self
                .trajectory
                .as_ref()
                .ok_or_else(|| invalid(format!("{kind} needs an observed trajectory")))?;
            tau.validate(spec)?;
        } else {
            match self.reference {
                Some(r) if (r as usize) < spec.num_actions(self.agent) => {}
                Some(r) => return Err(invalid(format!("reference action {r} is out of range"))),
                None => return Err(invalid(format!("{kind} needs a reference action"))),
            }
        }
        Ok(())
    }

    fn tau(&self) -> &Trajectory {
        self.trajectory.as_ref().expect("validated")
    }

    fn reference(&self) -> ActionId {
        self.reference.expect("validated")
    }

    /// `1(tau(Y) ∈ y)`.
    pub fn factual_indicator(&self) -> f64 {
        match &self.trajectory {
            Some(tau) if self.outcome.hit(tau.state(self.outcome.time)) => 1.0,
            _ => 0.0,
        }
    }
}

/// Result of a Monte Carlo estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub value: f64,
    pub se: f64,
    /// Successes in the modified world.
    pub count: u64,
    #[serde(rename = "H")]
    pub samples: usize,
    pub seed: u64,
}

/// Per-chunk counts: hits in the modified world, hits in the reference world,
/// and draws where the two disagree in either direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    hits: u64,
    ref_hits: u64,
    up: u64,
    down: u64,
}

impl Tally {
    #[inline]
    fn record(&mut self, hit: bool, ref_hit: bool) {
        self.hits += hit as u64;
        self.ref_hits += ref_hit as u64;
        self.up += (hit && !ref_hit) as u64;
        self.down += (!hit && ref_hit) as u64;
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            hits: self.hits + o.hits,
            ref_hits: self.ref_hits + o.ref_hits,
            up: self.up + o.up,
            down: self.down + o.down,
        }
    }
}

/// Runs `draw` over `samples` draws in seeded chunks and sums the tallies.
fn run_chunks<F>(samples: usize, seed: u64, draw: F) -> Result<Tally>
where
    F: Fn(&mut ChaCha8Rng, usize, &mut Tally) -> Result<()> + Sync,
{
    (0..num_chunks(samples))
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(samples - c * CHUNK);
            let mut rng = chunk_rng(seed, c as u64);
            let mut t = Tally::default();
            draw(&mut rng, n, &mut t)?;
            Ok(t)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))
}

fn counterfactual_estimate(t: Tally, q: &EffectQuery) -> EffectEstimate {
    let p = t.hits as f64 / q.samples as f64;
    EffectEstimate {
        value: p - q.factual_indicator(),
        se: bernoulli_se(p, q.samples),
        count: t.hits,
        samples: q.samples,
        seed: q.seed,
    }
}

fn difference_estimate(t: Tally, q: &EffectQuery) -> EffectEstimate {
    let h = q.samples as f64;
    let d = (t.up as f64 - t.down as f64) / h;
    let second = (t.up + t.down) as f64 / h;
    let se = if q.samples > 1 {
        ((second - d * d).max(0.0) / h).sqrt()
    } else {
        0.0
    };
    EffectEstimate {
        value: d,
        se,
        count: t.hits,
        samples: q.samples,
        seed: q.seed,
    }
}

/// Variables of the downstream actions of the acting variable that precede
/// the outcome, paired with whether they belong to an effect agent.
fn downstream_vars(scm: &MmdpScm, q: &EffectQuery, effect: AgentSet) -> Vec<(VarId, bool)> {
    let layout = scm.layout();
    let y = q.outcome.var(layout);
    scm.downstream_actions(q.agent, q.time)
        .into_iter()
        .map(|(j, t)| (layout.action(j, t), effect.contains(j)))
        .filter(|(v, _)| *v < y)
        .collect()
}

fn do_action(scm: &MmdpScm, q: &EffectQuery, a: ActionId) -> InterventionSet {
    let mut iv = InterventionSet::new(scm.layout());
    iv.set(scm.layout().action(q.agent, q.time), a);
    iv
}

/// Total counterfactual effect: posterior draws, outcome under `do(a)`.
pub fn estimate_tcfe(scm: &MmdpScm, q: &EffectQuery) -> Result<EffectEstimate> {
    q.validate(scm, EffectKind::Tcfe)?;
    let post = scm.posterior(q.tau())?;
    let iv = do_action(scm, q, q.action);
    let y = q.outcome.var(scm.layout()).index();
    let t = run_chunks(q.samples, q.seed, |rng, n, tally| {
        let (mut u, mut out) = (Vec::new(), Vec::new());
        for _ in 0..n {
            post.sample_into(rng, &mut u);
            scm.simulate_into(&u, &iv, y, &mut out)?;
            tally.record(q.outcome.hit(out[y]), false);
        }
        Ok(())
    })?;
    Ok(counterfactual_estimate(t, q))
}

/// Counterfactual agent-specific effect through `q.effect_agents`.
pub fn estimate_cf_ase(scm: &MmdpScm, q: &EffectQuery) -> Result<EffectEstimate> {
    Ok(estimate_cf_ase_multi(scm, q, &[q.effect_agents])?.remove(0))
}

/// cf-ASE for several effect-agent sets from the same posterior draws. Each
/// entry equals what [`estimate_cf_ase`] returns for that set and seed.
pub fn estimate_cf_ase_multi(
    scm: &MmdpScm,
    q: &EffectQuery,
    sets: &[AgentSet],
) -> Result<Vec<EffectEstimate>> {
    for &set in sets {
        EffectQuery {
            effect_agents: set,
            ..q.clone()
        }
        .validate(scm, EffectKind::CfAse)?;
    }
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    let tau = q.tau();
    let post = scm.posterior(tau)?;
    let do_a = do_action(scm, q, q.action);
    let y = q.outcome.var(scm.layout()).index();
    let plans: Vec<Vec<(VarId, bool)>> = sets.iter().map(|&s| downstream_vars(scm, q, s)).collect();
    let tallies: Vec<Vec<Tally>> = (0..num_chunks(q.samples))
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(q.samples - c * CHUNK);
            let mut rng = chunk_rng(q.seed, c as u64);
            let mut tallies = vec![Tally::default(); sets.len()];
            let (mut u, mut cf, mut out) = (Vec::new(), Vec::new(), Vec::new());
            let mut iv = InterventionSet::new(scm.layout());
            for _ in 0..n {
                post.sample_into(&mut rng, &mut u);
                scm.simulate_into(&u, &do_a, y, &mut cf)?;
                for (plan, tally) in plans.iter().zip(tallies.iter_mut()) {
                    iv.clear();
                    for &(v, effect) in plan {
                        iv.set(v, if effect { cf[v.index()] } else { tau.value(v) });
                    }
                    scm.simulate_into(&u, &iv, y, &mut out)?;
                    tally.record(q.outcome.hit(out[y]), false);
                }
            }
            Ok(tallies)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..sets.len())
        .map(|k| {
            let t = tallies
                .iter()
                .fold(Tally::default(), |acc, c| acc.merge(c[k]));
            counterfactual_estimate(
                t,
                &EffectQuery {
                    effect_agents: sets[k],
                    ..q.clone()
                },
            )
        })
        .collect())
}

/// Counterfactual path-specific effect: `do(a)` with the non-effect agents'
/// downstream actions held at their observed values.
pub fn estimate_cf_pse(scm: &MmdpScm, q: &EffectQuery) -> Result<EffectEstimate> {
    q.validate(scm, EffectKind::CfPse)?;
    let tau = q.tau();
    let post = scm.posterior(tau)?;
    let mut iv = do_action(scm, q, q.action);
    for (v, effect) in downstream_vars(scm, q, q.effect_agents) {
        if !effect {
            iv.set(v, tau.value(v));
        }
    }
    let y = q.outcome.var(scm.layout()).index();
    let t = run_chunks(q.samples, q.seed, |rng, n, tally| {
        let (mut u, mut out) = (Vec::new(), Vec::new());
        for _ in 0..n {
            post.sample_into(rng, &mut u);
            scm.simulate_into(&u, &iv, y, &mut out)?;
            tally.record(q.outcome.hit(out[y]), false);
        }
        Ok(())
    })?;
    Ok(counterfactual_estimate(t, q))
}

/// Interventional agent-specific effect relative to `q.reference`.
pub fn estimate_ase(scm: &MmdpScm, q: &EffectQuery) -> Result<EffectEstimate> {
    q.validate(scm, EffectKind::Ase)?;
    let do_a = do_action(scm, q, q.action);
    let do_ref = do_action(scm, q, q.reference());
    let plan = downstream_vars(scm, q, q.effect_agents);
    let y = q.outcome.var(scm.layout()).index();
    let len = scm.num_vars();
    let t = run_chunks(q.samples, q.seed, |rng, n, tally| {
        let (mut wa, mut wb, mut wc) = (Vec::new(), Vec::new(), Vec::new());
        let mut iv = do_ref.clone();
        for _ in 0..n {
            let u = NoiseVector::sample_prior(len, rng);
            scm.simulate_into(u.as_slice(), &do_a, y, &mut wa)?;
            scm.simulate_into(u.as_slice(), &do_ref, y, &mut wb)?;
            for &(v, effect) in &plan {
                iv.set(v, if effect { wa[v.index()] } else { wb[v.index()] });
            }
            scm.simulate_into(u.as_slice(), &iv, y, &mut wc)?;
            tally.record(q.outcome.hit(wc[y]), q.outcome.hit(wb[y]));
        }
        Ok(())
    })?;
    Ok(difference_estimate(t, q))
}

/// Fixed path-specific effect with effect subgraph `g` and reference
/// subgraph `g_star`; `x` is `q.action` and `x*` is `q.reference`.
pub fn estimate_fpse(
    scm: &MmdpScm,
    g: &EdgeSet,
    g_star: &EdgeSet,
    q: &EffectQuery,
) -> Result<EffectEstimate> {
    let probe = EffectQuery {
        effect_agents: AgentSet(1),
        ..q.clone()
    };
    probe.validate(scm, EffectKind::Fpse)?;
    let splice = Splice::new(scm, &[g, g_star])?;
    let do_x = do_action(scm, q, q.action);
    let do_ref = do_action(scm, q, q.reference());
    let y = q.outcome.var(scm.layout()).index();
    let len = scm.num_vars();
    let t = run_chunks(q.samples, q.seed, |rng, n, tally| {
        let (mut we, mut ws, mut wq) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let u = NoiseVector::sample_prior(len, rng);
            scm.simulate_into(u.as_slice(), &do_x, y, &mut we)?;
            scm.simulate_into(u.as_slice(), &do_ref, y, &mut ws)?;
            scm.simulate_spliced(u.as_slice(), &do_ref, &splice, &[&we, &ws], y, &mut wq)?;
            tally.record(q.outcome.hit(wq[y]), q.outcome.hit(ws[y]));
        }
        Ok(())
    })?;
    Ok(difference_estimate(t, q))
}

/// Dispatches on `kind`; FPSE uses the agent-specific subgraph mapping of
/// `q.effect_agents`.
pub fn estimate(scm: &MmdpScm, kind: EffectKind, q: &EffectQuery) -> Result<EffectEstimate> {
    match kind {
        EffectKind::Tcfe => estimate_tcfe(scm, q),
        EffectKind::CfAse => estimate_cf_ase(scm, q),
        EffectKind::CfPse => estimate_cf_pse(scm, q),
        EffectKind::Ase => estimate_ase(scm, q),
        EffectKind::Fpse => {
            q.validate(scm, kind)?;
            let (g, g_star) = scm.ase_subgraphs(q.agent, q.time, q.effect_agents);
            estimate_fpse(scm, &g, &g_star, q)
        }
    }
}
