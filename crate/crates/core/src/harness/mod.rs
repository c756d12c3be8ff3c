//! Experiment pipelines: alternative-action selection, the Sepsis trust
//! sweep and the Graph robustness studies.

mod graph;
mod trust;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{estimate_tcfe, EffectEstimate, EffectQuery, Outcome};
use crate::env::graph::GraphEnvConfig;
use crate::env::sepsis::SepsisEnvConfig;
use crate::error::{invalid, Result};
use crate::model::{ActionId, AgentSet, Trajectory};
use crate::rng::derive_seed_path;
use crate::scm::MmdpScm;

pub use graph::{
    run_ordering_misspecification, run_policy_perturbation, GraphBaseline, OrderingSummary,
    PerturbationSummary, RobustnessRun,
};
pub use trust::{run_trust_sweep, DirectionSummary, TrustSummary};

/// Upper edges of the first bins of the trust-sweep histogram:
/// `[0, 0.25)`, `[0.25, 0.75)`, `[0.75, 1]`.
pub const EFFECT_BINS: [f64; 2] = [0.25, 0.75];
/// Upper edges of the target-value groups of the robustness studies.
pub const TARGET_BINS: [f64; 3] = [0.25, 0.5, 0.75];

/// Index of the bin of `x` given ascending upper edges.
pub fn bin_index(x: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| x >= e).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    TrustSweep,
    PolicyPerturbation,
    OrderingMisspecification,
    /// Both Graph studies on one shared selection.
    GraphRobustness,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrustSweep => "trust_sweep",
            Self::PolicyPerturbation => "policy_perturbation",
            Self::OrderingMisspecification => "ordering_misspecification",
            Self::GraphRobustness => "graph_robustness",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "trust_sweep" => Ok(Self::TrustSweep),
            "policy_perturbation" => Ok(Self::PolicyPerturbation),
            "ordering_misspecification" => Ok(Self::OrderingMisspecification),
            "graph_robustness" => Ok(Self::GraphRobustness),
            other => Err(invalid(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Experiment configuration. Fields missing from a JSON document take the
/// values of the desk (or full-scale) profile of its experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Failure trajectories, per trust level for the Sepsis sweep.
    pub trajectories: usize,
    /// TCFE selection threshold.
    pub threshold: f64,
    /// Counterfactual samples per estimate.
    pub samples: usize,
    /// Samples behind each Graph target value.
    pub target_samples: usize,
    pub mu_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// Graph action orderings to evaluate, lowest first.
    pub orderings: Vec<Vec<String>>,
    /// Whether Graph effect-agent subsets may contain the acting agent.
    pub include_acting_agent: bool,
    pub graph: GraphEnvConfig,
    pub sepsis: SepsisEnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(ExperimentKind::TrustSweep)
    }
}

fn all_graph_orderings() -> Vec<Vec<String>> {
    let names = ["up", "down", "straight"];
    crate::oracle::all_orderings(3)
        .into_iter()
        .map(|o| o.0.iter().map(|&a| names[a as usize].to_string()).collect())
        .collect()
}

impl ExperimentConfig {
    /// Desk-scale profile.
    pub fn desk(experiment: ExperimentKind) -> Self {
        let sepsis = experiment == ExperimentKind::TrustSweep;
        Self {
            experiment,
            seed: 8854,
            trajectories: if sepsis { 20 } else { 150 },
            threshold: if sepsis { 0.8 } else { 0.75 },
            samples: 100,
            target_samples: 2000,
            mu_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            eps_grid: vec![0.0, 0.025, 0.05, 0.1, 0.2],
            orderings: all_graph_orderings(),
            include_acting_agent: false,
            graph: GraphEnvConfig::default(),
            sepsis: SepsisEnvConfig::default(),
        }
    }

    /// Trajectory counts of the full study.
    pub fn paper(experiment: ExperimentKind) -> Self {
        let mut c = Self::desk(experiment);
        c.trajectories = if experiment == ExperimentKind::TrustSweep {
            100
        } else {
            500
        };
        c.target_samples = 10_000;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_profile(text, false)
    }

    /// Parses `text` on top of the desk profile, or the full-scale one when
    /// `paper_scale` is set.
    pub fn from_json_profile(text: &str, paper_scale: bool) -> Result<Self> {
        let bad = |e: serde_json::Error| invalid(format!("experiment config: {e}"));
        let overlay: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(fields) = overlay else {
            return Err(invalid("experiment config must be a JSON object"));
        };
        let kind: ExperimentKind = match fields.get("experiment") {
            Some(v) => serde_json::from_value(v.clone()).map_err(bad)?,
            None => return Err(invalid("experiment config needs an `experiment` field")),
        };
        let base = if paper_scale {
            Self::paper(kind)
        } else {
            Self::desk(kind)
        };
        let serde_json::Value::Object(mut merged) = serde_json::to_value(&base)? else {
            unreachable!()
        };
        merged.extend(fields);
        let c: Self = serde_json::from_value(serde_json::Value::Object(merged)).map_err(bad)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(invalid(format!(
                "threshold {} is outside (0, 1]",
                self.threshold
            )));
        }
        if self.samples == 0 || self.target_samples == 0 {
            return Err(invalid("sample budgets must be at least 1"));
        }
        if self.trajectories == 0 {
            return Err(invalid("trajectory count must be at least 1"));
        }
        match self.experiment {
            ExperimentKind::TrustSweep => {
                if self.mu_grid.is_empty() {
                    return Err(invalid("trust grid is empty"));
                }
                if let Some(mu) = self.mu_grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
                    return Err(invalid(format!("trust {mu} is outside [0, 1]")));
                }
            }
            kind => {
                self.graph.validate()?;
                if matches!(
                    kind,
                    ExperimentKind::PolicyPerturbation | ExperimentKind::GraphRobustness
                ) {
                    if self.eps_grid.is_empty() {
                        return Err(invalid("perturbation grid is empty"));
                    }
                    if let Some(e) = self.eps_grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
                        return Err(invalid(format!("perturbation size {e} is outside [0, 1]")));
                    }
                }
                if matches!(
                    kind,
                    ExperimentKind::OrderingMisspecification | ExperimentKind::GraphRobustness
                ) {
                    if self.orderings.is_empty() {
                        return Err(invalid("ordering list is empty"));
                    }
                    for o in &self.orderings {
                        graph::parse_ordering(o)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    /// Trust level, perturbation size, ordering or `target`.
    pub setting: String,
    pub method: String,
    /// Effect-agent set.
    pub direction: String,
    pub trajectory_id: usize,
    pub agent: usize,
    pub time: usize,
    pub action: ActionId,
    pub effect: f64,
    pub se: f64,
    pub samples: usize,
    pub seed: u64,
}

/// A row with the position of its setting and direction in the run, used
/// for the stable output order.
#[derive(Debug, Clone)]
pub(crate) struct Keyed {
    pub setting_rank: usize,
    pub direction_rank: usize,
    pub row: ResultRow,
}

pub(crate) fn sort_rows(mut rows: Vec<Keyed>) -> Vec<ResultRow> {
    rows.sort_by(|a, b| {
        (
            a.row.experiment.as_str(),
            a.setting_rank,
            a.row.trajectory_id,
            a.row.time,
            a.row.agent,
            a.row.action,
            a.row.method.as_str(),
            a.direction_rank,
        )
            .cmp(&(
                b.row.experiment.as_str(),
                b.setting_rank,
                b.row.trajectory_id,
                b.row.time,
                b.row.agent,
                b.row.action,
                b.row.method.as_str(),
                b.direction_rank,
            ))
    });
    rows.into_iter().map(|k| k.row).collect()
}

/// An alternative action that passed the TCFE threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub trajectory_id: usize,
    pub agent: usize,
    pub time: usize,
    pub action: ActionId,
    pub outcome: Outcome,
    pub tcfe: EffectEstimate,
}

impl Selected {
    /// Query for this alternative with the given effect agents and budget.
    pub fn query(
        &self,
        tau: &Trajectory,
        effect_agents: AgentSet,
        samples: usize,
        seed: u64,
    ) -> EffectQuery {
        EffectQuery {
            trajectory: Some(tau.clone()),
            agent: self.agent,
            time: self.time,
            action: self.action,
            reference: None,
            effect_agents,
            outcome: self.outcome.clone(),
            samples,
            seed,
        }
    }
}

pub(crate) const STAGE_FAILURES: u64 = 1;
pub(crate) const STAGE_SELECT: u64 = 2;
pub(crate) const STAGE_EFFECT: u64 = 3;
pub(crate) const STAGE_TARGET: u64 = 4;
pub(crate) const STAGE_PERTURB: u64 = 5;

/// Keeps every non-factual action of every agent before the outcome step
/// whose estimated TCFE toward `outcome(tau)` reaches `threshold`.
/// Trajectories without an outcome are skipped.
pub fn select_alternatives<F>(
    scm: &MmdpScm,
    trajectories: &[Trajectory],
    outcome: F,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<Selected>>
where
    F: Fn(&Trajectory) -> Option<Outcome>,
{
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold {threshold} is outside (0, 1]")));
    }
    let spec = scm.spec();
    let mut candidates = Vec::new();
    for (id, tau) in trajectories.iter().enumerate() {
        let Some(y) = outcome(tau) else { continue };
        for t in 0..y.time.min(spec.horizon) {
            for agent in 0..spec.num_agents() {
                for a in 0..spec.num_actions(agent) as ActionId {
                    if a != tau.action(agent, t) {
                        candidates.push((id, agent, t, a, y.clone()));
                    }
                }
            }
        }
    }
    let estimates: Vec<Option<Selected>> = candidates
        .into_par_iter()
        .map(|(id, agent, time, action, outcome)| {
            let q = EffectQuery {
                trajectory: Some(trajectories[id].clone()),
                agent,
                time,
                action,
                reference: None,
                effect_agents: AgentSet::empty(),
                outcome: outcome.clone(),
                samples,
                seed: derive_seed_path(
                    seed,
                    &[
                        STAGE_SELECT,
                        id as u64,
                        agent as u64,
                        time as u64,
                        action as u64,
                    ],
                ),
            };
            let tcfe = estimate_tcfe(scm, &q)?;
            Ok((tcfe.value >= threshold).then_some(Selected {
                trajectory_id: id,
                agent,
                time,
                action,
                outcome,
                tcfe,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(estimates.into_iter().flatten().collect())
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub csv: Vec<PathBuf>,
    pub summary: PathBuf,
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "experiment",
            "setting",
            "method",
            "direction",
            "trajectory_id",
            "agent",
            "time",
            "action",
            "effect",
            "se",
            "samples",
            "seed",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a, T: Serialize> {
    experiment: &'static str,
    config: &'a ExperimentConfig,
    results: T,
}

/// Runs the configured experiment and writes `<experiment>.csv` files and
/// `summary.json` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let summary = out.join("summary.json");
    let mut csv = Vec::new();
    let mut emit = |name: &str, rows: &[ResultRow]| -> Result<()> {
        let path = out.join(format!("{name}.csv"));
        write_csv(&path, rows)?;
        csv.push(path);
        Ok(())
    };
    let kind = config.experiment;
    match kind {
        ExperimentKind::TrustSweep => {
            let (rows, results) = run_trust_sweep(config)?;
            emit(kind.as_str(), &rows)?;
            write_json(
                &summary,
                &SummaryFile {
                    experiment: kind.as_str(),
                    config,
                    results,
                },
            )?;
        }
        ExperimentKind::PolicyPerturbation => {
            let base = GraphBaseline::prepare(config)?;
            let run = run_policy_perturbation(&base, config)?;
            emit(kind.as_str(), &run.rows)?;
            write_json(
                &summary,
                &SummaryFile {
                    experiment: kind.as_str(),
                    config,
                    results: run.summary,
                },
            )?;
        }
        ExperimentKind::OrderingMisspecification => {
            let base = GraphBaseline::prepare(config)?;
            let run = run_ordering_misspecification(&base, config)?;
            emit(kind.as_str(), &run.rows)?;
            write_json(
                &summary,
                &SummaryFile {
                    experiment: kind.as_str(),
                    config,
                    results: run.summary,
                },
            )?;
        }
        ExperimentKind::GraphRobustness => {
            let base = GraphBaseline::prepare(config)?;
            let pert = run_policy_perturbation(&base, config)?;
            let ord = run_ordering_misspecification(&base, config)?;
            emit(ExperimentKind::PolicyPerturbation.as_str(), &pert.rows)?;
            emit(ExperimentKind::OrderingMisspecification.as_str(), &ord.rows)?;
            #[derive(Serialize)]
            struct Both {
                policy_perturbation: PerturbationSummary,
                ordering_misspecification: OrderingSummary,
            }
            let results = Both {
                policy_perturbation: pert.summary,
                ordering_misspecification: ord.summary,
            };
            write_json(
                &summary,
                &SummaryFile {
                    experiment: kind.as_str(),
                    config,
                    results,
                },
            )?;
        }
    }
    Ok(ExperimentOutput { csv, summary })
}
