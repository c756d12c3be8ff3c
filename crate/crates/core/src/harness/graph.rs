use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    bin_index, select_alternatives, sort_rows, ExperimentConfig, Keyed, ResultRow, Selected,
    STAGE_EFFECT, STAGE_FAILURES, STAGE_PERTURB, STAGE_TARGET, TARGET_BINS,
};
use crate::effects::{estimate_cf_ase_multi, EffectEstimate};
use crate::env::generate_failure_set;
use crate::env::graph::{
    build_graph_env, graph_policy, is_failure, success_outcome, GraphEnvConfig, HORIZON,
};
use crate::error::{invalid, Error, Result};
use crate::model::{AgentSet, JointPolicy, MmdpSpec, Ordering, TotalOrdering, Trajectory};
use crate::rng::{chunk_rng, derive_seed_path};
use crate::scm::{build_scm, MmdpScm};
use crate::stats::{mean, NeumaierSum};

const ACTION_NAMES: [&str; 3] = ["up", "down", "straight"];

/// Parses an ordering such as `["straight", "down", "up"]`.
pub(crate) fn parse_ordering(names: &[String]) -> Result<Ordering> {
    let ord = Ordering(
        names
            .iter()
            .map(|n| {
                ACTION_NAMES
                    .iter()
                    .position(|a| a == n)
                    .map(|i| i as u32)
                    .ok_or_else(|| invalid(format!("unknown graph action `{n}`")))
            })
            .collect::<Result<_>>()?,
    );
    ord.validate(3, "graph actions")?;
    Ok(ord)
}

fn ordering_label(ord: &Ordering) -> String {
    ord.0
        .iter()
        .map(|&a| ACTION_NAMES[a as usize])
        .collect::<Vec<_>>()
        .join("<")
}

fn direction_label(spec: &MmdpSpec, set: AgentSet) -> String {
    set.iter()
        .map(|i| spec.agents[i].name.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

/// The shared part of both robustness studies: failures of the true model,
/// selected alternatives, target values and correct-model estimates.
pub struct GraphBaseline {
    pub env: GraphEnvConfig,
    pub spec: MmdpSpec,
    pub policy: JointPolicy,
    pub orderings: TotalOrdering,
    pub scm: MmdpScm,
    pub failures: Vec<Trajectory>,
    pub candidates: usize,
    pub selected: Vec<Selected>,
    /// Effect-agent sets of each selected query.
    pub subsets: Vec<Vec<AgentSet>>,
    pub targets: Vec<Vec<EffectEstimate>>,
    /// Estimates under the true model with the estimation seeds.
    pub correct: Vec<Vec<EffectEstimate>>,
    pub seed: u64,
    pub samples: usize,
}

impl GraphBaseline {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let env = config.graph.clone();
        let (spec, policy, orderings) = build_graph_env(&env)?;
        let scm = build_scm(spec.clone(), policy.clone(), orderings.clone())?;
        let n = env.num_agents;
        let failures = generate_failure_set(
            &scm,
            config.trajectories,
            derive_seed_path(config.seed, &[STAGE_FAILURES]),
            |t| is_failure(n, t),
        )?;
        let candidates =
            failures.len() * HORIZON * (0..n).map(|i| spec.num_actions(i) - 1).sum::<usize>();
        let selected = select_alternatives(
            &scm,
            &failures,
            |_| Some(success_outcome(n)),
            config.threshold,
            config.samples,
            config.seed,
        )?;
        let subsets: Vec<Vec<AgentSet>> = selected
            .iter()
            .map(|s| {
                let mut pool = AgentSet::all(n);
                if !config.include_acting_agent {
                    pool.0 &= !(1 << s.agent);
                }
                AgentSet::nonempty_subsets(pool)
            })
            .collect();
        let mut base = Self {
            env,
            spec,
            policy,
            orderings,
            scm,
            failures,
            candidates,
            selected,
            subsets,
            targets: Vec::new(),
            correct: Vec::new(),
            seed: config.seed,
            samples: config.samples,
        };
        base.targets = (0..base.selected.len())
            .into_par_iter()
            .map(|k| base.estimate(&base.scm, k, config.target_samples, STAGE_TARGET))
            .collect::<Result<_>>()?;
        base.correct = (0..base.selected.len())
            .into_par_iter()
            .map(|k| base.estimate(&base.scm, k, config.samples, STAGE_EFFECT))
            .collect::<Result<_>>()?;
        Ok(base)
    }

    fn query_seed(&self, k: usize, stage: u64) -> u64 {
        let s = &self.selected[k];
        derive_seed_path(
            self.seed,
            &[
                stage,
                s.trajectory_id as u64,
                s.agent as u64,
                s.time as u64,
                s.action as u64,
            ],
        )
    }

    /// cf-ASE of selected query `k` for all of its effect-agent sets.
    fn estimate(
        &self,
        scm: &MmdpScm,
        k: usize,
        samples: usize,
        stage: u64,
    ) -> Result<Vec<EffectEstimate>> {
        let s = &self.selected[k];
        let q = s.query(
            &self.failures[s.trajectory_id],
            AgentSet::empty(),
            samples,
            self.query_seed(k, stage),
        );
        estimate_cf_ase_multi(scm, &q, &self.subsets[k])
    }

    /// Mean over all (query, set) pairs of the combined standard error of
    /// the correct-model estimate and its target.
    pub fn noise_floor(&self) -> f64 {
        let se: Vec<f64> = self
            .targets
            .iter()
            .zip(&self.correct)
            .flat_map(|(t, c)| {
                t.iter()
                    .zip(c)
                    .map(|(a, b)| (a.se * a.se + b.se * b.se).sqrt())
            })
            .collect();
        mean(&se).unwrap_or(0.0)
    }

    pub fn num_pairs(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    fn target_rows(&self, experiment: &str, samples: usize) -> Vec<Keyed> {
        let mut rows = Vec::new();
        for (k, ests) in self.targets.iter().enumerate() {
            self.push_rows(&mut rows, experiment, "target", 0, k, ests, samples);
        }
        rows
    }

    #[allow(clippy::too_many_arguments)]
    fn push_rows(
        &self,
        rows: &mut Vec<Keyed>,
        experiment: &str,
        setting: &str,
        rank: usize,
        k: usize,
        ests: &[EffectEstimate],
        samples: usize,
    ) {
        let s = &self.selected[k];
        for (d, (set, e)) in self.subsets[k].iter().zip(ests).enumerate() {
            rows.push(Keyed {
                setting_rank: rank,
                direction_rank: d,
                row: ResultRow {
                    experiment: experiment.into(),
                    setting: setting.into(),
                    method: "cf_ase".into(),
                    direction: direction_label(&self.spec, *set),
                    trajectory_id: s.trajectory_id,
                    agent: s.agent,
                    time: s.time,
                    action: s.action,
                    effect: e.value,
                    se: e.se,
                    samples,
                    seed: e.seed,
                },
            });
        }
    }

    /// Absolute errors against the targets, grouped by target bin.
    fn errors(&self, estimates: &[Option<Vec<EffectEstimate>>]) -> ErrorStats {
        let mut all = NeumaierSum::new();
        let mut count = 0usize;
        let mut bins = vec![(NeumaierSum::new(), 0usize); TARGET_BINS.len() + 1];
        for (k, est) in estimates.iter().enumerate() {
            let Some(est) = est else { continue };
            for (t, e) in self.targets[k].iter().zip(est) {
                let err = (e.value - t.value).abs();
                all.add(err);
                count += 1;
                let b = &mut bins[bin_index(t.value, &TARGET_BINS)];
                b.0.add(err);
                b.1 += 1;
            }
        }
        let avg = |s: NeumaierSum, n: usize| (n > 0).then(|| s.value() / n as f64);
        ErrorStats {
            mean_abs_error: avg(all, count),
            pairs: count,
            skipped_queries: estimates.iter().filter(|e| e.is_none()).count(),
            by_target: bins
                .into_iter()
                .map(|(s, n)| BinStats {
                    count: n,
                    mean_abs_error: avg(s, n),
                })
                .collect(),
        }
    }

    /// Factual alternatives give exactly zero and every estimate is a
    /// probability.
    fn audit(&self, scm: &MmdpScm, estimates: &[Option<Vec<EffectEstimate>>]) -> Result<bool> {
        let in_bounds = estimates
            .iter()
            .flatten()
            .flatten()
            .all(|e| (0.0..=1.0).contains(&e.value));
        let mut zero = true;
        for k in 0..self.selected.len().min(3) {
            let s = &self.selected[k];
            let tau = &self.failures[s.trajectory_id];
            let mut q = s.query(
                tau,
                AgentSet::empty(),
                self.samples,
                self.query_seed(k, STAGE_EFFECT),
            );
            q.action = tau.action(s.agent, s.time);
            match estimate_cf_ase_multi(scm, &q, &self.subsets[k]) {
                Ok(v) => zero &= v.iter().all(|e| e.value == 0.0),
                Err(Error::ZeroProbabilityEvidence { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(in_bounds && zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    pub count: usize,
    pub mean_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean_abs_error: Option<f64>,
    pub pairs: usize,
    /// Queries whose evidence is impossible under the estimation model.
    pub skipped_queries: usize,
    /// Groups `[0, .25)`, `[.25, .5)`, `[.5, .75)`, `[.75, 1]` of the target.
    pub by_target: Vec<BinStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineStats {
    pub failures: usize,
    pub candidates: usize,
    pub selected: usize,
    pub pairs: usize,
    pub target_samples: usize,
    pub noise_floor: f64,
    /// Target counts per target group.
    pub target_bins: Vec<usize>,
}

impl BaselineStats {
    fn of(base: &GraphBaseline, target_samples: usize) -> Self {
        let mut target_bins = vec![0; TARGET_BINS.len() + 1];
        base.targets
            .iter()
            .flatten()
            .for_each(|t| target_bins[bin_index(t.value, &TARGET_BINS)] += 1);
        Self {
            failures: base.failures.len(),
            candidates: base.candidates,
            selected: base.selected.len(),
            pairs: base.num_pairs(),
            target_samples,
            noise_floor: base.noise_floor(),
            target_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationLevel {
    pub eps_max: f64,
    #[serde(flatten)]
    pub errors: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationSummary {
    pub baseline: BaselineStats,
    pub levels: Vec<PerturbationLevel>,
    pub audit_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingResult {
    pub ordering: String,
    pub correct: bool,
    pub reversed: bool,
    #[serde(flatten)]
    pub errors: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingSummary {
    pub baseline: BaselineStats,
    pub orderings: Vec<OrderingResult>,
    pub audit_passed: bool,
}

/// Rows and summary of one robustness study.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRun<S> {
    pub rows: Vec<ResultRow>,
    pub summary: S,
}

/// Randomness values with each `p_i` moved by `eps * z_i` and clipped.
fn perturbed(p: &[f64], z: &[f64], eps: f64) -> Vec<f64> {
    p.iter()
        .zip(z)
        .map(|(p, z)| (p + eps * z).clamp(0.0, 1.0))
        .collect()
}

fn estimate_or_skip(
    base: &GraphBaseline,
    scm: &MmdpScm,
    k: usize,
) -> Result<Option<Vec<EffectEstimate>>> {
    match base.estimate(scm, k, base.samples, STAGE_EFFECT) {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroProbabilityEvidence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Re-estimates every selected query on models whose randomness values are
/// drawn from `[p_i - eps, p_i + eps]`, one draw per failure trajectory with
/// the same direction for every `eps`.
pub fn run_policy_perturbation(
    base: &GraphBaseline,
    config: &ExperimentConfig,
) -> Result<RobustnessRun<PerturbationSummary>> {
    let name = "policy_perturbation";
    let n = base.env.num_agents;
    let directions: Vec<Vec<f64>> = (0..base.failures.len())
        .map(|id| {
            let mut rng = chunk_rng(
                derive_seed_path(config.seed, &[STAGE_PERTURB, id as u64]),
                0,
            );
            (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
        })
        .collect();
    let mut by_traj: Vec<Vec<usize>> = vec![Vec::new(); base.failures.len()];
    for (k, s) in base.selected.iter().enumerate() {
        by_traj[s.trajectory_id].push(k);
    }
    let mut rows = base.target_rows(name, config.target_samples);
    let mut levels = Vec::new();
    let mut audit = true;
    for (rank, &eps) in config.eps_grid.iter().enumerate() {
        let per_traj: Vec<Vec<(usize, Option<Vec<EffectEstimate>>)>> = by_traj
            .par_iter()
            .enumerate()
            .filter(|(_, ks)| !ks.is_empty())
            .map(|(id, ks)| {
                let owned;
                let scm = if eps == 0.0 {
                    &base.scm
                } else {
                    let p = perturbed(&base.env.randomness, &directions[id], eps);
                    owned = build_scm(
                        base.spec.clone(),
                        graph_policy(n, &p),
                        base.orderings.clone(),
                    )?;
                    &owned
                };
                ks.iter()
                    .map(|&k| Ok((k, estimate_or_skip(base, scm, k)?)))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut estimates: Vec<Option<Vec<EffectEstimate>>> = vec![None; base.selected.len()];
        for (k, e) in per_traj.into_iter().flatten() {
            estimates[k] = e;
        }
        audit &= base.audit(&base.scm, &estimates)?;
        let setting = eps.to_string();
        for (k, e) in estimates.iter().enumerate() {
            if let Some(e) = e {
                base.push_rows(&mut rows, name, &setting, rank + 1, k, e, config.samples);
            }
        }
        levels.push(PerturbationLevel {
            eps_max: eps,
            errors: base.errors(&estimates),
        });
    }
    let summary = PerturbationSummary {
        baseline: BaselineStats::of(base, config.target_samples),
        levels,
        audit_passed: audit,
    };
    Ok(RobustnessRun {
        rows: sort_rows(rows),
        summary,
    })
}

/// Re-estimates every selected query with the action orderings listed in
/// the config; the true model stays noise-monotonic in `up < down < straight`.
pub fn run_ordering_misspecification(
    base: &GraphBaseline,
    config: &ExperimentConfig,
) -> Result<RobustnessRun<OrderingSummary>> {
    let name = "ordering_misspecification";
    let n = base.env.num_agents;
    let correct = base.orderings.actions[0].clone();
    let reversed = Ordering(correct.0.iter().rev().copied().collect());
    let mut rows = base.target_rows(name, config.target_samples);
    let mut results = Vec::new();
    let mut audit = true;
    for (rank, names) in config.orderings.iter().enumerate() {
        let ord = parse_ordering(names)?;
        let orderings = TotalOrdering {
            states: base.orderings.states.clone(),
            actions: vec![ord.clone(); n],
        };
        let scm = build_scm(base.spec.clone(), base.policy.clone(), orderings)?;
        let estimates: Vec<Option<Vec<EffectEstimate>>> = (0..base.selected.len())
            .into_par_iter()
            .map(|k| estimate_or_skip(base, &scm, k))
            .collect::<Result<_>>()?;
        audit &= base.audit(&scm, &estimates)?;
        let label = ordering_label(&ord);
        for (k, e) in estimates.iter().enumerate() {
            if let Some(e) = e {
                base.push_rows(&mut rows, name, &label, rank + 1, k, e, config.samples);
            }
        }
        results.push(OrderingResult {
            ordering: label,
            correct: ord == correct,
            reversed: ord == reversed,
            errors: base.errors(&estimates),
        });
    }
    let summary = OrderingSummary {
        baseline: BaselineStats::of(base, config.target_samples),
        orderings: results,
        audit_passed: audit,
    };
    Ok(RobustnessRun {
        rows: sort_rows(rows),
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::desk(ExperimentKind::GraphRobustness);
        c.trajectories = 4;
        c.target_samples = 200;
        c.samples = 50;
        c.eps_grid = vec![0.0, 0.2];
        c
    }

    #[test]
    fn zero_perturbation_reproduces_correct_estimates() {
        let c = small();
        let base = GraphBaseline::prepare(&c).unwrap();
        assert!(!base.selected.is_empty());
        let run = run_policy_perturbation(&base, &c).unwrap();
        assert!(run.summary.audit_passed);
        let zero: Vec<&ResultRow> = run.rows.iter().filter(|r| r.setting == "0").collect();
        let flat: Vec<f64> = base.correct.iter().flatten().map(|e| e.value).collect();
        assert_eq!(zero.len(), flat.len());
        let ord = run_ordering_misspecification(&base, &c).unwrap();
        let correct = ord.summary.orderings.iter().find(|o| o.correct).unwrap();
        assert_eq!(
            correct.errors.mean_abs_error,
            run.summary.levels[0].errors.mean_abs_error
        );
        assert_eq!(
            ord.summary.orderings.iter().filter(|o| o.reversed).count(),
            1
        );
    }

    #[test]
    fn subsets_exclude_the_acting_agent() {
        let c = small();
        let base = GraphBaseline::prepare(&c).unwrap();
        for (s, sets) in base.selected.iter().zip(&base.subsets) {
            assert_eq!(sets.len(), 31);
            assert!(sets.iter().all(|set| !set.contains(s.agent)));
        }
    }

    #[test]
    fn ordering_names_parse() {
        let o = parse_ordering(&["straight".into(), "down".into(), "up".into()]).unwrap();
        assert_eq!(ordering_label(&o), "straight<down<up");
        assert!(parse_ordering(&["up".into(), "up".into(), "down".into()]).is_err());
    }
}
