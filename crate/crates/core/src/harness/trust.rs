use rayon::prelude::*;
use serde::Serialize;

use super::{
    bin_index, select_alternatives, sort_rows, ExperimentConfig, Keyed, ResultRow, EFFECT_BINS,
    STAGE_EFFECT, STAGE_FAILURES,
};
use crate::effects::{estimate_cf_ase, estimate_cf_pse, EffectEstimate};
use crate::env::generate_failure_set;
use crate::env::sepsis::{
    build_sepsis_env, is_failure, success_outcome, train_policies, AI, CLINICIAN,
};
use crate::error::Result;
use crate::model::AgentSet;
use crate::rng::derive_seed_path;
use crate::scm::build_scm;
use crate::stats::{mean, spearman};

/// Direction names: `clinician` holds the clinician-specific effects of
/// alternative AI actions, `ai` the AI-specific effects of alternative
/// clinician actions.
const DIRECTIONS: [(&str, usize, usize); 2] = [("clinician", AI, CLINICIAN), ("ai", CLINICIAN, AI)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustLevel {
    pub mu: f64,
    pub failures: usize,
    pub count: usize,
    pub mean_tcfe: Option<f64>,
    pub mean_cf_ase: Option<f64>,
    pub mean_cf_pse: Option<f64>,
    /// cf-ASE counts in `[0, .25)`, `[.25, .75)`, `[.75, 1]`.
    pub cf_ase_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionSummary {
    pub direction: String,
    pub acting_agent: String,
    pub levels: Vec<TrustLevel>,
    /// Rank correlation of trust with the mean effect over levels that
    /// selected at least one alternative.
    pub spearman_cf_ase: Option<f64>,
    pub spearman_cf_pse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlindTrust {
    pub queries: usize,
    pub max_abs_cf_ase: f64,
    pub positive_cf_pse: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustSummary {
    /// States where the two trained policies disagree.
    pub policy_disagreements: usize,
    pub directions: Vec<DirectionSummary>,
    /// Clinician-specific effects at full trust, when the grid contains it.
    pub blind_trust: Option<BlindTrust>,
    pub audit_passed: bool,
}

struct Measured {
    level: usize,
    trajectory_id: usize,
    agent: usize,
    time: usize,
    action: u32,
    tcfe: EffectEstimate,
    cf_ase: EffectEstimate,
    cf_pse: EffectEstimate,
}

fn mu_label(mu: f64) -> String {
    format!("{mu}")
}

/// Sweeps the clinician's trust `mu` and measures the agent-specific
/// effects of the selected alternatives in both directions.
pub fn run_trust_sweep(config: &ExperimentConfig) -> Result<(Vec<ResultRow>, TrustSummary)> {
    let env = &config.sepsis;
    let transitions = env.transitions()?;
    let policies = train_policies(&transitions, env)?;
    let policy_disagreements = policies
        .ai
        .iter()
        .zip(&policies.clinician)
        .map(|(a, c)| a.iter().zip(c).filter(|(a, c)| a != c).count())
        .sum();
    let mut measured = Vec::new();
    let mut failures = Vec::new();
    let mut audit = true;
    for (level, &mu) in config.mu_grid.iter().enumerate() {
        let (spec, policy, orderings) = build_sepsis_env(env, &transitions, &policies, mu)?;
        let scm = build_scm(spec, policy, orderings)?;
        let fails = generate_failure_set(
            &scm,
            config.trajectories,
            derive_seed_path(config.seed, &[STAGE_FAILURES, level as u64]),
            is_failure,
        )?;
        let level_seed = derive_seed_path(config.seed, &[level as u64]);
        let selected = select_alternatives(
            &scm,
            &fails,
            success_outcome,
            config.threshold,
            config.samples,
            level_seed,
        )?;
        let rows: Vec<Measured> = selected
            .into_par_iter()
            .map(|s| {
                let other = if s.agent == AI { CLINICIAN } else { AI };
                let seed = derive_seed_path(
                    config.seed,
                    &[
                        STAGE_EFFECT,
                        level as u64,
                        s.trajectory_id as u64,
                        s.agent as u64,
                        s.time as u64,
                        s.action as u64,
                    ],
                );
                let q = s.query(
                    &fails[s.trajectory_id],
                    AgentSet::from_agents([other]),
                    config.samples,
                    seed,
                );
                let (cf_ase, cf_pse) =
                    rayon::join(|| estimate_cf_ase(&scm, &q), || estimate_cf_pse(&scm, &q));
                Ok(Measured {
                    level,
                    trajectory_id: s.trajectory_id,
                    agent: s.agent,
                    time: s.time,
                    action: s.action,
                    tcfe: s.tcfe,
                    cf_ase: cf_ase?,
                    cf_pse: cf_pse?,
                })
            })
            .collect::<Result<_>>()?;
        audit &= rows.iter().all(|m| {
            [&m.tcfe, &m.cf_ase, &m.cf_pse]
                .iter()
                .all(|e| (0.0..=1.0).contains(&e.value))
        });
        if let Some(s) = rows.first() {
            let tau = &fails[s.trajectory_id];
            let q = super::Selected {
                trajectory_id: s.trajectory_id,
                agent: s.agent,
                time: s.time,
                action: tau.action(s.agent, s.time),
                outcome: success_outcome(tau).expect("failure trajectories have a death step"),
                tcfe: s.tcfe.clone(),
            }
            .query(
                tau,
                AgentSet::from_agents([if s.agent == AI { CLINICIAN } else { AI }]),
                config.samples,
                0,
            );
            audit &=
                estimate_cf_ase(&scm, &q)?.value == 0.0 && estimate_cf_pse(&scm, &q)?.value == 0.0;
        }
        failures.push(fails.len());
        measured.extend(rows);
    }

    let mut keyed = Vec::new();
    for m in &measured {
        let (direction, rank) = if m.agent == AI {
            ("clinician", 0)
        } else {
            ("ai", 1)
        };
        for (method, e) in [
            ("tcfe", &m.tcfe),
            ("cf_ase", &m.cf_ase),
            ("cf_pse", &m.cf_pse),
        ] {
            keyed.push(Keyed {
                setting_rank: m.level,
                direction_rank: rank,
                row: ResultRow {
                    experiment: "trust_sweep".into(),
                    setting: mu_label(config.mu_grid[m.level]),
                    method: method.into(),
                    direction: direction.into(),
                    trajectory_id: m.trajectory_id,
                    agent: m.agent,
                    time: m.time,
                    action: m.action,
                    effect: e.value,
                    se: e.se,
                    samples: e.samples,
                    seed: e.seed,
                },
            });
        }
    }

    let directions = DIRECTIONS
        .iter()
        .map(|&(name, acting, _)| {
            let levels: Vec<TrustLevel> = config
                .mu_grid
                .iter()
                .enumerate()
                .map(|(level, &mu)| {
                    let here: Vec<&Measured> = measured
                        .iter()
                        .filter(|m| m.level == level && m.agent == acting)
                        .collect();
                    let avg = |f: fn(&Measured) -> f64| {
                        mean(&here.iter().map(|m| f(m)).collect::<Vec<_>>())
                    };
                    let mut cf_ase_bins = vec![0; EFFECT_BINS.len() + 1];
                    here.iter()
                        .for_each(|m| cf_ase_bins[bin_index(m.cf_ase.value, &EFFECT_BINS)] += 1);
                    TrustLevel {
                        mu,
                        failures: failures[level],
                        count: here.len(),
                        mean_tcfe: avg(|m| m.tcfe.value),
                        mean_cf_ase: avg(|m| m.cf_ase.value),
                        mean_cf_pse: avg(|m| m.cf_pse.value),
                        cf_ase_bins,
                    }
                })
                .collect();
            let rho = |f: fn(&TrustLevel) -> Option<f64>| {
                let (x, y): (Vec<f64>, Vec<f64>) = levels
                    .iter()
                    .filter_map(|l| f(l).map(|v| (l.mu, v)))
                    .unzip();
                spearman(&x, &y)
            };
            DirectionSummary {
                direction: name.into(),
                acting_agent: if acting == AI {
                    "ai".into()
                } else {
                    "clinician".into()
                },
                spearman_cf_ase: rho(|l| l.mean_cf_ase),
                spearman_cf_pse: rho(|l| l.mean_cf_pse),
                levels,
            }
        })
        .collect();

    let blind_trust = config
        .mu_grid
        .iter()
        .position(|&mu| mu == 1.0)
        .map(|level| {
            let here: Vec<&Measured> = measured
                .iter()
                .filter(|m| m.level == level && m.agent == AI)
                .collect();
            BlindTrust {
                queries: here.len(),
                max_abs_cf_ase: here
                    .iter()
                    .map(|m| m.cf_ase.value.abs())
                    .fold(0.0, f64::max),
                positive_cf_pse: here.iter().filter(|m| m.cf_pse.value > 0.0).count(),
            }
        });

    let summary = TrustSummary {
        policy_disagreements,
        directions,
        blind_trust,
        audit_passed: audit,
    };
    Ok((sort_rows(keyed), summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentKind;

    #[test]
    fn blind_trust_clinician_effect_vanishes() {
        let mut c = ExperimentConfig::desk(ExperimentKind::TrustSweep);
        c.mu_grid = vec![1.0];
        c.trajectories = 3;
        c.samples = 30;
        c.sepsis.horizon = 30;
        let (rows, summary) = run_trust_sweep(&c).unwrap();
        assert!(summary.audit_passed);
        let b = summary.blind_trust.unwrap();
        assert_eq!(b.max_abs_cf_ase, 0.0);
        assert_eq!(
            rows.len(),
            3 * summary
                .directions
                .iter()
                .map(|d| d.levels[0].count)
                .sum::<usize>()
        );
    }
}
