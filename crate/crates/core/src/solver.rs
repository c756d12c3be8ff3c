//! Tabular single-agent MDP solvers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A finite MDP with expected rewards `R(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpView {
    pub num_states: usize,
    pub num_actions: usize,
    /// Sparse `T(.|s,a)` at index `s * num_actions + a`.
    pub transitions: Vec<Vec<(u32, f64)>>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

impl MdpView {
    /// Rewards emitted on entering a state; `absorbing` states self-loop
    /// with reward 0.
    pub fn from_entry_rewards(
        num_actions: usize,
        transitions: Vec<Vec<(u32, f64)>>,
        entry_reward: &[f64],
        absorbing: &[bool],
        gamma: f64,
    ) -> Self {
        let num_states = entry_reward.len();
        let mut transitions = transitions;
        let mut rewards = vec![0.0; num_states * num_actions];
        for s in 0..num_states {
            for a in 0..num_actions {
                let k = s * num_actions + a;
                if absorbing[s] {
                    transitions[k] = vec![(s as u32, 1.0)];
                } else {
                    rewards[k] = transitions[k]
                        .iter()
                        .map(|&(n, p)| p * entry_reward[n as usize])
                        .sum();
                }
            }
        }
        Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid(format!(
                "discount {} is outside (0, 1)",
                self.gamma
            )));
        }
        let n = self.num_states * self.num_actions;
        if self.transitions.len() != n || self.rewards.len() != n {
            return Err(invalid(
                "transition and reward tables must have one entry per (state, action)",
            ));
        }
        for (k, row) in self.transitions.iter().enumerate() {
            let label = format!(
                "T(.|s={}, a={})",
                k / self.num_actions,
                k % self.num_actions
            );
            crate::model::check_probabilities(
                &label,
                &row.iter().map(|e| e.1).collect::<Vec<_>>(),
            )?;
            if row.iter().any(|&(s, _)| s as usize >= self.num_states) {
                return Err(invalid(format!("{label} points outside the state space")));
            }
        }
        Ok(())
    }

    fn q(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let k = s * self.num_actions + a;
        self.rewards[k]
            + self.gamma
                * self.transitions[k]
                    .iter()
                    .map(|&(n, p)| p * v[n as usize])
                    .sum::<f64>()
    }

    /// Greedy action with ties broken towards the lowest index.
    fn greedy(&self, s: usize, v: &[f64]) -> (u32, f64) {
        let mut best = (0, self.q(s, 0, v));
        for a in 1..self.num_actions {
            let q = self.q(s, a, v);
            if q > best.1 + 1e-12 {
                best = (a as u32, q);
            }
        }
        best
    }

    fn evaluate(
        &self,
        policy: &[u32],
        start: &[f64],
        tol: f64,
        max_iters: usize,
    ) -> Result<Vec<f64>> {
        let mut v = start.to_vec();
        let threshold = tol * (1.0 - self.gamma) / self.gamma;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iters {
            residual = 0.0;
            for s in 0..self.num_states {
                let nv = self.q(s, policy[s] as usize, &v);
                residual = f64::max(residual, (nv - v[s]).abs());
                v[s] = nv;
            }
            if residual <= threshold {
                return Ok(v);
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iters,
            residual,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub policy: Vec<u32>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Discounted policy iteration starting from the all-zero policy.
pub fn policy_iteration(mdp: &MdpView, tol: f64, max_iters: usize) -> Result<Solution> {
    mdp.validate()?;
    let mut policy = vec![0u32; mdp.num_states];
    let mut values = vec![0.0; mdp.num_states];
    for it in 1..=max_iters {
        values = mdp.evaluate(&policy, &values, tol, max_iters)?;
        let mut stable = true;
        for s in 0..mdp.num_states {
            let current = mdp.q(s, policy[s] as usize, &values);
            let (a, q) = mdp.greedy(s, &values);
            if a != policy[s] && q > current + 1e-12 {
                policy[s] = a;
                stable = false;
            }
        }
        if stable {
            return Ok(Solution {
                policy,
                values,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// Value iteration to sup-norm change `tol`, with the greedy policy.
pub fn value_iteration(mdp: &MdpView, tol: f64, max_iters: usize) -> Result<Solution> {
    mdp.validate()?;
    let mut v = vec![0.0; mdp.num_states];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next: Vec<f64> = (0..mdp.num_states).map(|s| mdp.greedy(s, &v).1).collect();
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= tol {
            let policy = (0..mdp.num_states).map(|s| mdp.greedy(s, &v).0).collect();
            return Ok(Solution {
                policy,
                values: v,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Backward induction over `horizon` steps; `policies[t]` acts at step `t`.
/// Discounting is not applied.
pub fn finite_horizon(mdp: &MdpView, horizon: usize) -> Result<(Vec<Vec<u32>>, Vec<f64>)> {
    let undiscounted = MdpView {
        gamma: 1.0,
        ..mdp.clone()
    };
    let mut v = vec![0.0; mdp.num_states];
    let mut policies = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let (pol, next): (Vec<u32>, Vec<f64>) = (0..mdp.num_states)
            .map(|s| undiscounted.greedy(s, &v))
            .unzip();
        policies[t] = pol;
        v = next;
    }
    Ok((policies, v))
}
