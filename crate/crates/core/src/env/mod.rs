//! Benchmark environments and failure-trajectory generation.

pub mod graph;
pub mod sepsis;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::Trajectory;
use crate::rng::{chunk_rng, CHUNK};
use crate::scm::MmdpScm;

/// Below this failure rate generation gives up.
pub const MIN_FAILURE_RATE: f64 = 1e-4;
const MIN_ATTEMPTS_BEFORE_ABORT: u64 = 100_000;
const BATCH_CHUNKS: u64 = 64;

/// Rejection-samples trajectories until `count` satisfy `is_failure`.
///
/// Chunk `k` of `CHUNK` draws uses stream `k` of `seed`; failures are kept in
/// draw order, so the result does not depend on the thread count.
pub fn generate_failure_set<F>(
    scm: &MmdpScm,
    count: usize,
    seed: u64,
    is_failure: F,
) -> Result<Vec<Trajectory>>
where
    F: Fn(&Trajectory) -> bool + Sync,
{
    if count == 0 {
        return Err(invalid("failure count must be at least 1"));
    }
    let mut found: Vec<Trajectory> = Vec::with_capacity(count);
    let mut next_chunk = 0u64;
    let mut attempts = 0u64;
    while found.len() < count {
        let batch: Vec<Vec<Trajectory>> = (next_chunk..next_chunk + BATCH_CHUNKS)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = chunk_rng(seed, chunk);
                let mut out = Vec::new();
                for _ in 0..CHUNK {
                    let (tau, _) = scm.sample_trajectory(&mut rng)?;
                    if is_failure(&tau) {
                        out.push(tau);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        next_chunk += BATCH_CHUNKS;
        attempts += BATCH_CHUNKS * CHUNK as u64;
        found.extend(batch.into_iter().flatten());
        if found.len() < count
            && attempts >= MIN_ATTEMPTS_BEFORE_ABORT
            && (found.len() as f64) < MIN_FAILURE_RATE * attempts as f64
        {
            return Err(Error::FailureRateTooLow {
                found: found.len(),
                attempts: attempts as usize,
            });
        }
    }
    found.truncate(count);
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::build_scm;

    #[test]
    fn graph_failures_are_unbalanced() {
        let cfg = graph::GraphEnvConfig::default();
        let (spec, pol, ord) = graph::build_graph_env(&cfg).unwrap();
        let scm = build_scm(spec, pol, ord).unwrap();
        let set = generate_failure_set(&scm, 50, 1, |t| graph::is_failure(6, t)).unwrap();
        assert_eq!(set.len(), 50);
        for tau in &set {
            assert!(graph::terminal_occupancy(tau).iter().any(|&k| k != 2));
            scm.posterior(tau).unwrap();
        }
        assert_eq!(
            set,
            generate_failure_set(&scm, 50, 1, |t| graph::is_failure(6, t)).unwrap()
        );
    }

    #[test]
    fn impossible_failure_aborts() {
        let cfg = graph::GraphEnvConfig::default();
        let (spec, pol, ord) = graph::build_graph_env(&cfg).unwrap();
        let scm = build_scm(spec, pol, ord).unwrap();
        assert!(matches!(
            generate_failure_set(&scm, 1, 1, |_| false),
            Err(Error::FailureRateTooLow { .. })
        ));
    }
}
