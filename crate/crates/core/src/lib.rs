//! Structural causal models of multi-agent MDPs, counterfactual
//! agent-specific effects and the experiment pipelines built on them.

pub mod effects;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod schema;
pub mod scm;
pub mod solver;
pub mod stats;

pub use effects::{EffectEstimate, EffectQuery, Outcome};
pub use error::{Error, Result};
pub use model::{
    ActionId, AgentPolicy, AgentSet, AgentSpec, JointPolicy, MmdpSpec, Ordering, StateId,
    TotalOrdering, Trajectory, TransitionTable, VarId, VarLayout, Variable,
};
pub use scm::{
    build_scm, EdgeSet, InterventionSet, MmdpScm, NoiseVector, Posterior, RowRef, Splice, StepRow,
};
