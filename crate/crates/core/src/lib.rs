//! Lattice trajectory planning that takes the worst case over a deep-ensemble
//! prediction set.
//!
//! The pipeline:
//!
//! 1. [`scenario`] simulates an unprotected left turn with a long-tail mix of
//!    surrounding-agent behaviours and records training data.
//! 2. [`predictor`] trains `n` identically shaped feed-forward predictors from
//!    different seeds; their outputs form the prediction set.
//! 3. [`planner`] samples quintic candidates in the Frenet frame
//!    ([`frenet`], [`lattice`]) and picks the one whose worst cost over the
//!    set is smallest. With `n = 1` this is the ordinary lattice planner.
//! 4. [`metrics`] scores closed-loop safety, efficiency and prediction error;
//!    [`experiment`] drives collect / train / eval / report sweeps.
//!
//! The guide in `book/` walks through each stage; its code blocks are compiled
//! as doc-tests of this crate.

pub mod config;
pub mod experiment;
pub mod frenet;
pub mod geometry;
pub mod lattice;
pub mod metrics;
pub mod persist;
pub mod planner;
pub mod predictor;
pub mod scenario;

pub use frenet::{FrenetPoint, ReferencePath};
pub use geometry::Vec2;
pub use lattice::{CandidateTrajectory, CostWeights};
pub use planner::{Cost, PlanningResult};
pub use predictor::{EnsembleSet, PredictorModel};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/frenet.md")]
    mod frenet {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/minmax.md")]
    mod minmax {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
