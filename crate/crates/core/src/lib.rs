//! Simulation, reweighting and dynamic-programming tools for comparing
//! open-loop and closed-loop values of stochastic control problems, built
//! around a Tsirelson-type drift for which the two values differ.

pub mod error;
pub mod girsanov;
pub mod hjb;
pub mod mc;
pub mod paths;
pub mod sde;
pub mod tsirelson;

pub use error::{Error, Result};
pub use girsanov::{GirsanovWeight, LambdaSpec, ReweightedEstimate};
pub use hjb::{Boundary, HjbGrid, HjbSolution, StateProblem};
pub use mc::{Envelope, Flags, KsResult, PolicyFamily, ValueEstimate};
pub use paths::{PathView, RngStream, SamplePath, TimeGrid};
pub use sde::{ActionSet, AugmentedView, ControlProblem, Policy, PolicyKind, SimulatedSolution};
pub use tsirelson::{Agreement, EkTolerance, Extension, RelaxedPayoffConfig, TsirelsonDrift};
