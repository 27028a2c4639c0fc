//! Monte Carlo measurement-uncertainty evaluation with virtual experiments.
//!
//! Two propagation engines are provided for models that are affine in the
//! measurand, `x = Δ₁(z)·y + Δ₂(z) + ε`:
//!
//! * [`engines::run_jcgm101`] samples the inverted measurement model directly;
//! * [`engines::run_mc_ve`] only runs the forward virtual experiment at an
//!   arbitrary measurand value and corrects each draw.
//!
//! Both yield samples from the same distribution. [`scenarios`] ships the two
//! reference problems, [`stats`] summarises and compares sample sets, and
//! [`cli`] is the `mcve` command-line front end.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod engines;
pub mod expr;
pub mod model;
pub mod randkit;
pub mod scenarios;
pub mod stats;

pub use engines::{EngineConfig, EngineError, EngineKind, SampleSet};
pub use model::{AffineParts, MeasurementData, TypeBSpec, VirtualExperiment, ZPoint};
pub use randkit::{Distribution, RandomStream};
pub use scenarios::Scenario;
pub use stats::{EquivalenceReport, SummaryReport};
