// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end experiments on the toy world, shared by the `repro`
//! subcommand and the acceptance tests.

pub mod criteria;
pub mod steering;
pub mod world;

pub use criteria::{run_all, summary_csv, CriterionOutcome};
pub use world::{build_trained, build_world, Profile, Sizes, Trained, World};
