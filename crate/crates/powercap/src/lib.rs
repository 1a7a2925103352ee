//! Lithium-ion battery power-capability prediction for eVTOL missions.
//!
//! The crate predicts the maximum discharge current (and hence power) a cell
//! can sustain over a prediction horizon followed by a mandatory
//! emergency-landing segment, without breaching voltage and temperature
//! limits. It bundles:
//!
//! - [`model`]: a double-capacitor electrical circuit + two-node thermal
//!   network with neural output heads and exact constant-input propagation;
//! - [`mlp`]: the small feedforward-network stack (training, inference,
//!   serialization) behind those heads;
//! - [`datagen`]: a synthetic nonlinear reference cell standing in for lab
//!   experiments, plus dataset builders and parameter fitting;
//! - [`rdt`]: remaining-discharge-time prediction (neural head for the
//!   voltage limit, exact bisection for the temperature limit);
//! - [`search`]: the discharge-current limit solvers (full-simulation
//!   bisection and the RDT-guided variant);
//! - [`mission`]: mission replay, ablations and the benchmark harness.

pub mod datagen;
pub mod error;
pub mod mission;
pub mod mlp;
pub mod model;
pub mod rdt;
pub mod search;

pub use error::{Error, Result};
