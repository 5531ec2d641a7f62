//! Simulation core for electropolymerized conducting-polymer dendrite
//! networks operated as multiterminal electrochemical transistors in a shared
//! electrolyte.
//!
//! The crate is `no_std` (it only needs `alloc`). Everything here is a pure
//! function of its inputs: growth is seeded, solvers are deterministic and no
//! module keeps global state. File formats, configuration and the command
//! line live in the `dendrite` companion crate.
//!
//! Module map:
//!
//! - [`topology`]: electrode layouts, dendrite segments, stochastic growth.
//! - [`cell`]: several topologies assembled around one shared electrolyte.
//! - [`device`]: lumped doping/trap model of a single segment.
//! - [`solver`]: nodal analysis, electrolyte potential, DC fixed point and
//!   transient integration.
//! - [`protocols`]: sweeps, rectification, inter-gating, MAC, WRITE/READ/REST
//!   sequences and fatigue stress.
//! - [`analysis`]: signatures, distances, classification and uniqueness.
//! - [`presets`]: the calibrated demo cells used by the experiments.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod cell;
pub mod device;
mod error;
pub mod geometry;
mod linalg;
pub mod presets;
pub mod protocols;
pub mod rng;
pub mod solver;
pub mod topology;

pub use cell::{assemble_cell, CouplingGeometry, SegmentRef, SimulationCell};
pub use device::{DeviceParams, ElectrochemicalState};
pub use error::{Error, Result};
pub use geometry::Point;
pub use solver::{BoundaryCondition, Terminal};
pub use topology::{DendriteSegment, ElectrodeRole, ElectrodeSpec, GrowthParams, NetworkTopology, NodeId, SegmentId};
