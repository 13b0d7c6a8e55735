//! Egocentric hand-object motion toolkit.
//!
//! The crate is organized around a single pipeline: synthesize episodic
//! hand-object data ([`dataset`]), render metric depth for it ([`renderer`]),
//! train a conditional flow-matching motion generator ([`fmpolicy`]) on top of
//! a deterministic context encoder ([`context`]), decode overlapping motion
//! chunks into smooth trajectories ([`tof`]), recover hand parameters from
//! bare joint positions ([`retarget`]), and score everything ([`metrics`]).
//! [`rotmath`] and [`handmodel`] supply the rotation algebra and the
//! parametric hand common to all of the above.

pub mod context;
pub mod dataset;
pub mod fmpolicy;
pub mod handmodel;
pub mod metrics;
pub mod renderer;
pub mod retarget;
pub mod rotmath;
pub mod tof;

// re-exports land as modules are built

