//! Damping-actuator siting under wind uncertainty.
//!
//! The pipeline: solve the power flow at a wind injection ([`powerflow`]),
//! linearize the classical multi-machine dynamics with an optional
//! frequency-feedback actuator ([`system`]), decompose the state matrix
//! ([`modal`]), and evaluate the oscillation-energy total action and its
//! first-order sensitivity to wind power ([`action`]). [`siting`] turns
//! those estimates into a chance-constrained choice of actuator bus over
//! Weibull wind samples ([`wind`]); [`oracle`] re-derives every
//! closed-form quantity by brute force.

pub mod action;
pub mod case;
pub mod error;
pub mod io;
pub mod modal;
pub mod network;
pub mod oracle;
pub mod powerflow;
pub mod siting;
pub mod stats;
pub mod system;
pub mod verify;
pub mod wind;

pub use action::ActionEstimate;
pub use case::{BusId, NetworkCase};
pub use error::{Error, Result};
pub use modal::ModalDecomposition;
pub use powerflow::EquilibriumState;
pub use siting::{Disturbance, DisturbanceSet, SitingResult};
pub use system::SystemModel;
pub use wind::WindModel;
