//! Simulation and learning of fermionic Hubbard Hamiltonians with
//! Heisenberg-limited robust phase estimation.
//!
//! The crate is layered bottom-up: [`fock`] (Jordan-Wigner Fock space),
//! [`model`] (Hamiltonians), [`flo`] (linear-optics gates and probes),
//! [`dynamics`] (exact and reshaped evolution), [`oracle`] (brute-force
//! references), [`rpe`] (phase estimation), [`experiments`] (single
//! protocol experiments), [`learner`] (the full protocol) and [`cli`].

pub mod cli;
pub mod dynamics;
pub mod experiments;
pub mod error;
pub mod flo;
pub mod fock;
pub mod learner;
pub mod model;
pub mod oracle;
pub mod rpe;

pub use error::{Error, Result};
