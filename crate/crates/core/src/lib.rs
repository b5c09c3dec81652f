//! Consensus-based distributed computation under eavesdropping.
//!
//! Modules cover the network layer ([`netcore`]), linear-equation data ([`lae`]),
//! the distributed recursions ([`protocols`]), privacy-preserving summation
//! ([`ppsc`]), the eavesdropper attacks ([`attacks`]) and differential-privacy
//! budgets ([`dpbudget`]).

pub mod attacks;
pub mod dpbudget;
pub mod error;
pub mod lae;
pub mod linalg;
pub mod netcore;
pub mod ppsc;
pub mod presets;
pub mod protocols;
pub mod rng;

pub use error::{Error, Result};
pub use lae::{CanonicalEquation, ConvexSet, LinearEquation};
pub use netcore::{Graph, NetworkSpec, SpectralStats, WeightMatrix};
pub use ppsc::{PpscMechanism, SummationMechanism};
pub use protocols::{ClosedLoopSystem, DpParams, QuadraticObjectiveSet, Trajectory};
