//! Simulator and numerical laboratory for the frog model with drift on Z^d.
//!
//! Sleeping frogs sit i.i.d. on the sites of `Z^d \ {0}`; one active frog
//! starts at the origin. Active frogs perform independent nearest-neighbour
//! walks with mean step `a e_1` and wake every frog on the sites they visit.
//! The crate covers the walks and their hitting probabilities, the
//! extreme-value tools that separate heavy from light site laws, the
//! activation-closure simulator, and the renormalization boxes and bounds
//! used to certify recurrence.

pub mod cascade;
pub mod engine;
pub mod error;
pub mod extremes;
pub mod hitting;
pub mod lattice;
pub mod rng;
pub mod site;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use lattice::{BoxWindow, Direction, Point};
pub use site::{SiteDistribution, SiteField};
pub use walk::{make_drift_kernel, TransitionKernel, Trajectory};
