//! Coupling-based bounds on the distance between the quasi-stationary
//! distribution of a mass-action reaction network and that of its diffusion
//! approximation.
//!
//! The bound is `fte / (1 − α)`: a finite-time error between paired
//! tau-leaping and Euler–Maruyama trajectories, divided by one minus a
//! contraction factor `α = e^{−γT}` whose rate `γ` is fitted to the
//! exponential tail of coupling times of the diffusion.

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod network;
pub mod paired;
pub mod qsd;
pub mod quantile;
pub mod rng;
pub mod sensitivity;
pub mod simulate;

pub use error::{Error, ErrorClass, Result};
pub use network::{in_absorbing, load_network, preset, Preset, ProcessKind, Reaction, ReactionNetwork, StateVector};
pub use paired::{generate_paired_skeleton, KmtGammaEstimate, PairedSkeleton, Pairing, PathKind, SkeletonSet};
