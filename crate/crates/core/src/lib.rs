//! Sparse dynamics and Lyapunov function discovery by mixed-integer
//! quadratically constrained optimization.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches
//! files, clocks or the command line lives in the companion `lyapfit` crate.
//!
//! Pipeline: [`basis`] builds the function libraries, [`dynamics`] simulates
//! ground-truth systems and samples a [`dynamics::Dataset`], [`miqcp`]
//! assembles the learning problem, [`bnb`] solves it globally on top of the
//! [`lp`] simplex, and [`verify`] checks the learned Lyapunov candidate over a
//! continuous box. [`baselines`] and [`metrics`] support the comparisons.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod basis;
pub mod bnb;
pub mod dynamics;
pub mod interval;
pub mod lp;
pub mod metrics;
pub mod miqcp;
pub mod verify;

mod math;

pub use basis::{build_library, BasisFunction, BasisKind, BasisLibrary, LibraryRecipe};
pub use dynamics::{BuiltinSystem, Dataset, LyapunovFunction, SparseModel, StateBox, VectorField};
pub use miqcp::{assemble, Alpha2Mode, Incumbent, MiqcpProblem, NormKind, ProblemConfig};
