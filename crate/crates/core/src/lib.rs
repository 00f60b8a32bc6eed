//! Individual-based trait-chain population model: exact stochastic
//! simulation, its deterministic limit, the trait substitution tree on
//! fitness-ordered chains, and the diploid genotype analogue.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod diploid;
pub mod ensemble;
pub mod equilibria;
pub mod error;
pub mod microsim;
pub mod mutation;
pub mod odelimit;
pub mod rng;
pub mod scenario;
pub mod trajectory;
pub mod traitspace;

pub use error::{Error, Result};
pub use traitspace::{KernelSpec, OrderedTraitSpace, TraitId, TraitSpec};
