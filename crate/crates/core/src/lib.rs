//! Laboratory for the concurrent zero-knowledge lower bound: an adversarial
//! interleaving verifier, proof-tree and snake analysis, and the
//! simulator-to-prover splicing reduction, with checkers for every
//! computable inequality of the argument.

pub mod adversary;
pub mod concentration;
pub mod error;
pub mod fixtures;
pub mod gi;
pub mod harness;
pub mod hash;
pub mod params;
pub mod protocol;
pub mod seeds;
pub mod simulators;
pub mod splice;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
