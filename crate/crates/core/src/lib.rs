//! Probabilistic constraint logic programming with log-linear models over
//! proof trees.
//!
//! Programs are definite clauses over Herbrand term equations. Proofs are
//! enumerated by leftmost SLD resolution under a depth bound, scored by a
//! log-linear model on top of a stochastic clause-choice base distribution,
//! and the model is induced from a corpus of queries whose proofs are
//! hidden.

pub mod clp;
pub mod earley;
pub mod gen;
pub mod error;
pub mod induction;
pub mod loglinear;
pub mod numeric;
pub mod sampler;
pub mod scf;
pub mod syntax;
pub mod term;

pub use error::{Error, Result};
