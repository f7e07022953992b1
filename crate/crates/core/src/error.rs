use thiserror::Error;

use crate::syntax::SyntaxError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("no proof within the depth bound for query `{0}`")]
    NoProof(String),
    #[error("newton iteration for coordinate {0} did not converge and no bracketing interval exists")]
    NewtonDiverged(usize),
    #[error("sampler gave up after {0} failed derivations")]
    BudgetExhausted(usize),
    #[error("all trees have probability zero")]
    AllZero,
    #[error("no candidate properties")]
    NoCandidates,
    #[error("overlapping subtree properties {0} and {1}; use exhaustive scoring instead")]
    OverlappingProperties(String, String),
    #[error("proof space exceeds {0} trees; use --mode mc")]
    SpaceTooLarge(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid choice parameters: {0}")]
    InvalidParams(String),
    #[error("fragments do not combine ({0})")]
    ShapeMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
