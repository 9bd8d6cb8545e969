use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("jet order caps exceeded: base order {base} (max {max_base}), fiber order {fiber} (max {max_fiber})")]
    OrderCap {
        base: u8,
        fiber: u8,
        max_base: u8,
        max_fiber: u8,
    },

    #[error("direction index {index} out of range for dimension {dim}")]
    Direction { index: usize, dim: usize },

    #[error("singular matrix: |det| = {det:e} below threshold {threshold:e}")]
    Singular { det: f64, threshold: f64 },

    #[error("inadmissible tangent point: {0}")]
    Inadmissible(String),

    #[error("model has no one-form")]
    MissingOneForm,

    #[error("profile degenerate: {0}")]
    ProfileDegenerate(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("expression for {component} depends on the coordinate `{coordinate}`")]
    ForbiddenDependence { component: String, coordinate: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("insufficient sampling: {0}")]
    Sampling(String),

    #[error("undefined fit: {0}")]
    UndefinedFit(String),
}
