use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dataset: {0}")]
    Data(String),

    #[error("column {column} is constant and cannot be standardized")]
    ConstantColumn { column: usize },

    #[error("covariate {column} has {distinct} distinct values; a {r}-column spline basis needs at least {needed} (try a smaller r)")]
    TooFewDistinct { column: usize, distinct: usize, r: usize, needed: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no observed events; the partial likelihood is undefined")]
    NoEvents,

    #[error("point lies on a kink of the Laplace likelihood (row {row})")]
    NonDifferentiable { row: usize },

    #[error("prior density is singular at a zero coefficient")]
    SingularPrior,

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("root not bracketed on [{lo}, {hi}] (f = {f_lo}, {f_hi})")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("model space has 3^{p} models, above the enumeration limit {limit}")]
    EnumerationLimit { p: usize, limit: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}
