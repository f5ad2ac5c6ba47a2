use thiserror::Error;

/// Errors raised by the model builders, section bases, kernels and fits.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BergmanError {
    #[error("Kähler form is not positive at chart point {at}: density {density:e}")]
    NonPositiveForm { at: String, density: f64 },

    #[error("torus modulus must have positive imaginary part, got {0}")]
    BadModulus(String),

    #[error("point {0} is outside the chart; switch to the other chart")]
    OutOfChart(String),

    #[error("operation `{op}` is not defined for model {model}")]
    WrongModel { op: &'static str, model: String },

    #[error("theta truncation {given} is below the required {required} for a 1e-15 tail")]
    TruncationTooSmall { given: usize, required: usize },

    #[error("power p={p} with twist m={m} does not descend to the Z/{k} quotient (need k | p+m)")]
    IncompatiblePower { p: u32, m: u32, k: u32 },

    #[error("quadrature order {order} is too small for degree {degree}")]
    OrderTooSmall { order: usize, degree: usize },

    #[error("Gram matrix is not positive definite (dimension {dim})")]
    IndefiniteGram { dim: usize },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureDiverged(String),

    #[error("all far-zone samples are below the numerical floor {floor:e}")]
    BelowFloor { floor: f64 },

    #[error("need at least {needed} distinct p-values, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, BergmanError>;
