//! Numerical Bergman kernels of high tensor powers of line bundles over
//! Riemann surfaces, together with the flat model kernels and the fitting
//! tools used to compare the two.

// guards written as `!(x > 0.0)` reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod bergman;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod model;
pub mod quadrature;
pub mod sections;

pub use error::{BergmanError, Result};
pub use geometry::{Chart, ChartPoint, KaehlerModel, ModelConfig, ModelKind};
