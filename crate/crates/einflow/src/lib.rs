//! Numerical toolkit for the rescaled vacuum Einstein flow in Gaussian normal
//! gauge: discrete charts, tensor fields, curvature, the 1+n splitting of the
//! spacetime Weyl tensor, two interchangeable evolution formulations, and the
//! full set of constraint, energy and decay diagnostics.
//!
//! Start with the `examples/` directory: each example is a runnable demo of one
//! capability (fixed-point check, convergence orders, decay probe, identity
//! verification, non-positivity checker).

pub mod error;
pub mod grid;
pub mod tensor;
pub mod curvature;
pub mod norms;
pub mod split;

pub use error::{EinflowError, Result};
