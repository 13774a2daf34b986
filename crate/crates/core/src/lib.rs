//! Joint calibration of an option-price surface and a local-volatility
//! surface, regularized by the residual of the scaled Dupire equation, with a
//! Monte Carlo harness for synthetic data and repricing checks.

pub mod dupire;
pub mod error;
pub mod io;
pub mod losses;
pub mod mc;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
