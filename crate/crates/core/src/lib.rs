//! Structured tensor channel estimation for multi-user MIMO-OFDM uplinks.
//!
//! A user's channel over `(column, row, subcarrier, polarization)` is a
//! fourth-order CP tensor whose first three factors are Vandermonde. The
//! crate simulates pilot transmission, implements a comb least-squares plus
//! interpolation baseline, refines it with a one-pass Vandermonde-structured
//! decomposition, and compares against unstructured CP-ALS.

pub mod airlink;
pub mod bench;
pub mod als;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod plot;
pub mod tensor;
pub mod vsd_fort;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor4, FactorSet};
