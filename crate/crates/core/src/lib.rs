//! Analysis toolkit for restricted 3-term arithmetic progressions in `F_p^n`.
//!
//! The crate is organised bottom-up:
//!
//! * [`field`]: prime fields, the index encoding of `F_p^n`, finite Abelian
//!   groups and their characters.
//! * [`funcspace`]: dense functions, Fourier and Efron–Stein decompositions,
//!   level weights and random restrictions.
//! * [`chains`]: Markov operators, their tensor powers and spectral data.
//! * [`aps`]: the restricted progression distribution, triple counts,
//!   freeness checks and extremal search.
//! * [`embeddings`]: exact detection of Abelian embeddings of a support.
//! * [`structure`]: product functions, special bases and correlation search.
//! * [`increment`]: the density-increment step and its iteration driver.
//! * [`io`]: the binary function-table format.

pub mod aps;
pub mod chains;
pub mod embeddings;
pub mod error;
pub mod field;
pub mod funcspace;
pub mod increment;
pub mod io;
pub mod rng;
pub mod structure;

pub use error::{Error, Result};
pub use num_complex::Complex64;
