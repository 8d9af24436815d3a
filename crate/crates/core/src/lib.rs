//! Robust deep hedging: path generators, signature distances, a small
//! reverse-mode tape, deep-hedge and adversarial trainers, and the
//! out-of-sample evaluation harness.

pub mod error;
pub mod evalkit;
pub mod genkit;
pub mod hedgekit;
pub mod nnkit;
pub mod robust;
pub mod sigkit;

pub use error::{Error, Result};
