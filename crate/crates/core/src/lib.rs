//! Compact sentence embeddings: a contrastively trained teacher, PCA on its
//! outputs, and a small student with a linear head distilled onto the reduced
//! teacher space, with STS evaluation and inverted-file retrieval on top.

pub mod binio;
pub mod cli;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod evalsts;
pub mod linalg;
pub mod objectives;
pub mod reduce;
pub mod retrieval;

pub use error::{Error, Result};
