//! Document image translation with single-to-mix modality alignment.
//!
//! A frozen mix-modality [`teacher`] encodes a page image together with its
//! source text. The trainable [`model`] learns an image-only alignment
//! encoder whose projected output mimics the teacher's hidden states, and
//! a decoder that cross-attends to both the aligned representation and a
//! separate image encoder. Inference needs only the student.
//!
//! The crate is `no_std` (with `alloc`); file formats, orchestration and
//! the command line live in the `dimt` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod image;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthdoc;
pub mod teacher;
pub mod training;
pub mod tensor;
pub mod vocab;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { what: &'static str, expected: (usize, usize), found: (usize, usize) },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("token id {0} out of range")]
    TokenOutOfRange(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(alloc::string::String),
    #[error("sequence of length {len} exceeds {max} positions")]
    TooLong { len: usize, max: usize },
    #[error("page overflow: content needs {needed}px but the page has {available}px")]
    PageOverflow { needed: usize, available: usize },
    #[error("vocabulary of {size} words is too small (need at least {min})")]
    VocabularyTooSmall { size: usize, min: usize },
    #[error("modality mask disables both image and text")]
    EmptyModalityMask,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
