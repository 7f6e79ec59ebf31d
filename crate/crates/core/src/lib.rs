//! Shared-private bilingual word embeddings.
//!
//! Source and target words are paired into three relationship categories
//! (similar lexical meaning, same word form, unrelated) and each pair shares a
//! category-dependent slice of its embedding storage. The crate covers the
//! whole path from corpus to storage:
//!
//! - [`vocab`]: frequency-ordered vocabularies;
//! - [`align`]: Pharaoh alignments and `A(y|x)` estimation;
//! - [`pairing`]: the exclusive three-stage pairing;
//! - [`embedding`]: block layout, parameter accounting, aliased storage;
//! - [`micronmt`]: a parameter-free attention model used to check gradients;
//! - [`pca`]: power-iteration PCA for inspecting the embedding space.
//!
//! The guide under `book/` walks through each piece; its snippets are
//! compiled and run as doctests of this crate.

pub mod align;
pub mod embedding;
pub mod error;
pub mod micronmt;
pub mod pairing;
pub mod pca;
pub mod vocab;

pub use error::{Error, Result};

// Guide chapters, run as doctests so the book stays in step with the code.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pairing.md")]
mod book_pairing {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/layout.md")]
mod book_layout {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
