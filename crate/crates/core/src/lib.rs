//! Stereo box pose and shape estimation with certified pseudo-label selection.
//!
//! The crate is organized around a correct-and-certify loop:
//!
//! - [`estimator`] fits a cuboid (rigid pose plus per-axis dimensions) to
//!   corner keypoints seen by two calibrated cameras.
//! - [`certificates`] decides whether a fitted box and its keypoints are
//!   trustworthy enough to become training labels.
//! - [`sampling`] draws point prompts inside the projected box outline.
//! - [`synthetic`] generates scenes with known ground truth.
//! - [`pipeline`] runs all of the above over batches of frames and reports
//!   metrics.
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod pipeline;
pub mod sampling;
pub mod synthetic;

pub use error::{Error, Result, View};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
