//! Zero-shot 3D visual grounding over posed RGB-D frames.
//!
//! A query such as "the red chair near the window" is resolved in four steps:
//!
//! 1. [`proposal`]: segmentation masks above a confidence threshold form an
//!    object profile table; the category most similar to the query's target
//!    (by text-embedding cosine) selects the candidate set.
//! 2. [`projection`]: each candidate's points are projected into sampled
//!    camera frames, kept only where they agree with the sensor depth, and the
//!    views with the largest visible area are chosen.
//! 3. [`sequence`]: every chosen view is outlined with a red box and the views
//!    are stacked into one image per candidate.
//! 4. [`reasoning`]: a vision-language judge eliminates candidates in batches
//!    until one remains.
//!
//! [`pipeline::ground`] runs the whole chain; [`eval`] scores predictions.

pub mod error;
pub mod eval;
pub mod pipeline;
pub mod projection;
pub mod proposal;
pub mod reasoning;
pub mod remote;
pub mod scene;
pub mod sequence;
pub mod synthetic;

pub use error::{Error, Result};

// The guide's code listings are compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scene-bundles.md")]
    mod scene_bundles {}
    #[doc = include_str!("../../../book/src/proposal-selection.md")]
    mod proposal_selection {}
    #[doc = include_str!("../../../book/src/projection.md")]
    mod projection {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/reasoning.md")]
    mod reasoning {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
