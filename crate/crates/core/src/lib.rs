//! Inference engines for a family of Bayesian topic models.
//!
//! Three backends share one set of model posteriors and sufficient
//! statistics:
//!
//! - [`gibbs`]: the sequential collapsed Gibbs sampler, and the
//!   state-augmentation sampler that replaces repeated categorical draws
//!   with one Poisson draw per topic;
//! - [`heron`]: the deterministic limit of infinite replication, which
//!   assigns each distinct document-word tuple its full conditional
//!   probability vector and solves the resulting fixed-point system with
//!   batch-parallel sweeps and a KL-based convergence check;
//! - [`eval`]: held-out perplexity and document co-occurrence topic
//!   coherence.
//!
//! The narrative guide in `book/` walks through the data model, the
//! samplers, the fixed-point view, and the evaluation protocol; its code
//! snippets compile and run as doc-tests of this crate.

pub mod corpus;
pub mod engine;
mod error;
pub mod eval;
pub mod gibbs;
pub mod heron;
pub mod posterior;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};

/// Book chapters double as doc-tests so the guide can never drift from
/// the library. Collected only when rustdoc gathers doctests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(DataModel, "../../../book/src/data-model.md");
    chapter!(Samplers, "../../../book/src/samplers.md");
    chapter!(FixedPoint, "../../../book/src/fixed-point.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
    chapter!(CommandLine, "../../../book/src/command-line.md");
}
