//! Multi-component T2 distribution estimation from multi-echo spin-echo
//! signals: EPG forward model, NNLS and mono-exponential fits, MLP
//! estimators with bootstrapped echo-subset inference, and a seeded
//! synthetic-cohort harness.

pub mod bootstrap;
pub mod distribution;
pub mod epg;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod mlp;
pub mod nnls;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod stats;
pub mod synth;

pub use distribution::T2Distribution;
pub use error::{Error, Result};
pub use grid::T2Grid;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    mod inversion {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
