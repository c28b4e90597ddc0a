//! Continuous-velocity lattice BGK system on the 2D torus and the
//! incompressible Navier-Stokes equations it converges to.
//!
//! The guide in `book/` walks through each module with runnable examples.

pub mod cli_io;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod lbgk;
pub mod ns2d;
pub mod spectral;

pub use error::{Error, Result};

// The book chapters run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattices.md")]
    mod lattices {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/lbgk.md")]
    mod lbgk {}
    #[doc = include_str!("../../../book/src/navier_stokes.md")]
    mod navier_stokes {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
