//! The chapters of the guide in `book/src`, one module each, so that
//! `cargo test` runs their code samples as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fuchsian.md")]
pub mod fuchsian {}
#[doc = include_str!("../../../book/src/monodromy.md")]
pub mod monodromy {}
#[doc = include_str!("../../../book/src/potential.md")]
pub mod potential {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/surface.md")]
pub mod surface {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
