//! Sum-rate simulator for hybrid-mode BD-RIS with dynamic cell grouping.
//!
//! A base station serves users on both sides of a surface whose cells are
//! partitioned into groups. Within a group the cells are fully connected;
//! across groups they are not. The solver alternates a fractional-programming
//! precoder update with a surface update on the Stiefel manifold, and the
//! dynamic architecture also moves cells between groups.
//!
//! Modules follow the data flow:
//!
//! - [`channel`]: system configuration and Rician channel draws.
//! - [`grouping`]: partitions of the cells and the fixed layouts.
//! - [`bdris`]: the transmissive/reflective matrix pair.
//! - [`manifold`]: quadratic trace problems and Riemannian conjugate gradient.
//! - [`solver`]: the alternating optimization for every architecture.
//! - [`harness`]: Monte Carlo sweeps, TOML configs and CSV output.
//!
//! The guide in `book/` walks through the same pieces with runnable
//! snippets; `cargo test` compiles and runs them.

pub mod bdris;
pub mod channel;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod selftest;
pub mod solver;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/groupings.md")]
    mod groupings {}
    #[doc = include_str!("../../../book/src/surface.md")]
    mod surface {}
    #[doc = include_str!("../../../book/src/manifold.md")]
    mod manifold {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/dynamic-grouping.md")]
    mod dynamic_grouping {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
