//! Opportunistic interference alignment (OIA) for a two-link MIMO
//! interference channel.
//!
//! A primary link water-fills over the eigenmodes of its own channel and
//! leaves some receive dimensions unused. A secondary link precodes into the
//! kernel of the part of the cross channel that lands on the used dimensions,
//! so the primary keeps its single-user rate, then whitens the primary's
//! interference and allocates power uniformly or by water-filling.
//!
//! The crate also carries the large-system predictions (Marčenko–Pastur
//! integrals and Stieltjes-transform fixed points) and the Monte Carlo
//! campaigns that compare finite systems against them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod oia;
pub mod primary;
pub mod quadrature;
pub mod secondary;

pub use error::{OiaError, Result};
