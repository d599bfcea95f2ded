//! Zero-forcing user allocation and RIS phase optimization for the
//! RIS-aided MIMO broadcast channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense complex kernels (Hermitian EVD, thin QR, pseudoinverse).
//! - [`channel`]: seeded channel realizations for the LOS BS-RIS geometry.
//! - [`zf_core`]: allocation-dependent matrices, ZF precoders and sum-SE.
//! - [`phase_opt`]: relaxed and unit-modulus phase optimization, waterfilling.
//! - [`alloc`]: Greedy-RIS-LISA, AddOne-RIS-LISA and the baselines.
//! - [`harness`]: Monte-Carlo sweeps and CSV/JSON output.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod channel;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod phase_opt;
pub mod zf_core;

pub use error::{Error, Result};
pub use numerics::{CMat, CVec, C64};
