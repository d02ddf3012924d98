//! Core engine for wavelength-conditioned neural radiance fields.
//!
//! Everything in this crate is pure computation over `f64` buffers: a
//! reverse-mode autodiff tape, input encodings, the spectral field variants,
//! ray sampling, volume compositing, image metrics under a spectral axis, and
//! spectral calibration tools. File formats, the training loop, and the CLI
//! live in the companion `hyperfield` crate.
//!
//! The crate is `no_std` (with `alloc`); the `std` feature only widens error
//! interop and RNG conveniences.

#![no_std]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod compositing;
pub mod cube;
pub mod encoding;
pub mod error;
pub mod field;
pub mod math;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod spectral;

pub use error::{CoreError, Result};
