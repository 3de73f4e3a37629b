//! Core algorithms for baking signed-distance volumetric scenes into meshes
//! with spherical-Gaussian appearance.
//!
//! The crate is `no_std` (with `alloc`) when built without the `std` feature.
//! File formats, dataset handling and the command line live in the companion
//! `bakedsdf` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod appearance;
pub mod bake;
pub mod camera;
pub mod error;
pub mod field;
pub mod math;
pub mod metrics;
pub mod neural;
pub mod optim;
pub mod par;
pub mod rng;
pub mod scene;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use math::{Rgb, Vec3};
