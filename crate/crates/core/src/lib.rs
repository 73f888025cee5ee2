//! Algorithms for segmenting scanning-probe microscope images of
//! nanoparticle assemblies.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command-line driver and anything else touching the operating system
//! live in the `spmseg` companion crate.
//!
//! Pipeline, roughly in the order the modules are used:
//!
//! * [`preprocess`]: row alignment, polynomial levelling, contrast
//!   normalisation and the optional pre-filters (Gaussian, histogram
//!   equalisation, k-means, mean shift).
//! * [`augment`]: synthetic scan artefacts (stripes, banding, streaks,
//!   background contrast, inversion, blur, drift) and the augmentation
//!   processes built from them.
//! * [`segment`]: global mean, local mean, Otsu and fixed thresholds plus
//!   despeckling.
//! * [`unet`]: a small U-Net with hand-written forward/backward kernels
//!   and an Adam training loop.
//! * [`analysis`]: Minkowski functionals, pixel-change robustness and
//!   threshold sweeps.
//! * [`dataset`]: dataset records, curation, stratified splitting and a
//!   synthetic pattern generator.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod augment;
pub mod dataset;
mod error;
pub mod image;
pub mod preprocess;
pub mod rng;
pub mod segment;
pub mod unet;

pub use error::{Error, Result};
pub use image::{BinaryMask, GrayImage, HeightMap};
pub use rng::Rng;
