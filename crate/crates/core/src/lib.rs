//! Reconstruction of emissive semitransparent volumes (flames, smoke) from a
//! handful of calibrated views.
//!
//! The forward model ray-marches a key-point lattice with constant
//! per-sample opacity and front-to-back under blending. Reconstruction
//! renders every view, back-projects the pixel residuals onto the key points
//! along flame rays, and repeats until the error stalls. Temperature is
//! recovered through a black-body color table inverted on the green channel.
//! A CCD smear simulator covers the camera synchronization procedure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cie;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod image;
pub mod preprocess;
pub mod radiometry;
pub mod reconstruct;
pub mod render;
pub mod scene;
pub mod syncsim;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Camera, Pt3, Ray, Vec3};
pub use image::{FlameMask, Image, Rect};
pub use radiometry::{ColorTempMap, PhaseConfig};
pub use volume::{Aabb, Channel, GridGeometry, HullTags, VoxelGrid};
