//! In-field late-blight detection from rotated, zoomed patches of
//! high-resolution field images.
//!
//! The pipeline: [`dataset`] loads or synthesizes annotated images,
//! [`sampler`] draws labeled rotated patches, [`model`] trains a binary CNN
//! patch classifier, [`predictor`] classifies whole images by sliding
//! windows and [`evaluation`] runs leave-one-out validation.

pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod predictor;
pub mod raster;
pub mod rng;
pub mod sampler;

pub use dataset::{Dataset, FieldImage, Label, SegMask};
pub use raster::Raster;
