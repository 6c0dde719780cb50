//! Residual operator learning toolkit for PDE surrogate modeling.
//!
//! The crate covers the full desk-scale experiment pipeline:
//!
//! * [`field`] — discrete fields on regular grids, Fourier resampling, error metrics
//! * [`autodiff`] — a small reverse-mode engine with the primitives the operators need
//! * [`datagen`] — synthetic steady Darcy and diffusion-advection datasets plus file I/O
//! * [`retrieval`] — similar-trajectory retrieval over normalized flattened fields
//! * [`residual`] — transformation of a direct-learning dataset into residual pairs
//! * [`model`] — spectral / convolutional operator networks, Adam training, evaluation
//! * [`analysis`] — similarity-rank curves and PCA label-distribution studies

pub mod analysis;
pub mod autodiff;
pub mod datagen;
pub mod field;
pub mod model;
pub mod residual;
pub mod retrieval;
mod fft;
