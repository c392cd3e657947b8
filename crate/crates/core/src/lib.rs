//! Vector map convolutions.
//!
//! A vector map layer treats groups of `D` consecutive channels as one
//! `D`-dimensional entity. Each output axis is a distinct signed circular
//! shift of a single shared kernel set, scaled elementwise by a learnable
//! `D × D` matrix `L`, so a layer stores `1/D` of the kernels of an
//! equivalent real layer. `D = 2` with a fixed `L` is complex convolution.

pub mod autodiff;
pub mod checks;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod models;
pub mod oracle;
pub mod run;
pub mod tensor;
pub mod vmap;

pub use error::{Error, Result};
pub use tensor::{ConvGeometry, SeededRng, Shape, Tensor};
