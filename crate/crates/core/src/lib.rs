//! Robust generative Restricted Kernel Machines.
//!
//! Weighted kernel PCA through weighted conjugate feature duality, with
//! MCD-based down-weighting of outlying latent variables, jointly trained dense
//! feature/pre-image maps, and latent-space generation and denoising.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod feature_maps;
pub mod generate;
pub mod io;
pub mod kernels;
pub mod optim;
pub mod rkm;
pub mod robust_stats;
pub mod trainer;

pub use error::{Result, RkmError};
