//! Physics-based stain decomposition for histology images.
//!
//! An RGB image is mapped to log space, where the Beer-Lambert law makes stain
//! contributions additive, and factored by an unrolled alternating proximal
//! gradient solver ([`unroll::decompose`]) into a background, a nonnegative
//! stain color matrix and per-pixel stain densities. The densities can be
//! projected to a fixed 3-channel image ([`head`]) or re-rendered under a
//! reference stain matrix.
//!
//! Classical comparison methods live in [`baselines`], a desk-scale trainer
//! for the solver's learnable parameters in [`train`], and the average
//! percent underperformance metric in [`metrics`].

pub mod baselines;
pub mod error;
pub mod head;
pub mod imagery;
mod matrix_serde;
pub mod metrics;
pub mod prox;
pub mod train;
pub mod unroll;

pub use error::{Error, Result};
pub use head::{normalize_render, project_density, HeadWeights};
pub use imagery::{
    denoise, load_image, render_beer_lambert, save_image, tile, to_optical_density, untile, Geometry,
    OpticalDensityImage, RawImage,
};
pub use prox::{prox_density_column, prox_spectrum_column, safe_step_size, ProxThresholds};
pub use unroll::{decompose, effective_rank, objective, unroll_step, LearnableParams, SolverConfig, StainModel};
