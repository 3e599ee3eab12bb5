//! The 1x1 projection head that maps an `r`-component density map to a
//! 3-channel image, and re-rendering under a reference stain matrix.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{render_beer_lambert, save_image, Geometry, RawImage};
use crate::matrix_serde;
use crate::unroll::{ProjectionRange, StainModel};

pub const HEAD_CHANNELS: usize = 3;

/// Weights of the 1x1 convolution, `3 x r`. Not sign constrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeadWeights(#[serde(with = "matrix_serde")] pub Array2<f64>);

impl HeadWeights {
    /// `W[i][j] = 0.5` when `j mod 3 == i`, else 0.
    pub fn identity_pattern(rank: usize) -> Self {
        HeadWeights(Array2::from_shape_fn((HEAD_CHANNELS, rank), |(i, j)| {
            if j % HEAD_CHANNELS == i {
                0.5
            } else {
                0.0
            }
        }))
    }

    pub fn zeros(rank: usize) -> Self {
        HeadWeights(Array2::zeros((HEAD_CHANNELS, rank)))
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn validate(&self, rank: usize) -> Result<()> {
        if self.0.dim() != (HEAD_CHANNELS, rank) {
            return Err(Error::Dimension(format!(
                "head is {:?}, expected ({HEAD_CHANNELS}, {rank})",
                self.0.dim()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head weights".into()));
        }
        Ok(())
    }
}

/// Per-pixel `W d_j`: the `3 x p` output of the 1x1 convolution. Unclamped.
pub fn project_density(model: &StainModel, weights: &HeadWeights, geometry: Geometry) -> Result<Array2<f64>> {
    project_densities(model.densities.view(), weights, geometry)
}

pub fn project_densities(
    densities: ArrayView2<'_, f64>,
    weights: &HeadWeights,
    geometry: Geometry,
) -> Result<Array2<f64>> {
    if weights.rank() != densities.ncols() {
        return Err(Error::Dimension(format!(
            "head has {} inputs, density map has {} components",
            weights.rank(),
            densities.ncols()
        )));
    }
    if densities.nrows() != geometry.pixels() {
        return Err(Error::Dimension(format!(
            "density map has {} pixels, geometry {}",
            densities.nrows(),
            geometry.pixels()
        )));
    }
    Ok(weights.0.dot(&densities.t()))
}

/// Re-renders the densities under `reference` stains with a white background.
pub fn normalize_render(model: &StainModel, reference: ArrayView2<'_, f64>, geometry: Geometry) -> Result<RawImage> {
    let x0 = Array1::zeros(reference.nrows());
    render_beer_lambert(x0.view(), reference, model.densities.view(), geometry)
}

/// Saves a projected image as an RGB PNG after a global min-max rescale.
/// A flat image is written black. Returns the range used.
pub fn save_projection(projected: ArrayView2<'_, f64>, geometry: Geometry, path: &Path) -> Result<ProjectionRange> {
    if projected.dim() != (HEAD_CHANNELS, geometry.pixels()) {
        return Err(Error::Dimension(format!(
            "projection is {:?} for {}x{}",
            projected.dim(),
            geometry.width,
            geometry.height
        )));
    }
    let min = projected.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = projected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let scaled = if span > 0.0 {
        projected.mapv(|v| (v - min) / span)
    } else {
        projected.mapv(|_| 0.0)
    };
    let geometry = Geometry::new(HEAD_CHANNELS, geometry.width, geometry.height);
    // RawImage floors at EPS_LOG; quantization maps that floor to 1/255 at worst.
    save_image(&RawImage::new(geometry, scaled)?, path)?;
    Ok(ProjectionRange { min, max })
}
