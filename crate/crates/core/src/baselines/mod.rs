//! Classical comparison methods: Reinhard color transfer, Macenko PCA stain
//! estimation and sparse NMF with unit-norm stains.

pub mod lab;
pub mod macenko;
pub mod reinhard;
pub mod sparse_nmf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_serde;

pub use macenko::{macenko_estimate, macenko_normalize, MacenkoConfig};
pub use reinhard::reinhard_normalize;
pub use sparse_nmf::{sparse_nmf_decompose, SparseNmfResult};

/// Unit-norm nonnegative stain columns and a robust density scale per stain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StainBasis {
    #[serde(rename = "S", with = "matrix_serde")]
    pub stains: Array2<f64>,
    pub max_densities: Vec<f64>,
}

impl StainBasis {
    pub fn rank(&self) -> usize {
        self.stains.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, col) in self.stains.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > 1e-9 || col.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "stain column {i} has norm {norm} or a negative entry"
                )));
            }
        }
        if self.max_densities.len() != self.rank() {
            return Err(Error::Dimension("one density scale per stain".into()));
        }
        Ok(())
    }
}

/// Linearly interpolated percentile (`q` in percent) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Angle in degrees between two vectors.
pub fn angle_degrees(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let cos = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}
