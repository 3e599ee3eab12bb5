//! Macenko stain estimation: PCA plane of the foreground optical densities,
//! with stain directions taken at robust extreme angles in that plane.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{percentile, StainBasis};
use crate::error::{Error, Result};
use crate::imagery::{Geometry, RawImage, EPS_LOG};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacenkoConfig {
    /// Angle percentile (in percent) used for the two extreme directions.
    pub alpha: f64,
    /// Minimum optical-density norm of a foreground pixel.
    pub beta: f64,
    pub min_foreground: usize,
    /// Percentile (in percent) of per-stain density used as its scale.
    pub max_density_percentile: f64,
}

impl Default for MacenkoConfig {
    fn default() -> Self {
        MacenkoConfig {
            alpha: 1.0,
            beta: 0.15,
            min_foreground: 100,
            max_density_percentile: 99.0,
        }
    }
}

/// Positive optical density `-ln I`, `c x p`.
fn absorbance(img: &RawImage) -> Array2<f64> {
    img.data().mapv(|v| -v.max(EPS_LOG).ln())
}

/// Nonnegative least squares against a two-column basis. Falls back to the
/// best single-column fit when the unconstrained solution leaves the orthant
/// or the basis is numerically collinear.
pub fn nnls_two(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, od: ArrayView1<'_, f64>) -> [f64; 2] {
    let (aa, bb, ab) = (a.dot(&a), b.dot(&b), a.dot(&b));
    let (ao, bo) = (a.dot(&od), b.dot(&od));
    let det = aa * bb - ab * ab;
    if det > 1e-12 * aa * bb {
        let x = (bb * ao - ab * bo) / det;
        let y = (aa * bo - ab * ao) / det;
        if x >= 0.0 && y >= 0.0 {
            return [x, y];
        }
    }
    let xa = if aa > 0.0 { (ao / aa).max(0.0) } else { 0.0 };
    let yb = if bb > 0.0 { (bo / bb).max(0.0) } else { 0.0 };
    // ‖o - t v‖² = ‖o‖² - 2 t (v·o) + t² ‖v‖²; compare the t-dependent parts.
    let cost_a = xa * xa * aa - 2.0 * xa * ao;
    let cost_b = yb * yb * bb - 2.0 * yb * bo;
    if cost_a <= cost_b {
        [xa, 0.0]
    } else {
        [0.0, yb]
    }
}

/// Per-pixel densities (`p x 2`) of an absorbance matrix in a two-stain basis.
fn densities(basis: ArrayView2<'_, f64>, od: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((od.ncols(), 2));
    for (j, col) in od.axis_iter(Axis(1)).enumerate() {
        let [x, y] = nnls_two(basis.column(0), basis.column(1), col);
        out[[j, 0]] = x;
        out[[j, 1]] = y;
    }
    out
}

fn density_scales(dens: &Array2<f64>, q: f64) -> Vec<f64> {
    dens.axis_iter(Axis(1))
        .map(|c| percentile(&c.to_vec(), q))
        .collect()
}

pub fn macenko_estimate(src: &RawImage) -> Result<StainBasis> {
    macenko_estimate_with(src, &MacenkoConfig::default())
}

pub fn macenko_estimate_with(src: &RawImage, cfg: &MacenkoConfig) -> Result<StainBasis> {
    let c = src.channels();
    if c < 2 {
        return Err(Error::Dimension(format!("Macenko needs at least 2 channels, got {c}")));
    }
    let od = absorbance(src);
    let foreground: Vec<usize> = (0..od.ncols())
        .filter(|&j| {
            let col = od.column(j);
            col.dot(&col).sqrt() >= cfg.beta
        })
        .collect();
    if foreground.len() < cfg.min_foreground.max(2) {
        return Err(Error::NoForeground {
            found: foreground.len(),
            required: cfg.min_foreground.max(2),
        });
    }
    let fg = od.select(Axis(1), &foreground);
    let n = fg.ncols() as f64;
    let mean = fg.mean_axis(Axis(1)).expect("nonempty foreground");
    let centered = &fg - &mean.view().insert_axis(Axis(1));
    let cov = centered.dot(&centered.t()) / (n - 1.0);

    let eig = SymmetricEigen::new(DMatrix::from_fn(c, c, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut plane: Vec<Array1<f64>> = order[..2]
        .iter()
        .map(|&k| Array1::from_iter(eig.eigenvectors.column(k).iter().copied()))
        .collect();
    for v in plane.iter_mut() {
        if fg.t().dot(v).sum() < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }

    let t1 = fg.t().dot(&plane[0]);
    let t2 = fg.t().dot(&plane[1]);
    let angles: Vec<f64> = t1.iter().zip(t2.iter()).map(|(a, b)| b.atan2(*a)).collect();
    let lo = percentile(&angles, cfg.alpha);
    let hi = percentile(&angles, 100.0 - cfg.alpha);
    let direction = |phi: f64| -> Array1<f64> {
        let v = &plane[0] * phi.cos() + &plane[1] * phi.sin();
        let v = v.mapv(f64::abs);
        let norm = v.dot(&v).sqrt();
        v / norm
    };
    let (v_lo, v_hi) = (direction(lo), direction(hi));
    // Larger first-channel absorbance first (hematoxylin-like before eosin-like).
    let (first, second) = if v_lo[0] >= v_hi[0] {
        (v_lo, v_hi)
    } else {
        (v_hi, v_lo)
    };
    let mut stains = Array2::zeros((c, 2));
    stains.column_mut(0).assign(&first);
    stains.column_mut(1).assign(&second);

    let dens = densities(stains.view(), od.view());
    let max_densities = density_scales(&dens, cfg.max_density_percentile);
    Ok(StainBasis {
        stains,
        max_densities,
    })
}

/// Re-renders `src` in the template's stain basis, scaling each stain's
/// densities by the ratio of the template's to the source's density scale.
pub fn macenko_normalize(src: &RawImage, template: &RawImage) -> Result<RawImage> {
    if src.channels() != template.channels() {
        return Err(Error::Dimension(format!(
            "source has {} channels, template {}",
            src.channels(),
            template.channels()
        )));
    }
    let src_basis = macenko_estimate(src)?;
    let tpl_basis = macenko_estimate(template)?;
    let mut dens = densities(src_basis.stains.view(), absorbance(src).view());
    for (k, mut col) in dens.axis_iter_mut(Axis(1)).enumerate() {
        let (s, t) = (src_basis.max_densities[k], tpl_basis.max_densities[k]);
        if s > 0.0 {
            col.mapv_inplace(|v| v * t / s);
        }
    }
    let od = tpl_basis.stains.dot(&dens.t());
    let geometry: Geometry = src.geometry();
    RawImage::new(geometry, od.mapv(|v| (-v).exp()))
}
