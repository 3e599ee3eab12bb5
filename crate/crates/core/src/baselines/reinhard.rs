//! Reinhard color transfer: match per-channel LAB mean and standard deviation
//! of a source image to a template.

use ndarray::{Array2, ArrayView1, Axis};

use super::lab::{lab_to_rgb, rgb_to_lab};
use crate::error::{Error, Result};
use crate::imagery::RawImage;

/// Population mean and standard deviation.
pub fn mean_std(v: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn require_rgb(img: &RawImage, role: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!(
            "{role} has {} channels, Reinhard needs RGB",
            img.channels()
        )));
    }
    Ok(())
}

/// The transferred LAB matrix before conversion back to sRGB and clamping.
/// A zero-variance source channel is set to the template mean.
pub fn reinhard_transfer_lab(src: &RawImage, template: &RawImage) -> Result<Array2<f64>> {
    require_rgb(src, "source")?;
    require_rgb(template, "template")?;
    let mut lab = rgb_to_lab(src.data());
    let tpl = rgb_to_lab(template.data());
    for (mut row, tpl_row) in lab.axis_iter_mut(Axis(0)).zip(tpl.axis_iter(Axis(0))) {
        let (mu_s, sd_s) = mean_std(row.view());
        let (mu_t, sd_t) = mean_std(tpl_row);
        // Summation noise on a constant channel counts as zero variance.
        let scale = if sd_s > 1e-9 * (1.0 + mu_s.abs()) {
            sd_t / sd_s
        } else {
            0.0
        };
        row.mapv_inplace(|v| (v - mu_s) * scale + mu_t);
    }
    Ok(lab)
}

pub fn reinhard_normalize(src: &RawImage, template: &RawImage) -> Result<RawImage> {
    let lab = reinhard_transfer_lab(src, template)?;
    RawImage::new(src.geometry(), lab_to_rgb(lab.view()))
}
