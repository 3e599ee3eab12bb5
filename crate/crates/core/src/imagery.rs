//! Intensity images, the Beer-Lambert transforms between intensity and
//! optical-density space, PNG I/O, tiling and denoising.
//!
//! Images are stored channel-major: a `c x p` matrix whose column `j` is the
//! pixel at `(x, y) = (j % width, j / width)`. Intensities live in
//! `[EPS_LOG, 1]`; quantization to 8 bits happens only in [`save_image`].

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to intensities before taking logarithms.
pub const EPS_LOG: f64 = 1.0 / 255.0;

/// Median stage kernel of [`denoise`].
pub const MEDIAN_KERNEL: usize = 11;
/// Gaussian stage kernel of [`denoise`].
pub const GAUSSIAN_KERNEL: usize = 21;
pub const GAUSSIAN_SIGMA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl Geometry {
    pub fn new(channels: usize, width: usize, height: usize) -> Self {
        Geometry {
            channels,
            width,
            height,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Observed intensity image, every entry in `[EPS_LOG, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    geometry: Geometry,
    data: Array2<f64>,
}

impl RawImage {
    /// Wraps a `c x p` intensity matrix, clamping entries into `[EPS_LOG, 1]`.
    pub fn new(geometry: Geometry, mut data: Array2<f64>) -> Result<Self> {
        check_shape(&geometry, data.view())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image intensities".into()));
        }
        data.mapv_inplace(|v| v.clamp(EPS_LOG, 1.0));
        Ok(RawImage { geometry, data })
    }

    /// Uniform image with the given per-channel intensities.
    pub fn constant(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let geometry = Geometry::new(color.len(), width, height);
        let data = Array2::from_shape_fn((color.len(), geometry.pixels()), |(ch, _)| color[ch]);
        RawImage::new(geometry, data)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn channels(&self) -> usize {
        self.geometry.channels
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[[channel, y * self.geometry.width + x]]
    }

    pub fn pixel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.data.column(index)
    }

    /// Per-channel mean intensity.
    pub fn mean_color(&self) -> Vec<f64> {
        self.data
            .mean_axis(Axis(1))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }
}

/// Element-wise natural log of a [`RawImage`]; entries lie in `[ln EPS_LOG, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalDensityImage {
    geometry: Geometry,
    data: Array2<f64>,
}

impl OpticalDensityImage {
    /// Wraps a log-domain matrix directly. Entries must be finite and `<= 0`.
    pub fn from_log_data(geometry: Geometry, data: Array2<f64>) -> Result<Self> {
        check_shape(&geometry, data.view())?;
        if data.iter().any(|v| !v.is_finite() || *v > 0.0) {
            return Err(Error::InvalidParameter(
                "log intensities must be finite and non-positive".into(),
            ));
        }
        Ok(OpticalDensityImage { geometry, data })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Inverse transform, `exp` of every entry.
    pub fn to_intensity(&self) -> RawImage {
        RawImage {
            geometry: self.geometry,
            data: self.data.mapv(f64::exp),
        }
    }
}

fn check_shape(geometry: &Geometry, data: ArrayView2<'_, f64>) -> Result<()> {
    if data.dim() != (geometry.channels, geometry.pixels()) {
        return Err(Error::Dimension(format!(
            "data is {:?}, geometry {}x{}x{} needs ({}, {})",
            data.dim(),
            geometry.channels,
            geometry.width,
            geometry.height,
            geometry.channels,
            geometry.pixels()
        )));
    }
    Ok(())
}

pub fn to_optical_density(img: &RawImage) -> OpticalDensityImage {
    OpticalDensityImage {
        geometry: img.geometry,
        data: img.data.mapv(f64::ln),
    }
}

/// Forward Beer-Lambert model: `exp(x0) 1^T ⊙ exp(-S D^T)`, clamped to `[EPS_LOG, 1]`.
///
/// `x0_log` is the log-domain background (length `c`), `stains` is `c x r` and
/// `densities` is `p x r`.
pub fn render_beer_lambert(
    x0_log: ArrayView1<'_, f64>,
    stains: ArrayView2<'_, f64>,
    densities: ArrayView2<'_, f64>,
    geometry: Geometry,
) -> Result<RawImage> {
    let (c, r) = stains.dim();
    if x0_log.len() != c || c != geometry.channels {
        return Err(Error::Dimension(format!(
            "background has {} channels, stain matrix {}, geometry {}",
            x0_log.len(),
            c,
            geometry.channels
        )));
    }
    if densities.dim() != (geometry.pixels(), r) {
        return Err(Error::Dimension(format!(
            "density matrix is {:?}, expected ({}, {r})",
            densities.dim(),
            geometry.pixels()
        )));
    }
    let mut data = stains.dot(&densities.t());
    for (mut row, &bg) in data.axis_iter_mut(Axis(0)).zip(x0_log.iter()) {
        row.mapv_inplace(|od| (bg - od).exp().clamp(EPS_LOG, 1.0));
    }
    Ok(RawImage { geometry, data })
}

/// Loads an 8-bit RGB or grayscale PNG, mapping `v` to `max(v / 255, EPS_LOG)`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let decoded = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        other => return Err(Error::UnsupportedFormat(format!("{:?}", other.color()))),
    };
    let geometry = Geometry::new(channels, width, height);
    let data = Array2::from_shape_fn((channels, geometry.pixels()), |(ch, j)| {
        (raw[j * channels + ch] as f64 / 255.0).max(EPS_LOG)
    });
    Ok(RawImage { geometry, data })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image as an 8-bit PNG (`round(255 v)`).
pub fn save_image(img: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Geometry {
        channels,
        width,
        height,
    } = img.geometry;
    let mut raw = Vec::with_capacity(channels * width * height);
    for j in 0..img.geometry.pixels() {
        raw.extend(img.data.column(j).iter().map(|&v| quantize(v)));
    }
    let encoded = match channels {
        3 => RgbImage::from_raw(width as u32, height as u32, raw).map(DynamicImage::ImageRgb8),
        1 => GrayImage::from_raw(width as u32, height as u32, raw).map(DynamicImage::ImageLuma8),
        n => return Err(Error::UnsupportedFormat(format!("{n} channels"))),
    };
    let encoded = encoded.ok_or_else(|| Error::Dimension("pixel buffer size".into()))?;
    encoded
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

/// Writes a single plane of values in `[0, 1]` as a grayscale PNG.
pub fn save_gray_plane(
    values: ArrayView1<'_, f64>,
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let geometry = Geometry::new(1, width, height);
    if values.len() != geometry.pixels() {
        return Err(Error::Dimension(format!(
            "plane has {} values for {width}x{height}",
            values.len()
        )));
    }
    // Bypass the intensity floor: a density plane may legitimately be 0.
    let data = values.to_owned().insert_axis(Axis(0));
    save_image(&RawImage { geometry, data }, path)
}

/// Path of the `k`-th density map for an output stem: `<stem>.d<k>.png`.
pub fn density_map_path(stem: &Path, k: usize) -> PathBuf {
    let mut name = stem.as_os_str().to_owned();
    name.push(format!(".d{k}.png"));
    PathBuf::from(name)
}

/// Exports each column of a `p x r` density matrix as `<stem>.d<k>.png`,
/// scaled by its own maximum. Returns the per-component maxima (0 for a dead
/// component, which is written all black).
pub fn save_density_maps(
    densities: ArrayView2<'_, f64>,
    width: usize,
    height: usize,
    stem: &Path,
) -> Result<Vec<f64>> {
    let mut maxima = Vec::with_capacity(densities.ncols());
    for (k, column) in densities.axis_iter(Axis(1)).enumerate() {
        let max = column.iter().cloned().fold(0.0_f64, f64::max);
        let plane = if max > 0.0 {
            column.mapv(|d| d / max)
        } else {
            column.mapv(|_| 0.0)
        };
        save_gray_plane(plane.view(), width, height, density_map_path(stem, k))?;
        maxima.push(max);
    }
    Ok(maxima)
}

/// Splits an image into row-major tiles of at most `tile_size x tile_size`;
/// the last row and column of tiles keep their ragged size.
pub fn tile(img: &RawImage, tile_size: usize) -> Result<Vec<RawImage>> {
    if tile_size == 0 {
        return Err(Error::InvalidTileSize);
    }
    let Geometry {
        channels,
        width,
        height,
    } = img.geometry;
    let mut tiles = Vec::new();
    for y0 in (0..height).step_by(tile_size) {
        for x0 in (0..width).step_by(tile_size) {
            let tw = tile_size.min(width - x0);
            let th = tile_size.min(height - y0);
            let geometry = Geometry::new(channels, tw, th);
            let data = Array2::from_shape_fn((channels, tw * th), |(ch, j)| {
                img.get(ch, x0 + j % tw, y0 + j / tw)
            });
            tiles.push(RawImage { geometry, data });
        }
    }
    Ok(tiles)
}

/// Inverse of [`tile`]. The tile size is taken from the first tile.
pub fn untile(tiles: &[RawImage], geometry: Geometry) -> Result<RawImage> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Empty("no tiles to assemble".into()))?;
    let (tw, th) = (first.width(), first.height());
    if tw == 0 || th == 0 {
        return Err(Error::InvalidTileSize);
    }
    let nx = geometry.width.div_ceil(tw);
    let ny = geometry.height.div_ceil(th);
    if tiles.len() != nx * ny {
        return Err(Error::Dimension(format!(
            "{} tiles for a {}x{} grid",
            tiles.len(),
            nx,
            ny
        )));
    }
    let mut data = Array2::zeros((geometry.channels, geometry.pixels()));
    for (index, t) in tiles.iter().enumerate() {
        let (x0, y0) = ((index % nx) * tw, (index / nx) * th);
        let expected = Geometry::new(
            geometry.channels,
            tw.min(geometry.width - x0),
            th.min(geometry.height - y0),
        );
        if t.geometry != expected {
            return Err(Error::Dimension(format!(
                "tile {index} is {:?}, expected {:?}",
                t.geometry, expected
            )));
        }
        for j in 0..expected.pixels() {
            let (x, y) = (x0 + j % expected.width, y0 + j / expected.width);
            for ch in 0..geometry.channels {
                data[[ch, y * geometry.width + x]] = t.data[[ch, j]];
            }
        }
    }
    Ok(RawImage { geometry, data })
}

/// Mirror index into `0..n` without repeating the edge sample (`-1 -> 1`).
pub(crate) fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let last = n as isize - 1;
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

/// Per-channel `k x k` median filter with reflect padding. `k` must be odd.
pub fn median_filter(img: &RawImage, k: usize) -> Result<RawImage> {
    if k.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("median kernel {k} is even")));
    }
    let Geometry {
        channels,
        width,
        height,
    } = img.geometry;
    let half = (k / 2) as isize;
    let mut data = Array2::zeros(img.data.dim());
    let mut window = Vec::with_capacity(k * k);
    for ch in 0..channels {
        let plane = img.data.row(ch);
        for y in 0..height {
            for x in 0..width {
                window.clear();
                for dy in -half..=half {
                    let yy = reflect(y as isize + dy, height);
                    for dx in -half..=half {
                        let xx = reflect(x as isize + dx, width);
                        window.push(plane[yy * width + xx]);
                    }
                }
                let mid = window.len() / 2;
                let (_, median, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
                data[[ch, y * width + x]] = *median;
            }
        }
    }
    Ok(RawImage {
        geometry: img.geometry,
        data,
    })
}

/// Normalized 1-D Gaussian taps of odd length `k`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let half = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let t = i as f64 - half;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &RawImage, k: usize, sigma: f64) -> Result<RawImage> {
    if k.is_multiple_of(2) || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gaussian kernel {k} / sigma {sigma}"
        )));
    }
    let taps = gaussian_kernel(k, sigma);
    let half = (k / 2) as isize;
    let Geometry {
        channels,
        width,
        height,
    } = img.geometry;
    let mut horizontal = Array2::zeros(img.data.dim());
    let mut data = Array2::zeros(img.data.dim());
    for ch in 0..channels {
        let plane = img.data.row(ch);
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - half, width);
                    acc += w * plane[y * width + xx];
                }
                horizontal[[ch, y * width + x]] = acc;
            }
        }
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - half, height);
                    acc += w * horizontal[[ch, yy * width + x]];
                }
                data[[ch, y * width + x]] = acc;
            }
        }
    }
    RawImage::new(img.geometry, data)
}

/// Median filter (k = 11) followed by a Gaussian blur (k = 21, sigma = 1).
pub fn denoise(img: &RawImage) -> Result<RawImage> {
    if img.width() < MEDIAN_KERNEL || img.height() < MEDIAN_KERNEL {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MEDIAN_KERNEL,
        });
    }
    let median = median_filter(img, MEDIAN_KERNEL)?;
    gaussian_blur(&median, GAUSSIAN_KERNEL, GAUSSIAN_SIGMA)
}
