//! sRGB <-> CIELAB under D65.
//!
//! Constants are fixed so results are reproducible across implementations:
//! D65 white `(0.95047, 1.0, 1.08883)`, sRGB transfer thresholds
//! `0.04045` / `0.0031308` with exponent 2.4, and the CIE `f` cutoff `(6/29)^3`.

use ndarray::{Array2, ArrayView2};

pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

const DELTA: f64 = 6.0 / 29.0;

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mat_vec(&SRGB_TO_XYZ, lin);
    let fx = f(xyz[0] / D65_WHITE[0]);
    let fy = f(xyz[1] / D65_WHITE[1]);
    let fz = f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        D65_WHITE[0] * f_inv(fx),
        D65_WHITE[1] * f_inv(fy),
        D65_WHITE[2] * f_inv(fz),
    ];
    mat_vec(&XYZ_TO_SRGB, xyz).map(linear_to_srgb)
}

fn map_columns(m: ArrayView2<'_, f64>, op: fn([f64; 3]) -> [f64; 3]) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (j, col) in m.columns().into_iter().enumerate() {
        let v = op([col[0], col[1], col[2]]);
        for ch in 0..3 {
            out[[ch, j]] = v[ch];
        }
    }
    out
}

/// Converts a `3 x p` sRGB matrix (values in `[0, 1]`) to LAB.
pub fn rgb_to_lab(rgb: ArrayView2<'_, f64>) -> Array2<f64> {
    map_columns(rgb, rgb_to_lab_pixel)
}

/// Converts a `3 x p` LAB matrix back to (unclamped) sRGB.
pub fn lab_to_rgb(lab: ArrayView2<'_, f64>) -> Array2<f64> {
    map_columns(lab, lab_to_rgb_pixel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = rgb_to_lab_pixel([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-3);
        assert!(w[1].abs() < 1e-2 && w[2].abs() < 1e-2);
        let k = rgb_to_lab_pixel([0.0, 0.0, 0.0]);
        assert!(k.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_is_tight() {
        for r in 0..=10 {
            for g in 0..=10 {
                for b in 0..=10 {
                    let rgb = [r as f64 / 10.0, g as f64 / 10.0, b as f64 / 10.0];
                    let back = lab_to_rgb_pixel(rgb_to_lab_pixel(rgb));
                    for ch in 0..3 {
                        assert!((back[ch] - rgb[ch]).abs() < 1e-5, "{rgb:?} -> {back:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn known_red() {
        // sRGB red under D65: L* 53.24, a* 80.09, b* 67.20.
        let lab = rgb_to_lab_pixel([1.0, 0.0, 0.0]);
        assert!((lab[0] - 53.24).abs() < 0.01);
        assert!((lab[1] - 80.09).abs() < 0.01);
        assert!((lab[2] - 67.20).abs() < 0.01);
    }
}
