//! Proximal operators and step sizes used by the unrolled solver.
//!
//! Both column operators compose a nonnegative projection (with an optional
//! soft threshold) and a block soft-threshold on the Euclidean norm. A column
//! whose post-projection norm does not exceed the block threshold comes out
//! exactly zero.

use ndarray::{Array1, ArrayView1, ArrayView2};

/// Default floor on `||M||_F^2` in [`safe_step_size`].
pub const EPS_TAU: f64 = 1e-8;

/// Thresholds for one column of the density prox.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxThresholds {
    /// Soft threshold applied entrywise before projection (`λγτ‖s_i‖`).
    pub theta_l1: f64,
    /// Block threshold on the projected column norm (`λτ‖s_i‖`).
    pub theta_l2: f64,
}

impl ProxThresholds {
    /// Negative inputs are clamped to zero.
    pub fn new(theta_l1: f64, theta_l2: f64) -> Self {
        ProxThresholds {
            theta_l1: theta_l1.max(0.0),
            theta_l2: theta_l2.max(0.0),
        }
    }
}

/// Scales `u` by `1 - min(‖u‖, theta) / ‖u‖` in place; zero norm gives zero.
fn block_shrink(u: &mut Array1<f64>, theta: f64) {
    let norm = u.dot(u).sqrt();
    if norm <= theta || norm == 0.0 {
        u.fill(0.0);
    } else {
        let scale = 1.0 - theta / norm;
        u.mapv_inplace(|v| v * scale);
    }
}

/// `argmin_{v >= 0} ½‖v - d‖² + theta_l1 ‖v‖₁ + theta_l2 ‖v‖₂`.
pub fn prox_density_column(d: ArrayView1<'_, f64>, t: ProxThresholds) -> Array1<f64> {
    let mut u = d.mapv(|v| (v - t.theta_l1).max(0.0));
    block_shrink(&mut u, t.theta_l2);
    u
}

/// `argmin_{v >= 0} ½‖v - s‖² + theta ‖v‖₂`.
pub fn prox_spectrum_column(s: ArrayView1<'_, f64>, theta: f64) -> Array1<f64> {
    let mut u = s.mapv(|v| v.max(0.0));
    block_shrink(&mut u, theta.max(0.0));
    u
}

/// `1 / max(‖M‖_F², eps_tau)`.
pub fn safe_step_size(m: ArrayView2<'_, f64>, eps_tau: f64) -> f64 {
    let sq: f64 = m.iter().map(|v| v * v).sum();
    1.0 / sq.max(eps_tau)
}
