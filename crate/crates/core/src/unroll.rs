//! The structured NMF objective and its unrolled alternating proximal
//! gradient solver.
//!
//! The model explains a log-domain image `X` (`c x p`) as
//! `x0 1^T - X ≈ S D^T` with `S` (`c x r`) and `D` (`p x r`) nonnegative, and
//! penalizes each component pair by `λ ‖s_i‖ (γ ‖d_i‖₁ + ‖d_i‖₂)`. The group
//! penalty lets the solver switch off whole components, so `r` can be set
//! above the expected number of stains.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::HeadWeights;
use crate::imagery::{Geometry, OpticalDensityImage, EPS_LOG};
use crate::matrix_serde;
use crate::prox::{prox_density_column, prox_spectrum_column, safe_step_size, ProxThresholds, EPS_TAU};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MONOTONICITY_SLACK: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of components `r`.
    pub rank: usize,
    /// Number of unrolled iterations `K`.
    pub iterations: usize,
    pub eps_tau: f64,
    pub eps_log: f64,
    pub monotonicity_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: DEFAULT_RANK,
            iterations: DEFAULT_ITERATIONS,
            eps_tau: EPS_TAU,
            eps_log: EPS_LOG,
            monotonicity_slack: DEFAULT_MONOTONICITY_SLACK,
        }
    }
}

impl SolverConfig {
    pub fn with_shape(rank: usize, iterations: usize) -> Self {
        SolverConfig {
            rank,
            iterations,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "rank ({}) and iterations ({}) must be at least 1",
                self.rank, self.iterations
            )));
        }
        for (name, v) in [
            ("eps_tau", self.eps_tau),
            ("eps_log", self.eps_log),
            ("monotonicity_slack", self.monotonicity_slack),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything trained end to end: the stain initialization, the two
/// regularization weights and the 1x1 projection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnableParams {
    #[serde(rename = "S_init", with = "matrix_serde")]
    pub stains_init: Array2<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub head: HeadWeights,
}

impl LearnableParams {
    /// Seeded defaults: `S_init` columns uniform on `[0,1]^c` then unit
    /// normalized, `γ = λ = 0.1`, identity-pattern head.
    pub fn seeded(channels: usize, rank: usize, seed: u64) -> Self {
        LearnableParams {
            stains_init: random_unit_columns(channels, rank, seed),
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            head: HeadWeights::identity_pattern(rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.stains_init.ncols()
    }

    pub fn channels(&self) -> usize {
        self.stains_init.nrows()
    }

    /// Projects `S_init`, `γ` and `λ` back onto the nonnegative orthant.
    pub fn clamp_nonneg(&mut self) {
        self.stains_init.mapv_inplace(|v| v.max(0.0));
        self.gamma = self.gamma.max(0.0);
        self.lambda = self.lambda.max(0.0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.stains_init.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("S_init must be finite and nonnegative".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite() && self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma ({}) and lambda ({}) must be finite and nonnegative",
                self.gamma, self.lambda
            )));
        }
        self.head.validate(self.rank())
    }
}

/// `rank` columns drawn uniformly from `[0,1]^channels` and scaled to unit norm.
pub fn random_unit_columns(channels: usize, rank: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Array2::zeros((channels, rank));
    for mut col in s.axis_iter_mut(Axis(1)) {
        col.mapv_inplace(|_| rng.gen::<f64>());
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    s
}

/// Solver output: background, stain colors, densities and the objective after
/// initialization and after every iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StainModel {
    pub x0: Array1<f64>,
    pub stains: Array2<f64>,
    pub densities: Array2<f64>,
    pub objective_trace: Vec<f64>,
}

impl StainModel {
    pub fn rank(&self) -> usize {
        self.stains.ncols()
    }

    /// True when every trace entry is at most its predecessor times `1 + slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + slack))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.stains.iter().chain(self.densities.iter()).all(|&v| v >= 0.0)
    }

    /// `‖x0 1^T - X - S D^T‖_F / ‖x0 1^T - X‖_F`; zero when both vanish.
    pub fn relative_residual(&self, x: &OpticalDensityImage) -> f64 {
        let shifted = centered(self.x0.view(), x.data());
        let residual = &shifted - &self.stains.dot(&self.densities.t());
        let den = frobenius_sq(shifted.view()).sqrt();
        let num = frobenius_sq(residual.view()).sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// Serializable summary (everything but the density matrix).
    pub fn sidecar(&self, geometry: Geometry, params: &LearnableParams, cfg: &SolverConfig) -> Sidecar {
        Sidecar {
            x0: self.x0.to_vec(),
            stains: matrix_serde::to_rows(&self.stains),
            objective_trace: self.objective_trace.clone(),
            effective_rank: effective_rank(self),
            geometry,
            gamma: params.gamma,
            lambda: params.lambda,
            config: cfg.clone(),
            density_max: Vec::new(),
            projection: None,
        }
    }
}

/// Min/max used to rescale a projected image to `[0, 1]` before saving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRange {
    pub min: f64,
    pub max: f64,
}

/// JSON sidecar written next to the per-component density PNGs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub x0: Vec<f64>,
    /// `c x r` stain matrix, row-major.
    #[serde(rename = "S")]
    pub stains: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
    pub effective_rank: usize,
    pub geometry: Geometry,
    pub gamma: f64,
    pub lambda: f64,
    pub config: SolverConfig,
    /// Scale of each `<stem>.d<k>.png`: pixel value 255 corresponds to this density.
    #[serde(default)]
    pub density_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionRange>,
}

fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// `x0 1^T - X`.
fn centered(x0: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.mapv(|v| -v);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(x0.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    out
}

fn column_norm(m: ArrayView2<'_, f64>, i: usize) -> f64 {
    let c = m.column(i);
    c.dot(&c).sqrt()
}

fn check_dims(
    x0: ArrayView1<'_, f64>,
    stains: ArrayView2<'_, f64>,
    densities: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Result<()> {
    let (c, p) = x.dim();
    let r = stains.ncols();
    if x0.len() != c || stains.nrows() != c || densities.dim() != (p, r) {
        return Err(Error::Dimension(format!(
            "x0 {}, S {:?}, D {:?} do not fit image ({c}, {p})",
            x0.len(),
            stains.dim(),
            densities.dim()
        )));
    }
    Ok(())
}

/// `½‖x0 1^T - X - S D^T‖_F² + λ Σ_i ‖s_i‖₂ (γ ‖d_i‖₁ + ‖d_i‖₂)`.
pub fn objective(
    x0: ArrayView1<'_, f64>,
    stains: ArrayView2<'_, f64>,
    densities: ArrayView2<'_, f64>,
    x: &OpticalDensityImage,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    check_dims(x0, stains, densities, x.data())?;
    Ok(objective_unchecked(x0, stains, densities, x.data(), gamma, lambda))
}

fn objective_unchecked(
    x0: ArrayView1<'_, f64>,
    stains: ArrayView2<'_, f64>,
    densities: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    gamma: f64,
    lambda: f64,
) -> f64 {
    let residual = centered(x0, x) - stains.dot(&densities.t());
    let data = 0.5 * frobenius_sq(residual.view());
    let penalty: f64 = (0..stains.ncols())
        .map(|i| {
            let d = densities.column(i);
            let l1: f64 = d.iter().map(|v| v.abs()).sum();
            column_norm(stains, i) * (gamma * l1 + d.dot(&d).sqrt())
        })
        .sum();
    data + lambda * penalty
}

/// One unrolled iteration applied in place: closed-form background, then a
/// proximal gradient step on `D`, then one on `S`.
fn step_in_place(
    x0: &mut Array1<f64>,
    stains: &mut Array2<f64>,
    densities: &mut Array2<f64>,
    x: ArrayView2<'_, f64>,
    gamma: f64,
    lambda: f64,
    eps_tau: f64,
) {
    let p = x.ncols() as f64;
    let r = stains.ncols();

    // x0 = (1/p) (X + S D^T) 1
    let sd = stains.dot(&densities.t());
    *x0 = (&x + &sd).sum_axis(Axis(1)) / p;

    // D <- D - τ [D S^T S + X^T S - 1 x0^T S]
    let tau = safe_step_size(stains.view(), eps_tau);
    let gram = stains.t().dot(stains);
    let xs = x.t().dot(stains);
    let x0s = x0.dot(stains);
    let mut grad = densities.dot(&gram) + &xs;
    grad -= &x0s.insert_axis(Axis(0));
    densities.scaled_add(-tau, &grad);
    for i in 0..r {
        let s_norm = column_norm(stains.view(), i);
        let thresholds = ProxThresholds::new(lambda * gamma * tau * s_norm, lambda * tau * s_norm);
        let col = prox_density_column(densities.column(i), thresholds);
        densities.column_mut(i).assign(&col);
    }

    // S <- S - τ [S D^T D + X D - x0 1^T D]
    let tau = safe_step_size(densities.view(), eps_tau);
    let gram = densities.t().dot(densities);
    let col_sums = densities.sum_axis(Axis(0));
    let mut grad = stains.dot(&gram) + x.dot(densities);
    for (mut row, &b) in grad.axis_iter_mut(Axis(0)).zip(x0.iter()) {
        row.scaled_add(-b, &col_sums);
    }
    stains.scaled_add(-tau, &grad);
    for i in 0..r {
        let d = densities.column(i);
        let l1: f64 = d.iter().map(|v| v.abs()).sum();
        let theta = lambda * tau * (gamma * l1 + d.dot(&d).sqrt());
        let col = prox_spectrum_column(stains.column(i), theta);
        stains.column_mut(i).assign(&col);
    }
}

/// Applies one iteration to `state` and returns the new state. The trace is
/// carried over and extended by the objective of the new state.
pub fn unroll_step(
    state: &StainModel,
    x: &OpticalDensityImage,
    params: &LearnableParams,
    cfg: &SolverConfig,
) -> Result<StainModel> {
    check_dims(state.x0.view(), state.stains.view(), state.densities.view(), x.data())?;
    let mut next = state.clone();
    step_in_place(
        &mut next.x0,
        &mut next.stains,
        &mut next.densities,
        x.data(),
        params.gamma,
        params.lambda,
        cfg.eps_tau,
    );
    next.objective_trace.push(objective_unchecked(
        next.x0.view(),
        next.stains.view(),
        next.densities.view(),
        x.data(),
        params.gamma,
        params.lambda,
    ));
    Ok(next)
}

/// Initial state: `S = S_init`, `D = 0`, `x0 = 0`, trace holding its objective.
pub fn initial_state(x: &OpticalDensityImage, params: &LearnableParams) -> Result<StainModel> {
    let (c, p) = x.data().dim();
    if params.channels() != c {
        return Err(Error::Dimension(format!(
            "S_init has {} rows for a {c}-channel image",
            params.channels()
        )));
    }
    let x0 = Array1::zeros(c);
    let stains = params.stains_init.clone();
    let densities = Array2::zeros((p, params.rank()));
    let start = objective_unchecked(
        x0.view(),
        stains.view(),
        densities.view(),
        x.data(),
        params.gamma,
        params.lambda,
    );
    Ok(StainModel {
        x0,
        stains,
        densities,
        objective_trace: vec![start],
    })
}

/// Runs exactly `cfg.iterations` unrolled iterations from the initial state.
pub fn decompose(x: &OpticalDensityImage, params: &LearnableParams, cfg: &SolverConfig) -> Result<StainModel> {
    cfg.validate()?;
    if params.rank() != cfg.rank {
        return Err(Error::Dimension(format!(
            "S_init has {} columns, config rank is {}",
            params.rank(),
            cfg.rank
        )));
    }
    let mut model = initial_state(x, params)?;
    model.objective_trace.reserve(cfg.iterations);
    for _ in 0..cfg.iterations {
        step_in_place(
            &mut model.x0,
            &mut model.stains,
            &mut model.densities,
            x.data(),
            params.gamma,
            params.lambda,
            cfg.eps_tau,
        );
        model.objective_trace.push(objective_unchecked(
            model.x0.view(),
            model.stains.view(),
            model.densities.view(),
            x.data(),
            params.gamma,
            params.lambda,
        ));
    }
    Ok(model)
}

/// Number of components with both a nonzero density column and a nonzero stain column.
pub fn effective_rank(model: &StainModel) -> usize {
    (0..model.rank())
        .filter(|&i| {
            column_norm(model.densities.view(), i) > 0.0 && column_norm(model.stains.view(), i) > 0.0
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{to_optical_density, RawImage};
    use ndarray::array;

    fn od_from(data: Array2<f64>, width: usize, height: usize) -> OpticalDensityImage {
        let geometry = Geometry::new(data.nrows(), width, height);
        to_optical_density(&RawImage::new(geometry, data).unwrap())
    }

    fn textured(width: usize, height: usize) -> OpticalDensityImage {
        let p = width * height;
        let data = Array2::from_shape_fn((3, p), |(ch, j)| {
            0.25 + 0.7 * (((j * 31 + ch * 7) % 23) as f64 / 22.0)
        });
        od_from(data, width, height)
    }

    #[test]
    fn objective_all_zero() {
        let x = od_from(Array2::ones((3, 4)), 2, 2);
        let v = objective(
            Array1::zeros(3).view(),
            Array2::zeros((3, 2)).view(),
            Array2::zeros((4, 2)).view(),
            &x,
            0.3,
            2.0,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn objective_with_a_vanishing_factor_is_pure_data_term() {
        let x = textured(3, 2);
        let x0 = array![-0.1, -0.4, -0.2];
        let shifted = centered(x0.view(), x.data());
        let expected = 0.5 * shifted.iter().map(|v| v * v).sum::<f64>();
        let s = Array2::from_elem((3, 2), 0.4);
        let d = Array2::from_elem((6, 2), 0.9);
        let zero_s = objective(x0.view(), Array2::zeros((3, 2)).view(), d.view(), &x, 0.5, 3.0).unwrap();
        let zero_d = objective(x0.view(), s.view(), Array2::zeros((6, 2)).view(), &x, 0.5, 3.0).unwrap();
        assert_eq!(zero_s, expected);
        assert_eq!(zero_d, expected);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let x = textured(2, 2);
        let r = objective(
            Array1::zeros(3).view(),
            Array2::zeros((3, 2)).view(),
            Array2::zeros((5, 2)).view(),
            &x,
            0.1,
            0.1,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_image_is_all_background() {
        let data = Array2::from_shape_fn((3, 16), |(ch, _)| [0.8, 0.6, 0.7][ch]);
        let x = od_from(data, 4, 4);
        let params = LearnableParams::seeded(3, 4, 0);
        let model = decompose(&x, &params, &SolverConfig::with_shape(4, 10)).unwrap();
        assert!(model.densities.iter().all(|&v| v == 0.0));
        for ch in 0..3 {
            assert!((model.x0[ch] - x.data()[[ch, 0]]).abs() < 1e-15);
        }
        assert!(model.relative_residual(&x) < 1e-12);
        assert_eq!(effective_rank(&model), 0);
    }

    #[test]
    fn huge_lambda_thresholds_everything() {
        let x = textured(6, 5);
        let mut params = LearnableParams::seeded(3, 4, 1);
        params.lambda = 1e6;
        let model = decompose(&x, &params, &SolverConfig::with_shape(4, 10)).unwrap();
        assert!(model.densities.iter().all(|&v| v == 0.0));
        let mean = x.data().mean_axis(Axis(1)).unwrap();
        for ch in 0..3 {
            assert!((model.x0[ch] - mean[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_background_is_row_mean() {
        let x = textured(5, 4);
        let mut params = LearnableParams::seeded(3, 3, 2);
        params.lambda = 1e4;
        params.gamma = 1.0;
        let cfg = SolverConfig::with_shape(3, 1);
        let state = initial_state(&x, &params).unwrap();
        let next = unroll_step(&state, &x, &params, &cfg).unwrap();
        let mean = x.data().mean_axis(Axis(1)).unwrap();
        for ch in 0..3 {
            assert!((next.x0[ch] - mean[ch]).abs() < 1e-15);
        }
        assert!(next.densities.iter().all(|&v| v == 0.0));
        assert_eq!(next.objective_trace.len(), 2);
    }

    #[test]
    fn decompose_trace_length_and_rank_check() {
        let x = textured(4, 4);
        let params = LearnableParams::seeded(3, 5, 3);
        let model = decompose(&x, &params, &SolverConfig::with_shape(5, 7)).unwrap();
        assert_eq!(model.objective_trace.len(), 8);
        assert!(model.is_nonnegative());
        assert!(decompose(&x, &params, &SolverConfig::with_shape(4, 7)).is_err());
        assert!(decompose(&x, &LearnableParams::seeded(1, 5, 0), &SolverConfig::with_shape(5, 7)).is_err());
    }

    #[test]
    fn effective_rank_counts_live_pairs() {
        let mut model = StainModel {
            x0: Array1::zeros(3),
            stains: Array2::ones((3, 3)),
            densities: Array2::zeros((4, 3)),
            objective_trace: vec![],
        };
        assert_eq!(effective_rank(&model), 0);
        model.densities[[2, 1]] = 0.5;
        assert_eq!(effective_rank(&model), 1);
        model.densities[[0, 2]] = 0.5;
        model.stains.column_mut(2).fill(0.0);
        assert_eq!(effective_rank(&model), 1);
    }

    #[test]
    fn seeded_defaults() {
        let p = LearnableParams::seeded(3, 8, 0);
        assert_eq!(p, LearnableParams::seeded(3, 8, 0));
        assert_ne!(p.stains_init, LearnableParams::seeded(3, 8, 1).stains_init);
        for col in p.stains_init.axis_iter(Axis(1)) {
            assert!((col.dot(&col) - 1.0).abs() < 1e-12);
            assert!(col.iter().all(|&v| v >= 0.0));
        }
        assert_eq!((p.gamma, p.lambda), (0.1, 0.1));
        p.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig::with_shape(0, 3).validate().is_err());
        assert!(SolverConfig::with_shape(2, 0).validate().is_err());
        let cfg = SolverConfig {
            eps_tau: 0.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sidecar_uses_capital_s_and_round_trips() {
        let x = textured(3, 3);
        let params = LearnableParams::seeded(3, 2, 0);
        let cfg = SolverConfig::with_shape(2, 3);
        let model = decompose(&x, &params, &cfg).unwrap();
        let sidecar = model.sidecar(x.geometry(), &params, &cfg);
        let json = serde_json::to_string(&sidecar).unwrap();
        assert!(json.contains("\"S\":[["));
        let back: Sidecar = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sidecar);
    }
}
