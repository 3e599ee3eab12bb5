//! Sparse NMF with unit-norm stain columns:
//! `min ½‖x0 1^T - X - S D^T‖² + λ ‖D‖₁` s.t. `‖s_i‖ = 1`, `S, D >= 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{percentile, StainBasis};
use crate::error::{Error, Result};
use crate::imagery::OpticalDensityImage;
use crate::prox::EPS_TAU;
use crate::unroll::random_unit_columns;

/// Step halvings tried before an S update is rejected outright.
const MAX_BACKTRACKS: usize = 40;
const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseNmfResult {
    pub x0: Array1<f64>,
    pub basis: StainBasis,
    /// `p x r`.
    pub densities: Array2<f64>,
    /// Objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl SparseNmfResult {
    /// `‖x0 1^T - X - S D^T‖_F / ‖x0 1^T - X‖_F`.
    pub fn relative_residual(&self, x: &OpticalDensityImage) -> f64 {
        let shifted = shift(self.x0.view(), x.data());
        let res = &shifted - &self.basis.stains.dot(&self.densities.t());
        let num = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

fn shift(x0: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.mapv(|v| -v);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(x0.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    out
}

pub fn sparse_nmf_objective(
    x0: ArrayView1<'_, f64>,
    stains: ArrayView2<'_, f64>,
    densities: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    lambda: f64,
) -> f64 {
    let res = shift(x0, x) - stains.dot(&densities.t());
    0.5 * res.iter().map(|v| v * v).sum::<f64>() + lambda * densities.iter().map(|v| v.abs()).sum::<f64>()
}

/// Moves each column's norm into the matching density column and unit
/// normalizes it; a column that vanished keeps its previous direction and
/// gets zero density.
fn renormalize(stains: &mut Array2<f64>, densities: &mut Array2<f64>, previous: ArrayView2<'_, f64>) {
    for i in 0..stains.ncols() {
        let norm = {
            let s = stains.column(i);
            s.dot(&s).sqrt()
        };
        if norm > 0.0 {
            stains.column_mut(i).mapv_inplace(|v| v / norm);
            densities.column_mut(i).mapv_inplace(|v| v * norm);
        } else {
            stains.column_mut(i).assign(&previous.column(i));
            densities.column_mut(i).fill(0.0);
        }
    }
}

/// `1 / λ_max(G)` for a Gram matrix `G`, guarded like [`safe_step_size`];
/// never smaller than the Frobenius-norm step.
fn lipschitz_step(gram: ArrayView2<'_, f64>) -> f64 {
    let r = gram.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(r, r, |i, j| gram[[i, j]]));
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    1.0 / top.max(EPS_TAU)
}

pub fn sparse_nmf_decompose(
    x: &OpticalDensityImage,
    rank: usize,
    lambda: f64,
    iterations: usize,
) -> Result<SparseNmfResult> {
    sparse_nmf_decompose_seeded(x, rank, lambda, iterations, DEFAULT_SEED)
}

pub fn sparse_nmf_decompose_seeded(
    x: &OpticalDensityImage,
    rank: usize,
    lambda: f64,
    iterations: usize,
    seed: u64,
) -> Result<SparseNmfResult> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let xd = x.data();
    let (c, p) = xd.dim();
    let mut x0 = Array1::zeros(c);
    let mut stains = random_unit_columns(c, rank, seed);
    let mut dens = Array2::zeros((p, rank));
    let mut current = sparse_nmf_objective(x0.view(), stains.view(), dens.view(), xd, lambda);
    let mut trace = vec![current];

    for _ in 0..iterations {
        x0 = (&xd + &stains.dot(&dens.t())).sum_axis(Axis(1)) / p as f64;

        // Projected ISTA step on D.
        let gram = stains.t().dot(&stains);
        let tau = lipschitz_step(gram.view());
        let mut grad = dens.dot(&gram) + xd.t().dot(&stains);
        grad -= &x0.dot(&stains).insert_axis(Axis(0));
        dens.scaled_add(-tau, &grad);
        dens.mapv_inplace(|v| (v - tau * lambda).max(0.0));
        current = sparse_nmf_objective(x0.view(), stains.view(), dens.view(), xd, lambda);

        // Projected gradient on S, then renormalization. Moving the column norm
        // into D can raise the l1 term, so the step is backtracked until the
        // objective does not increase.
        let gram = dens.t().dot(&dens);
        let col_sums = dens.sum_axis(Axis(0));
        let mut grad = stains.dot(&gram) + xd.dot(&dens);
        for (mut row, &b) in grad.axis_iter_mut(Axis(0)).zip(x0.iter()) {
            row.scaled_add(-b, &col_sums);
        }
        let mut tau = lipschitz_step(gram.view());
        for _ in 0..MAX_BACKTRACKS {
            let mut cand_s = (&stains - &(&grad * tau)).mapv(|v| v.max(0.0));
            let mut cand_d = dens.clone();
            renormalize(&mut cand_s, &mut cand_d, stains.view());
            let value = sparse_nmf_objective(x0.view(), cand_s.view(), cand_d.view(), xd, lambda);
            if value <= current {
                stains = cand_s;
                dens = cand_d;
                current = value;
                break;
            }
            tau *= 0.5;
        }
        trace.push(current);
    }

    let max_densities = dens
        .axis_iter(Axis(1))
        .map(|c| percentile(&c.to_vec(), 99.0))
        .collect();
    Ok(SparseNmfResult {
        x0,
        basis: StainBasis {
            stains,
            max_densities,
        },
        densities: dens,
        objective_trace: trace,
    })
}
