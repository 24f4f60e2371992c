//! Quadratic form of the surface sub-problem and its per-group split.
//!
//! With `ι`, `τ`, `W` fixed, the terms of the surrogate that depend on the
//! surface matrices are
//!
//! ```text
//! Σ_k Σ_p |τ_k|² |h_k^H Φ_i g_p|² − 2 Re{τ̃_k* h_k^H Φ_i g_k}
//!   = Σ_{i∈{t,r}} Tr(Φ_i Y Φ_i^H Z_i) − 2 Re Tr(Φ_i X_i)
//! ```
//!
//! (a quantity to be minimized), where `g_k = G w_k`, `Y = Σ_p g_p g_p^H`,
//! `Z_i = Σ_{k∈K_i} |τ_k|² h_k h_k^H` and `X_i = Σ_{k∈K_i} τ̃_k* g_k h_k^H`.
//!
//! The per-group objective `f_g` keeps only the diagonal blocks
//! `Y_{D_g,D_g}`, `Z_{i,D_g,D_g}`; the cross-group terms are dropped.

use crate::bdris::{BdRisPair, GroupBlock};
use crate::channel::{ChannelSet, Side};
use crate::error::{invalid, Result};
use crate::grouping::Grouping;
use crate::linalg::{herm, re_inner, select, trace_of_product, CMat, CVec};
use crate::manifold::{block_value, QuadraticTraceProblem};

use super::fp::FpState;

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionMatrices {
    pub x_t: CMat,
    pub x_r: CMat,
    pub y: CMat,
    pub z_t: CMat,
    pub z_r: CMat,
    /// `g_k = G w_k`.
    pub g: Vec<CVec>,
}

impl DecompositionMatrices {
    pub fn num_cells(&self) -> usize {
        self.y.nrows()
    }

    pub fn x(&self, side: Side) -> &CMat {
        match side {
            Side::Transmissive => &self.x_t,
            Side::Reflective => &self.x_r,
        }
    }

    pub fn z(&self, side: Side) -> &CMat {
        match side {
            Side::Transmissive => &self.z_t,
            Side::Reflective => &self.z_r,
        }
    }

    /// The Stiefel sub-problem of the cells `d` (ascending).
    pub fn group_problem(&self, d: &[usize]) -> Result<QuadraticTraceProblem> {
        let (x, y, z_t, z_r) = self.group_parts(d);
        QuadraticTraceProblem::from_blocks(x, y, z_t, z_r)
    }

    /// `[X_t | X_r]`, `Y`, `Z_t`, `Z_r` restricted to `d`.
    fn group_parts(&self, d: &[usize]) -> (CMat, CMat, CMat, CMat) {
        let n = d.len();
        let mut x = CMat::zeros(n, 2 * n);
        x.view_mut((0, 0), (n, n)).copy_from(&select(&self.x_t, d, d));
        x.view_mut((0, n), (n, n)).copy_from(&select(&self.x_r, d, d));
        (x, select(&self.y, d, d), select(&self.z_t, d, d), select(&self.z_r, d, d))
    }

    /// `f_g` for the cells `d` at the stacked block `[Φ_t; Φ_r]`. Bit-identical
    /// to the Stiefel solver's own objective for the same block.
    pub fn stacked_objective(&self, d: &[usize], stacked: &CMat) -> f64 {
        let (x, y, z_t, z_r) = self.group_parts(d);
        block_value(&x, &y, &z_t, &z_r, stacked)
    }
}

pub fn compute_decomposition(channels: &ChannelSet, state: &FpState) -> Result<DecompositionMatrices> {
    let m = channels.num_cells();
    let k = channels.num_users();
    if state.precoder.shape() != (channels.num_bs_antennas(), k) || state.tau.len() != k || state.iota.len() != k {
        return invalid("FP state does not match the channel dimensions");
    }
    let g: Vec<CVec> = (0..k).map(|u| &channels.bs_ris * state.precoder.column(u)).collect();
    let mut y = CMat::zeros(m, m);
    for gp in &g {
        y += gp * gp.adjoint();
    }
    let mut x_t = CMat::zeros(m, m);
    let mut x_r = CMat::zeros(m, m);
    let mut z_t = CMat::zeros(m, m);
    let mut z_r = CMat::zeros(m, m);
    for u in 0..k {
        let h = &channels.ris_user[u];
        let (x, z) = match channels.user_side[u] {
            Side::Transmissive => (&mut x_t, &mut z_t),
            Side::Reflective => (&mut x_r, &mut z_r),
        };
        *z += (h * h.adjoint()) * num_complex::Complex64::from(state.tau[u].norm_sqr());
        *x += (&g[u] * h.adjoint()) * state.tilde_tau(u).conj();
    }
    Ok(DecompositionMatrices { x_t, x_r, y: herm(&y), z_t: herm(&z_t), z_r: herm(&z_r), g })
}

/// `Tr(Φ Y Φ^H Z) − 2 Re Tr(Φ X)` for square matrices of matching size.
fn side_term(phi: &CMat, y: &CMat, z: &CMat, x: &CMat) -> f64 {
    let zpy = z * phi * y;
    re_inner(phi, &zpy) - 2.0 * trace_of_product(phi, x).re
}

/// Full matrix form of the surface objective, all cross-group terms kept.
pub fn exact_objective(phi_t: &CMat, phi_r: &CMat, dec: &DecompositionMatrices) -> f64 {
    side_term(phi_t, &dec.y, &dec.z_t, &dec.x_t) + side_term(phi_r, &dec.y, &dec.z_r, &dec.x_r)
}

/// `f_g` for the cell set `d`, given the `|d| × |d|` blocks.
pub fn group_objective(t_block: &CMat, r_block: &CMat, dec: &DecompositionMatrices, d: &[usize]) -> f64 {
    dec.stacked_objective(d, &GroupBlock::stack(t_block, r_block).0)
}

/// `f_g` evaluated on the entries of the full matrices selected by `d`,
/// which need not be a group of `pair`'s own grouping.
pub fn subset_objective(pair: &BdRisPair, dec: &DecompositionMatrices, d: &[usize]) -> f64 {
    let (t, r) = pair.extract_indices(d);
    group_objective(&t, &r, dec, d)
}

/// `f_g` for every group of `grouping`, read from `pair`'s matrices.
pub fn group_objectives(pair: &BdRisPair, dec: &DecompositionMatrices, grouping: &Grouping) -> Vec<f64> {
    grouping.groups().iter().map(|d| subset_objective(pair, dec, d)).collect()
}

/// `Σ_g f_g`, summed in group order.
pub fn approximate_objective(pair: &BdRisPair, dec: &DecompositionMatrices, grouping: &Grouping) -> f64 {
    group_objectives(pair, dec, grouping).iter().sum()
}

/// Relative size of the dropped cross-group terms,
/// `|exact − Σ_g f_g| / max(|exact|, 1e-30)`.
pub fn approximation_gap(pair: &BdRisPair, dec: &DecompositionMatrices) -> f64 {
    let exact = exact_objective(pair.phi_t(), pair.phi_r(), dec);
    let approx = approximate_objective(pair, dec, pair.grouping());
    (exact - approx).abs() / exact.abs().max(1e-30)
}
