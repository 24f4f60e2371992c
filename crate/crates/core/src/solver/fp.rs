//! Fractional-programming blocks: auxiliary variables and the precoder.
//!
//! With `a_kp = h̃_k^H w_p` the surrogate maximized by the alternating
//! updates is
//!
//! ```text
//! Σ_k log2(1 + ι_k) + (1/ln 2) [ −ι_k + 2 Re{τ̃_k* a_kk}
//!                               − |τ_k|² (Σ_p |a_kp|² + σ_k²) ]
//! ```
//!
//! with `τ̃_k = √(1 + ι_k) τ_k`. The non-logarithmic terms carry the `1/ln 2`
//! factor so that, jointly over `ι` and `τ`, the maximum sits at `ι = SINR`
//! and equals the sum-rate in bits. Each update below is the exact maximizer
//! in its own block, so the surrogate never decreases along the sequence.

use std::f64::consts::LN_2;

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;

use crate::bdris::BdRisPair;
use crate::channel::ChannelSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::CMat;

/// Auxiliary vectors and precoder of the reformulated problem.
#[derive(Clone, Debug, PartialEq)]
pub struct FpState {
    pub iota: Vec<f64>,
    pub tau: Vec<Complex64>,
    /// `N × K`, column `k` is `w_k`.
    pub precoder: CMat,
}

impl FpState {
    /// Zero auxiliaries around a given precoder.
    pub fn with_precoder(precoder: CMat) -> Self {
        let k = precoder.ncols();
        Self { iota: vec![0.0; k], tau: vec![Complex64::new(0.0, 0.0); k], precoder }
    }

    /// `ι = SINR` and the matching `τ`, where the surrogate equals the rate.
    pub fn tight(heff: &CMat, precoder: CMat, noise: &[f64]) -> Self {
        let mut st = Self::with_precoder(precoder);
        st.iota = sinr_from_effective(heff, &st.precoder, noise);
        st.tau = update_tau_from_effective(heff, &st, noise);
        st
    }

    pub fn tilde_tau(&self, k: usize) -> Complex64 {
        self.tau[k] * (1.0 + self.iota[k]).sqrt()
    }

    pub fn num_users(&self) -> usize {
        self.precoder.ncols()
    }
}

/// Effective channels `h̃_k`, one per user, as the columns of an `N × K`
/// matrix.
pub fn effective_channels(channels: &ChannelSet, bdris: &BdRisPair) -> CMat {
    let n = channels.num_bs_antennas();
    let k = channels.num_users();
    let mut h = CMat::zeros(n, k);
    for (u, (hk, side)) in channels.ris_user.iter().zip(&channels.user_side).enumerate() {
        h.set_column(u, &bdris.effective_channel(hk, &channels.bs_ris, *side));
    }
    h
}

/// `a_kp = h̃_k^H w_p`.
fn signal_matrix(heff: &CMat, w: &CMat) -> CMat {
    heff.adjoint() * w
}

fn check_noise(noise: &[f64], k: usize) -> Result<()> {
    if noise.len() != k {
        return invalid(format!("{} noise powers for {k} users", noise.len()));
    }
    Ok(())
}

/// Per-user SINR from effective channels.
pub fn sinr_from_effective(heff: &CMat, w: &CMat, noise: &[f64]) -> Vec<f64> {
    let a = signal_matrix(heff, w);
    (0..a.nrows())
        .map(|k| {
            let total: f64 = a.row(k).iter().map(|z| z.norm_sqr()).sum();
            let signal = a[(k, k)].norm_sqr();
            signal / (total - signal + noise[k])
        })
        .collect()
}

pub fn sum_rate_from_effective(heff: &CMat, w: &CMat, noise: &[f64]) -> f64 {
    sinr_from_effective(heff, w, noise).iter().map(|s| (1.0 + s).log2()).sum()
}

/// `Σ_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn sum_rate(channels: &ChannelSet, bdris: &BdRisPair, w: &CMat, noise: &[f64]) -> Result<f64> {
    check_noise(noise, channels.num_users())?;
    if w.shape() != (channels.num_bs_antennas(), channels.num_users()) {
        return invalid(format!("precoder has shape {:?}", w.shape()));
    }
    Ok(sum_rate_from_effective(&effective_channels(channels, bdris), w, noise))
}

pub fn surrogate_from_effective(heff: &CMat, state: &FpState, noise: &[f64]) -> f64 {
    let a = signal_matrix(heff, &state.precoder);
    (0..a.nrows())
        .map(|k| {
            let total: f64 = a.row(k).iter().map(|z| z.norm_sqr()).sum();
            let tau2 = state.tau[k].norm_sqr();
            let linear = -state.iota[k] + 2.0 * (state.tilde_tau(k).conj() * a[(k, k)]).re
                - tau2 * total
                - tau2 * noise[k];
            (1.0 + state.iota[k]).log2() + linear / LN_2
        })
        .sum()
}

/// Value of the fractional-programming surrogate (no block approximation).
pub fn surrogate_objective(
    channels: &ChannelSet,
    bdris: &BdRisPair,
    state: &FpState,
    noise: &[f64],
) -> Result<f64> {
    check_noise(noise, channels.num_users())?;
    Ok(surrogate_from_effective(&effective_channels(channels, bdris), state, noise))
}

/// `ι` maximizing the surrogate with `τ` and `W` fixed. With
/// `c_k = Re{τ_k* a_kk}` the stationary point is
/// `√(1 + ι_k) = (c_k + √(c_k² + 4)) / 2`, clamped to `ι_k ≥ 0`.
///
/// When `τ` is the maximizer for `ι = SINR` this returns `SINR`.
pub fn update_iota_from_effective(heff: &CMat, state: &FpState, _noise: &[f64]) -> Vec<f64> {
    (0..heff.ncols())
        .map(|k| {
            let a_kk = (heff.column(k).adjoint() * state.precoder.column(k))[(0, 0)];
            let c = (state.tau[k].conj() * a_kk).re;
            if c <= 0.0 {
                return 0.0;
            }
            let u = 0.5 * (c + (c * c + 4.0).sqrt());
            (u * u - 1.0).max(0.0)
        })
        .collect()
}

pub fn update_iota(channels: &ChannelSet, bdris: &BdRisPair, state: &FpState, noise: &[f64]) -> Result<Vec<f64>> {
    check_noise(noise, channels.num_users())?;
    Ok(update_iota_from_effective(&effective_channels(channels, bdris), state, noise))
}

/// `τ_k = √(1 + ι_k) a_kk / (Σ_p |a_kp|² + σ_k²)`.
pub fn update_tau_from_effective(heff: &CMat, state: &FpState, noise: &[f64]) -> Vec<Complex64> {
    let a = signal_matrix(heff, &state.precoder);
    (0..a.nrows())
        .map(|k| {
            let total: f64 = a.row(k).iter().map(|z| z.norm_sqr()).sum();
            a[(k, k)] * ((1.0 + state.iota[k]).sqrt() / (total + noise[k]))
        })
        .collect()
}

pub fn update_tau(channels: &ChannelSet, bdris: &BdRisPair, state: &FpState, noise: &[f64]) -> Result<Vec<Complex64>> {
    check_noise(noise, channels.num_users())?;
    Ok(update_tau_from_effective(&effective_channels(channels, bdris), state, noise))
}

/// `w_k = τ̃_k (Σ_p |τ_p|² h̃_p h̃_p^H + μ I)^{-1} h̃_k` with the smallest
/// `μ ≥ 0` meeting `‖W‖_F² ≤ P`.
///
/// The matrix is diagonalized once, so `‖W(μ)‖_F²` is an explicit decreasing
/// function of `μ`. At `μ = 0` a singular matrix is inverted on its range,
/// which is where the right-hand sides live. Otherwise `μ` is bracketed by
/// doubling and refined by bisection until `P(1 − 1e-8) ≤ ‖W‖_F² ≤ P`.
pub fn update_precoder_from_effective(heff: &CMat, state: &FpState, power: f64) -> Result<CMat> {
    if !(power > 0.0) {
        return invalid(format!("transmit power must be positive, got {power}"));
    }
    let (n, k) = heff.shape();
    let mut a = CMat::zeros(n, n);
    let mut b = CMat::zeros(n, k);
    for u in 0..k {
        let h = heff.column(u);
        a += (h * h.adjoint()) * Complex64::from(state.tau[u].norm_sqr());
        b.set_column(u, &(h * state.tilde_tau(u)));
    }
    if b.iter().all(|z| z.norm_sqr() == 0.0) {
        return Ok(CMat::zeros(n, k));
    }
    let a = crate::linalg::herm(&a);
    let eig = SymmetricEigen::new(a);
    let u_mat = eig.eigenvectors;
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let c = u_mat.adjoint() * &b;
    let row_energy: Vec<f64> = (0..n).map(|i| c.row(i).iter().map(|z| z.norm_sqr()).sum()).collect();
    let lmax = lambda.iter().cloned().fold(0.0, f64::max);
    let null = |l: f64| l <= 1e-12 * lmax;

    let build = |mu: f64, drop_null: bool| -> CMat {
        let mut scaled = c.clone();
        for i in 0..n {
            let s = if drop_null && null(lambda[i]) { 0.0 } else { 1.0 / (lambda[i] + mu) };
            scaled.row_mut(i).scale_mut(s);
        }
        &u_mat * scaled
    };
    let norm2 = |mu: f64| -> f64 {
        (0..n).map(|i| row_energy[i] / (lambda[i] + mu).powi(2)).sum()
    };

    if lmax > 0.0 {
        let at_zero: f64 = (0..n).filter(|&i| !null(lambda[i])).map(|i| row_energy[i] / lambda[i].powi(2)).sum();
        if at_zero <= power {
            return Ok(build(0.0, true));
        }
    }

    let mut hi = if lmax > 0.0 { lmax } else { 1.0 };
    let mut lo = 0.0;
    let mut steps = 0;
    while norm2(hi) > power {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 200 || !hi.is_finite() {
            return Err(Error::Numerical(format!(
                "could not bracket the power multiplier (μ = {hi:e}, ‖W‖² = {:e}, P = {power:e})",
                norm2(hi)
            )));
        }
    }
    let mut iters = 0;
    while power - norm2(hi) > 1e-8 * power {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters > 200 {
            return Err(Error::Numerical(format!(
                "power bisection did not converge (bracket [{lo:e}, {hi:e}])"
            )));
        }
    }
    Ok(build(hi, false))
}

pub fn update_precoder(channels: &ChannelSet, bdris: &BdRisPair, state: &FpState, power: f64) -> Result<CMat> {
    update_precoder_from_effective(&effective_channels(channels, bdris), state, power)
}

/// Zero-forcing precoder `pinv(H̃^H)` scaled to `‖W‖_F² = P`. With more users
/// than antennas this is the least-squares inverse.
pub fn zero_forcing(heff: &CMat, power: f64) -> Result<CMat> {
    let ht: CMat = heff.adjoint();
    let w = ht
        .pseudo_inverse(1e-14 * heff.norm().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numerical(format!("zero-forcing pseudo-inverse failed: {e}")))?;
    let norm2 = w.norm_squared();
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return Err(Error::Numerical("zero-forcing precoder is degenerate".into()));
    }
    Ok(w * Complex64::from((power / norm2).sqrt()))
}
