//! Scenario parameters and random channel realizations.
//!
//! The BS–RIS link is Rician with a rank-one line-of-sight component built
//! from half-wavelength uniform-linear-array steering vectors; the RIS–user
//! links are Rayleigh. Large-scale fading follows the distance pathloss
//! `ζ0 (d / d0)^(-ε)`. All powers are linear milliwatts.
//!
//! # Reproducibility
//!
//! Every random draw comes from ChaCha20 (`rand_chacha::ChaCha20Rng`), seeded
//! with `ChaCha20Rng::seed_from_u64(config.seed)` and then moved to a stream
//! number derived from the trial index (see [`trial_rng`]). ChaCha20 is a
//! counter-based generator with a fixed, platform-independent definition, so
//! a `(seed, trial_index)` pair identifies a realization exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{CMat, CVec};

/// Which half-space a user sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Reflective,
    Transmissive,
}

/// Scenario parameters. Powers and gains are linear (mW / ratio).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_bs_antennas: usize,
    pub num_users: usize,
    /// Users `0..num_reflective` are reflective, the rest transmissive.
    pub num_reflective: usize,
    pub num_cells: usize,
    pub num_groups: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub transmit_power_mw: f64,
    /// One entry per user.
    pub noise_power_mw: Vec<f64>,
    pub ref_gain: f64,
    pub ref_distance: f64,
    pub dist_bs_ris: f64,
    pub dist_ris_user: f64,
    pub pathloss_exp_bi: f64,
    pub pathloss_exp_iu: f64,
    pub rician_factor: f64,
    pub seed: u64,
}

/// dBm (or dB) to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl Default for SystemConfig {
    /// The 36-cell reference scenario: 6×6 surface, `N = K = 6`, three users
    /// per side, 12 groups, 38 dBm transmit power and −80 dBm noise.
    fn default() -> Self {
        Self {
            num_bs_antennas: 6,
            num_users: 6,
            num_reflective: 3,
            num_cells: 36,
            num_groups: 12,
            grid_rows: 6,
            grid_cols: 6,
            transmit_power_mw: db_to_linear(38.0),
            noise_power_mw: vec![db_to_linear(-80.0); 6],
            ref_gain: db_to_linear(-30.0),
            ref_distance: 1.0,
            dist_bs_ris: 100.0,
            dist_ris_user: 10.0,
            pathloss_exp_bi: 2.2,
            pathloss_exp_iu: 2.8,
            rician_factor: 2.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn num_transmissive(&self) -> usize {
        self.num_users - self.num_reflective
    }

    pub fn side_of(&self, user: usize) -> Side {
        if user < self.num_reflective {
            Side::Reflective
        } else {
            Side::Transmissive
        }
    }

    /// Replace the surface size, keeping a near-square grid.
    pub fn with_cells(mut self, num_cells: usize) -> Self {
        let (rows, cols) = near_square_grid(num_cells);
        self.num_cells = num_cells;
        self.grid_rows = rows;
        self.grid_cols = cols;
        self
    }

    /// Replace the user count and split, resizing the noise vector with the
    /// first user's noise power.
    pub fn with_users(mut self, num_users: usize, num_reflective: usize) -> Self {
        let noise = self.noise_power_mw.first().copied().unwrap_or(db_to_linear(-80.0));
        self.num_users = num_users;
        self.num_reflective = num_reflective;
        self.noise_power_mw = vec![noise; num_users];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bs_antennas == 0 || self.num_users == 0 || self.num_cells == 0 {
            return invalid("antenna, user and cell counts must be positive");
        }
        if self.num_reflective > self.num_users {
            return invalid(format!(
                "num_reflective = {} exceeds num_users = {}",
                self.num_reflective, self.num_users
            ));
        }
        if self.num_groups == 0 || self.num_groups > self.num_cells {
            return invalid(format!(
                "num_groups = {} must lie in [1, {}]",
                self.num_groups, self.num_cells
            ));
        }
        if self.grid_rows * self.grid_cols != self.num_cells {
            return invalid(format!(
                "grid {}x{} does not hold {} cells",
                self.grid_rows, self.grid_cols, self.num_cells
            ));
        }
        if self.noise_power_mw.len() != self.num_users {
            return invalid(format!(
                "{} noise powers given for {} users",
                self.noise_power_mw.len(),
                self.num_users
            ));
        }
        let positive = [
            ("transmit_power_mw", self.transmit_power_mw),
            ("ref_gain", self.ref_gain),
            ("ref_distance", self.ref_distance),
            ("dist_bs_ris", self.dist_bs_ris),
            ("dist_ris_user", self.dist_ris_user),
            ("pathloss_exp_bi", self.pathloss_exp_bi),
            ("pathloss_exp_iu", self.pathloss_exp_iu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.noise_power_mw.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return invalid("noise powers must be positive and finite");
        }
        if !(self.rician_factor >= 0.0) {
            return invalid("rician_factor must be nonnegative");
        }
        Ok(())
    }
}

/// Factor `m` as `rows × cols` with `rows` the largest divisor not above √m.
pub fn near_square_grid(m: usize) -> (usize, usize) {
    let mut rows = (m as f64).sqrt().floor() as usize;
    while rows > 1 && !m.is_multiple_of(rows) {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, m / rows)
}

/// One channel realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// BS–RIS matrix, `M × N`.
    pub bs_ris: CMat,
    /// RIS–user vectors, `K` vectors of length `M`.
    pub ris_user: Vec<CVec>,
    pub user_side: Vec<Side>,
    pub trial_index: u64,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.ris_user.len()
    }

    pub fn num_cells(&self) -> usize {
        self.bs_ris.nrows()
    }

    pub fn num_bs_antennas(&self) -> usize {
        self.bs_ris.ncols()
    }

    pub fn users_on(&self, side: Side) -> impl Iterator<Item = usize> + '_ {
        self.user_side.iter().enumerate().filter(move |(_, s)| **s == side).map(|(k, _)| k)
    }
}

/// Purpose tag for the per-trial random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Channels = 0,
    SurfaceInit = 1,
}

/// Generator for one trial and purpose: ChaCha20 seeded from `seed`, stream
/// number `2·trial_index + purpose`.
pub fn trial_rng(seed: u64, trial_index: u64, purpose: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial_index.wrapping_mul(2).wrapping_add(purpose as u64));
    rng
}

/// Distance pathloss `ζ0 (d / d0)^(-ε)` as a linear gain.
pub fn pathloss(distance: f64, exponent: f64, ref_gain: f64, ref_distance: f64) -> Result<f64> {
    if !(distance > 0.0) || !(ref_distance > 0.0) {
        return invalid(format!(
            "distances must be positive (d = {distance}, d0 = {ref_distance})"
        ));
    }
    if !(ref_gain > 0.0) {
        return invalid(format!("reference gain must be positive, got {ref_gain}"));
    }
    Ok(ref_gain * (distance / ref_distance).powf(-exponent))
}

/// Circularly symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Half-wavelength ULA steering vector, `exp(jπ n sin θ)`.
pub fn steering_vector(len: usize, angle: f64) -> CVec {
    let phase = PI * angle.sin();
    DVector::from_fn(len, |n, _| Complex64::from_polar(1.0, phase * n as f64))
}

/// Rician matrix `√gain (√(κ/(1+κ)) H_LoS + √(1/(1+κ)) H_NLoS)`.
///
/// `H_LoS = a_r(θ) a_t(ψ)^H` with both angles drawn uniformly in `[0, 2π)`.
/// The angles are drawn first, then the NLoS entries in column-major order.
pub fn draw_rician<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    kappa: f64,
    gain: f64,
    rng: &mut R,
) -> Result<CMat> {
    if !(kappa >= 0.0) {
        return invalid(format!("rician factor must be nonnegative, got {kappa}"));
    }
    if !(gain > 0.0) {
        return invalid(format!("gain must be positive, got {gain}"));
    }
    let theta = rng.random_range(0.0..2.0 * PI);
    let psi = rng.random_range(0.0..2.0 * PI);
    let los = steering_vector(rows, theta) * steering_vector(cols, psi).adjoint();
    let nlos = DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng));
    let w_los = (kappa / (1.0 + kappa)).sqrt();
    let w_nlos = (1.0 / (1.0 + kappa)).sqrt();
    let scale = gain.sqrt();
    Ok((los * Complex64::from(w_los) + nlos * Complex64::from(w_nlos)) * Complex64::from(scale))
}

/// Rayleigh vector with per-entry variance `gain`.
pub fn draw_rayleigh<R: Rng + ?Sized>(len: usize, gain: f64, rng: &mut R) -> Result<CVec> {
    if !(gain > 0.0) {
        return invalid(format!("gain must be positive, got {gain}"));
    }
    let scale = Complex64::from(gain.sqrt());
    Ok(DVector::from_fn(len, |_, _| complex_normal(rng) * scale))
}

/// Channel realization number `trial_index` of the scenario.
pub fn generate_channels(config: &SystemConfig, trial_index: u64) -> Result<ChannelSet> {
    config.validate()?;
    let mut rng = trial_rng(config.seed, trial_index, Stream::Channels);
    let gain_bi = pathloss(
        config.dist_bs_ris,
        config.pathloss_exp_bi,
        config.ref_gain,
        config.ref_distance,
    )?;
    let gain_iu = pathloss(
        config.dist_ris_user,
        config.pathloss_exp_iu,
        config.ref_gain,
        config.ref_distance,
    )?;
    let bs_ris = draw_rician(
        config.num_cells,
        config.num_bs_antennas,
        config.rician_factor,
        gain_bi,
        &mut rng,
    )?;
    let ris_user = (0..config.num_users)
        .map(|_| draw_rayleigh(config.num_cells, gain_iu, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let user_side = (0..config.num_users).map(|k| config.side_of(k)).collect();
    Ok(ChannelSet { bs_ris, ris_user, user_side, trial_index })
}
