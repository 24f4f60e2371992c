//! Alternating sum-rate maximization.
//!
//! Each outer iteration updates, in order, the auxiliary SINRs `ι`, the
//! quadratic-transform variables `τ`, the precoder `W` and the surface
//! matrices. The surface step depends on the architecture: the dynamic one
//! regroups cells as it goes, the others keep their initial grouping.

pub mod decomposition;
pub mod design;
pub mod fp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bdris::{activated_links, BdRisPair, StructureReport, UNITARY_TOL};
use crate::channel::{trial_rng, ChannelSet, Stream, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::grouping::{FixedStrategy, Grouping};
use crate::linalg::CMat;
use crate::manifold::RcgDiagnostics;

use decomposition::{approximation_gap, compute_decomposition};
use design::{design_dynamic, design_fixed, DesignOptions, InnerRecord};
use fp::{
    effective_channels, sum_rate_from_effective, surrogate_from_effective, update_iota_from_effective,
    update_precoder_from_effective, update_tau_from_effective, zero_forcing, FpState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Diagonal (single-connected) surface.
    SingleConnected,
    /// One group holding every cell.
    FullyConnected,
    /// Fixed grouping laid out on the surface grid.
    GroupConnected(FixedStrategy),
    /// Grouping re-optimized together with the surface.
    DynamicGroupConnected,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::SingleConnected,
        Architecture::FullyConnected,
        Architecture::DynamicGroupConnected,
        Architecture::GroupConnected(FixedStrategy::Horizontal),
        Architecture::GroupConnected(FixedStrategy::Vertical),
        Architecture::GroupConnected(FixedStrategy::Interlaced),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Architecture::SingleConnected => "cw-sc",
            Architecture::FullyConnected => "cw-fc",
            Architecture::DynamicGroupConnected => "cw-dgc",
            Architecture::GroupConnected(FixedStrategy::Horizontal) => "cw-gc-horizontal",
            Architecture::GroupConnected(FixedStrategy::Vertical) => "cw-gc-vertical",
            Architecture::GroupConnected(FixedStrategy::Interlaced) => "cw-gc-interlaced",
        }
    }

    /// Whether the architecture reads `num_groups` from the configuration.
    pub fn uses_groups(self) -> bool {
        matches!(self, Architecture::GroupConnected(_) | Architecture::DynamicGroupConnected)
    }

    pub fn initial_grouping(self, config: &SystemConfig) -> Result<Grouping> {
        let m = config.num_cells;
        match self {
            Architecture::SingleConnected => Ok(Grouping::singletons(m)),
            Architecture::FullyConnected => Ok(Grouping::fully_connected(m)),
            Architecture::DynamicGroupConnected => Grouping::uniform_adjacent(m, config.num_groups),
            Architecture::GroupConnected(s) => {
                Grouping::balanced_strategy(config.grid_rows, config.grid_cols, config.num_groups, s)
            }
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "cw-gc" {
            return Ok(Architecture::GroupConnected(FixedStrategy::Horizontal));
        }
        Architecture::ALL
            .into_iter()
            .find(|a| a.label() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub design: DesignOptions,
    pub max_outer: usize,
    /// Relative sum-rate change that ends the outer loop.
    pub outer_tol: f64,
    /// When false only `ι`, `τ` and `W` are updated; the surface keeps its
    /// initial value.
    pub update_surface: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { design: DesignOptions::default(), max_outer: 100, outer_tol: 1e-4, update_surface: true }
    }
}

/// What happened in one outer iteration. Surrogate values are taken with the
/// surface fixed at its value from the start of the iteration.
#[derive(Clone, Debug)]
pub struct OuterRecord<'a> {
    pub iteration: usize,
    pub surrogate_start: f64,
    pub surrogate_after_iota: f64,
    pub surrogate_after_tau: f64,
    pub surrogate_after_precoder: f64,
    /// Surrogate after the surface step, `W`, `ι`, `τ` unchanged.
    pub surrogate_after_surface: f64,
    pub inner: &'a [InnerRecord],
    pub rcg: &'a [RcgDiagnostics],
    pub bdris: &'a BdRisPair,
    pub state: &'a FpState,
    pub precoder_power: f64,
    pub sum_rate: f64,
    pub structure: StructureReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub architecture: Architecture,
    pub sum_rate: f64,
    pub grouping: Grouping,
    #[serde(skip)]
    pub bdris: BdRisPair,
    #[serde(skip)]
    pub precoder: CMat,
    pub outer_iterations: usize,
    /// RCG iterations of the surface step that produced the returned
    /// surface, one entry per group.
    pub rcg_iterations: Vec<usize>,
    /// Relative weight of the cross-group terms at the returned surface.
    pub approximation_gap: f64,
    pub activated_links: usize,
    pub converged: bool,
    /// Sum-rate after initialization and after every outer iteration.
    pub rate_trace: Vec<f64>,
}

pub fn solve_scenario(
    config: &SystemConfig,
    channels: &ChannelSet,
    arch: Architecture,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    solve_scenario_observed(config, channels, arch, opts, |_| {})
}

/// [`solve_scenario`] with a callback run after every outer iteration.
///
/// The returned result is the iterate with the highest sum-rate seen,
/// initialization included.
pub fn solve_scenario_observed<F>(
    config: &SystemConfig,
    channels: &ChannelSet,
    arch: Architecture,
    opts: &SolveOptions,
    mut observer: F,
) -> Result<SolveResult>
where
    F: FnMut(&OuterRecord<'_>),
{
    config.validate()?;
    opts.design.rcg.validate()?;
    if channels.num_cells() != config.num_cells
        || channels.num_users() != config.num_users
        || channels.num_bs_antennas() != config.num_bs_antennas
    {
        return invalid("channels do not match the configuration");
    }
    let noise = &config.noise_power_mw;
    let power = config.transmit_power_mw;

    let grouping = arch.initial_grouping(config)?;
    let mut rng = trial_rng(config.seed, channels.trial_index, Stream::SurfaceInit);
    let mut pair = BdRisPair::init_diagonal(grouping, &mut rng);
    let heff = effective_channels(channels, &pair);
    let mut state = FpState::tight(&heff, zero_forcing(&heff, power)?, noise);
    let mut rate = sum_rate_from_effective(&heff, &state.precoder, noise);
    check_rate(rate)?;

    let mut trace = vec![rate];
    let mut best = Best { rate, pair: pair.clone(), precoder: state.precoder.clone(), rcg: vec![], gap: f64::NAN };
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_outer {
        iterations = it;
        let heff = effective_channels(channels, &pair);
        let s0 = surrogate_from_effective(&heff, &state, noise);
        state.iota = update_iota_from_effective(&heff, &state, noise);
        let s1 = surrogate_from_effective(&heff, &state, noise);
        state.tau = update_tau_from_effective(&heff, &state, noise);
        let s2 = surrogate_from_effective(&heff, &state, noise);
        state.precoder = update_precoder_from_effective(&heff, &state, power)?;
        let s3 = surrogate_from_effective(&heff, &state, noise);

        let dec = compute_decomposition(channels, &state)?;
        let outcome = if !opts.update_surface {
            None
        } else if arch == Architecture::DynamicGroupConnected {
            Some(design_dynamic(&dec, &pair, &opts.design)?)
        } else {
            Some(design_fixed(&dec, &pair, &opts.design)?)
        };
        let (inner, rcg) = match outcome {
            Some(o) => {
                pair = o.bdris;
                pair = design::refine_exact(&dec, &pair, &opts.design)?;
                (o.records, o.rcg)
            }
            None => (vec![], vec![]),
        };
        let gap = approximation_gap(&pair, &dec);

        let heff = effective_channels(channels, &pair);
        let s4 = surrogate_from_effective(&heff, &state, noise);
        let new_rate = sum_rate_from_effective(&heff, &state.precoder, noise);
        check_rate(new_rate)?;
        observer(&OuterRecord {
            iteration: it,
            surrogate_start: s0,
            surrogate_after_iota: s1,
            surrogate_after_tau: s2,
            surrogate_after_precoder: s3,
            surrogate_after_surface: s4,
            inner: &inner,
            rcg: &rcg,
            bdris: &pair,
            state: &state,
            precoder_power: state.precoder.norm_squared(),
            sum_rate: new_rate,
            structure: pair.validate_structure(UNITARY_TOL),
        });
        trace.push(new_rate);
        if new_rate > best.rate || best.gap.is_nan() {
            best = Best { rate: new_rate, pair: pair.clone(), precoder: state.precoder.clone(), rcg, gap };
        }
        let change = (new_rate - rate).abs() / rate.abs().max(1e-12);
        rate = new_rate;
        if change < opts.outer_tol {
            converged = true;
            break;
        }
    }

    let grouping = best.pair.grouping().clone();
    Ok(SolveResult {
        architecture: arch,
        sum_rate: best.rate,
        activated_links: activated_links(&grouping),
        grouping,
        bdris: best.pair,
        precoder: best.precoder,
        outer_iterations: iterations,
        rcg_iterations: best.rcg.iter().map(|d| d.iterations).collect(),
        approximation_gap: best.gap,
        converged,
        rate_trace: trace,
    })
}

struct Best {
    rate: f64,
    pair: BdRisPair,
    precoder: CMat,
    rcg: Vec<RcgDiagnostics>,
    gap: f64,
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("sum-rate became {rate}")))
    }
}
