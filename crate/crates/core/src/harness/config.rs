//! TOML experiment files.
//!
//! ```toml
//! [system]                 # every key optional, defaults shown
//! num_bs_antennas = 6
//! num_users = 6
//! num_reflective = 3
//! num_cells = 36
//! num_groups = 12
//! grid_rows = 6            # both or neither; default is the near-square grid
//! grid_cols = 6
//! transmit_power_dbm = 38.0
//! noise_power_dbm = -80.0
//! ref_gain_db = -30.0
//! ref_distance = 1.0
//! dist_bs_ris = 100.0
//! dist_ris_user = 10.0
//! pathloss_exp_bi = 2.2
//! pathloss_exp_iu = 2.8
//! rician_factor = 2.0
//! seed = 0
//!
//! [sweep]
//! axis = "num_groups"      # "transmit_power_dbm" | "num_groups" | "num_cells"
//! values = [4, 12, 16]
//! cells_per_group = 4      # num_cells axis only: G = M / cells_per_group
//!
//! [experiment]
//! architectures = ["cw-sc", "cw-gc-horizontal", "cw-dgc", "cw-fc"]
//! trials = 100
//! output = "groups.csv"    # optional; stdout when absent
//! ```
//!
//! Unknown keys are errors. Errors carry the 1-based line of the offending
//! key when it can be located.

use std::path::PathBuf;

use serde::Deserialize;

use super::{ExperimentSpec, SweepAxis};
use crate::channel::{db_to_linear, near_square_grid, SystemConfig};
use crate::error::{Error, Result};
use crate::solver::Architecture;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    system: SystemSection,
    sweep: Option<SweepSection>,
    #[serde(default)]
    experiment: ExperimentSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub num_bs_antennas: usize,
    pub num_users: usize,
    pub num_reflective: usize,
    pub num_cells: usize,
    pub num_groups: usize,
    pub grid_rows: Option<usize>,
    pub grid_cols: Option<usize>,
    pub transmit_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub ref_gain_db: f64,
    pub ref_distance: f64,
    pub dist_bs_ris: f64,
    pub dist_ris_user: f64,
    pub pathloss_exp_bi: f64,
    pub pathloss_exp_iu: f64,
    pub rician_factor: f64,
    pub seed: u64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let c = SystemConfig::default();
        Self {
            num_bs_antennas: c.num_bs_antennas,
            num_users: c.num_users,
            num_reflective: c.num_reflective,
            num_cells: c.num_cells,
            num_groups: c.num_groups,
            grid_rows: None,
            grid_cols: None,
            transmit_power_dbm: 38.0,
            noise_power_dbm: -80.0,
            ref_gain_db: -30.0,
            ref_distance: c.ref_distance,
            dist_bs_ris: c.dist_bs_ris,
            dist_ris_user: c.dist_ris_user,
            pathloss_exp_bi: c.pathloss_exp_bi,
            pathloss_exp_iu: c.pathloss_exp_iu,
            rician_factor: c.rician_factor,
            seed: c.seed,
        }
    }
}

impl SystemSection {
    /// Linear-unit configuration; grid keys must come in pairs.
    pub fn to_config(&self) -> std::result::Result<SystemConfig, (&'static str, String)> {
        let (grid_rows, grid_cols) = match (self.grid_rows, self.grid_cols) {
            (Some(r), Some(c)) => (r, c),
            (None, None) => near_square_grid(self.num_cells),
            _ => return Err(("grid_rows", "grid_rows and grid_cols must be given together".into())),
        };
        let config = SystemConfig {
            num_bs_antennas: self.num_bs_antennas,
            num_users: self.num_users,
            num_reflective: self.num_reflective,
            num_cells: self.num_cells,
            num_groups: self.num_groups,
            grid_rows,
            grid_cols,
            transmit_power_mw: db_to_linear(self.transmit_power_dbm),
            noise_power_mw: vec![db_to_linear(self.noise_power_dbm); self.num_users],
            ref_gain: db_to_linear(self.ref_gain_db),
            ref_distance: self.ref_distance,
            dist_bs_ris: self.dist_bs_ris,
            dist_ris_user: self.dist_ris_user,
            pathloss_exp_bi: self.pathloss_exp_bi,
            pathloss_exp_iu: self.pathloss_exp_iu,
            rician_factor: self.rician_factor,
            seed: self.seed,
        };
        config.validate().map_err(|e| ("system", e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AxisName {
    TransmitPowerDbm,
    NumGroups,
    NumCells,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: AxisName,
    values: Vec<f64>,
    cells_per_group: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentSection {
    architectures: Vec<Architecture>,
    trials: usize,
    output: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { architectures: Architecture::ALL.to_vec(), trials: 100, output: None }
    }
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn config_error(text: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config { line: line_of(text, key), message: format!("{key}: {}", message.into()) }
}

fn counts(text: &str, values: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(config_error(text, "values", format!("{v} is not a positive integer")))
            }
        })
        .collect()
}

fn parse_file(text: &str) -> Result<(File, SystemConfig)> {
    let file: File = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
        message: e.message().trim().to_string(),
    })?;
    let system = file.system.to_config().map_err(|(key, msg)| config_error(text, key, msg))?;
    Ok((file, system))
}

/// The `[system]` section of a file; other sections are checked for syntax
/// and unknown keys but may be absent.
pub fn parse_system(text: &str) -> Result<SystemConfig> {
    parse_file(text).map(|(_, system)| system)
}

/// Parse and check an experiment file.
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    let (file, system) = parse_file(text)?;
    let Some(s) = file.sweep else {
        return Err(Error::Config { line: None, message: "missing [sweep] section".into() });
    };
    if s.values.is_empty() {
        return Err(config_error(text, "values", "sweep list is empty"));
    }
    if s.cells_per_group.is_some() && !matches!(s.axis, AxisName::NumCells) {
        return Err(config_error(text, "cells_per_group", "only valid with axis = \"num_cells\""));
    }
    let axis = match s.axis {
        AxisName::TransmitPowerDbm => {
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(config_error(text, "values", format!("{v} is not a finite power")));
            }
            SweepAxis::TransmitPowerDbm(s.values)
        }
        AxisName::NumGroups => SweepAxis::NumGroups(counts(text, &s.values)?),
        AxisName::NumCells => {
            if s.cells_per_group == Some(0) {
                return Err(config_error(text, "cells_per_group", "must be positive"));
            }
            SweepAxis::NumCells { values: counts(text, &s.values)?, cells_per_group: s.cells_per_group }
        }
    };

    let e = file.experiment;
    if e.architectures.is_empty() {
        return Err(config_error(text, "architectures", "no architectures listed"));
    }
    if e.trials == 0 {
        return Err(config_error(text, "trials", "must be at least 1"));
    }
    let spec = ExperimentSpec { system, axis, architectures: e.architectures, trials: e.trials, output: e.output };
    spec.validate().map_err(|err| config_error(text, "values", err.to_string()))?;
    Ok(spec)
}
