//! Monte Carlo experiments and their CSV output.
//!
//! An experiment runs every `(sweep value, architecture, trial)` triple.
//! Trial `t` uses channel realization `t` of the scenario seed for every
//! architecture and sweep value, so architectures are compared on identical
//! channels. Jobs run on the rayon pool; results are collected in job order
//! and reduced sequentially, which makes the output independent of the
//! thread count.
//!
//! # CSV schema
//!
//! One header line, then one row per `(sweep value, architecture)` in that
//! nesting order:
//!
//! | column | meaning |
//! |---|---|
//! | `architecture` | label, e.g. `cw-dgc` |
//! | `axis` | `transmit_power_dbm`, `num_groups`, `num_cells` or `none` |
//! | `sweep_value` | value on the axis (`0` for `none`) |
//! | `mean_sum_rate` | bits/s/Hz over successful trials |
//! | `std_sum_rate` | sample standard deviation (`0` for one trial) |
//! | `trials` | trials attempted |
//! | `failures` | trials whose solve returned an error |
//! | `mean_outer_iterations` | |
//! | `mean_activated_links` | |
//! | `mean_approximation_gap` | relative weight of dropped cross-group terms |
//! | `seed` | scenario seed |
//!
//! Floating-point columns use `{:.14e}` (15 significant digits); a row with
//! no successful trial reports `NaN` means.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{db_to_linear, generate_channels, SystemConfig};
use crate::error::{invalid, Result};
use crate::linalg::CMat;
use crate::solver::{solve_scenario, Architecture, SolveOptions, SolveResult};

pub use config::{parse_experiment, parse_system, SystemSection};

pub const CSV_HEADER: [&str; 11] = [
    "architecture",
    "axis",
    "sweep_value",
    "mean_sum_rate",
    "std_sum_rate",
    "trials",
    "failures",
    "mean_outer_iterations",
    "mean_activated_links",
    "mean_approximation_gap",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    /// The base configuration only.
    Fixed,
    TransmitPowerDbm(Vec<f64>),
    NumGroups(Vec<usize>),
    /// Surface sizes on near-square grids. With `cells_per_group` the group
    /// count follows as `M / cells_per_group` (at least 1), otherwise it is
    /// the base value.
    NumCells { values: Vec<usize>, cells_per_group: Option<usize> },
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Fixed => "none",
            SweepAxis::TransmitPowerDbm(_) => "transmit_power_dbm",
            SweepAxis::NumGroups(_) => "num_groups",
            SweepAxis::NumCells { .. } => "num_cells",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Fixed => 1,
            SweepAxis::TransmitPowerDbm(v) => v.len(),
            SweepAxis::NumGroups(v) => v.len(),
            SweepAxis::NumCells { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Configuration and axis value at position `i`.
    pub fn point(&self, base: &SystemConfig, i: usize) -> (SystemConfig, f64) {
        let mut c = base.clone();
        match self {
            SweepAxis::Fixed => (c, 0.0),
            SweepAxis::TransmitPowerDbm(v) => {
                c.transmit_power_mw = db_to_linear(v[i]);
                (c, v[i])
            }
            SweepAxis::NumGroups(v) => {
                c.num_groups = v[i];
                (c, v[i] as f64)
            }
            SweepAxis::NumCells { values, cells_per_group } => {
                let mut c = c.with_cells(values[i]);
                if let Some(per) = cells_per_group {
                    c.num_groups = (values[i] / per).max(1);
                }
                (c, values[i] as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub axis: SweepAxis,
    pub architectures: Vec<Architecture>,
    pub trials: usize,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A single-point comparison of `architectures` on `system`.
    pub fn compare(system: SystemConfig, architectures: Vec<Architecture>, trials: usize) -> Self {
        Self { system, axis: SweepAxis::Fixed, architectures, trials, output: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if self.axis.is_empty() || self.architectures.is_empty() {
            return invalid("sweep values and architectures must be non-empty");
        }
        for i in 0..self.axis.len() {
            let (c, v) = self.axis.point(&self.system, i);
            c.validate().map_err(|e| crate::error::Error::InvalidArgument(format!("at {} = {v}: {e}", self.axis.name())))?;
        }
        Ok(())
    }
}

/// Aggregate over the trials of one `(sweep value, architecture)` pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub architecture: Architecture,
    pub axis: &'static str,
    pub sweep_value: f64,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_outer_iterations: f64,
    pub mean_activated_links: f64,
    pub mean_approximation_gap: f64,
    pub seed: u64,
    /// Per-trial sum-rates in trial order, `NaN` for failures. Not written
    /// to the CSV.
    #[serde(skip)]
    pub sum_rates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Reported after each finished trial.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub architecture: Architecture,
    pub sweep_value: f64,
    pub trial: usize,
    pub failed: bool,
}

#[derive(Clone, Copy)]
struct Outcome {
    sum_rate: f64,
    outer_iterations: usize,
    activated_links: usize,
    approximation_gap: f64,
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &SolveOptions) -> Result<Vec<ExperimentRow>> {
    run_experiment_with(spec, opts, Execution::Parallel, |_| {})
}

/// [`run_experiment`] with a choice of execution and a progress callback.
/// The rows do not depend on `exec`.
pub fn run_experiment_with<F>(spec: &ExperimentSpec, opts: &SolveOptions, exec: Execution, progress: F) -> Result<Vec<ExperimentRow>>
where
    F: Fn(Progress) + Sync,
{
    spec.validate()?;
    let points: Vec<(SystemConfig, f64)> = (0..spec.axis.len()).map(|i| spec.axis.point(&spec.system, i)).collect();
    let jobs: Vec<(usize, usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.architectures.len()).flat_map(move |a| (0..spec.trials).map(move |t| (p, a, t))))
        .collect();
    let done = AtomicUsize::new(0);
    let run = |&(p, a, t): &(usize, usize, usize)| -> Option<Outcome> {
        let (cfg, value) = &points[p];
        let arch = spec.architectures[a];
        let outcome = generate_channels(cfg, t as u64)
            .and_then(|ch| solve_scenario(cfg, &ch, arch, opts))
            .ok()
            .map(|r| Outcome {
                sum_rate: r.sum_rate,
                outer_iterations: r.outer_iterations,
                activated_links: r.activated_links,
                approximation_gap: r.approximation_gap,
            });
        progress(Progress {
            done: done.fetch_add(1, Ordering::Relaxed) + 1,
            total: jobs.len(),
            architecture: arch,
            sweep_value: *value,
            trial: t,
            failed: outcome.is_none(),
        });
        outcome
    };
    let outcomes: Vec<Option<Outcome>> = match exec {
        Execution::Parallel => jobs.par_iter().map(run).collect(),
        Execution::Sequential => jobs.iter().map(run).collect(),
    };

    let archs = spec.architectures.len();
    let rows = outcomes
        .chunks(spec.trials)
        .enumerate()
        .map(|(i, chunk)| aggregate(spec, spec.architectures[i % archs], points[i / archs].1, chunk))
        .collect();
    Ok(rows)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn aggregate(spec: &ExperimentSpec, architecture: Architecture, sweep_value: f64, chunk: &[Option<Outcome>]) -> ExperimentRow {
    let ok: Vec<Outcome> = chunk.iter().flatten().copied().collect();
    let mean_rate = mean(ok.iter().map(|o| o.sum_rate));
    let std = match ok.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => (ok.iter().map(|o| (o.sum_rate - mean_rate).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt(),
    };
    ExperimentRow {
        architecture,
        axis: spec.axis.name(),
        sweep_value,
        mean_sum_rate: mean_rate,
        std_sum_rate: std,
        trials: chunk.len(),
        failures: chunk.len() - ok.len(),
        mean_outer_iterations: mean(ok.iter().map(|o| o.outer_iterations as f64)),
        mean_activated_links: mean(ok.iter().map(|o| o.activated_links as f64)),
        mean_approximation_gap: mean(ok.iter().map(|o| o.approximation_gap)),
        seed: spec.system.seed,
        sum_rates: chunk.iter().map(|o| o.map_or(f64::NAN, |o| o.sum_rate)).collect(),
    }
}

fn float(x: f64) -> String {
    format!("{x:.14e}")
}

pub fn write_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.architecture.label().to_string(),
            r.axis.to_string(),
            r.sweep_value.to_string(),
            float(r.mean_sum_rate),
            float(r.std_sum_rate),
            r.trials.to_string(),
            r.failures.to_string(),
            float(r.mean_outer_iterations),
            float(r.mean_activated_links),
            float(r.mean_approximation_gap),
            r.seed.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Row-major matrix with `re, im` interleaved along each row.
pub fn interleaved_rows(a: &CMat) -> Vec<Vec<f64>> {
    a.row_iter().map(|row| row.iter().flat_map(|z| [z.re, z.im]).collect()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixDump {
    pub phi_t: Vec<Vec<f64>>,
    pub phi_r: Vec<Vec<f64>>,
    pub precoder: Vec<Vec<f64>>,
}

/// JSON document printed by the `run` subcommand.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: SystemConfig,
    pub trial_index: u64,
    pub result: SolveResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrices: Option<MatrixDump>,
}

/// Solve channel realization `trial_index` of `config` once.
pub fn run_single(config: &SystemConfig, trial_index: u64, arch: Architecture, opts: &SolveOptions, dump_matrices: bool) -> Result<RunReport> {
    let ch = generate_channels(config, trial_index)?;
    let result = solve_scenario(config, &ch, arch, opts)?;
    let matrices = dump_matrices.then(|| MatrixDump {
        phi_t: interleaved_rows(result.bdris.phi_t()),
        phi_r: interleaved_rows(result.bdris.phi_r()),
        precoder: interleaved_rows(&result.precoder),
    });
    Ok(RunReport { config: config.clone(), trial_index, result, matrices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::FixedStrategy;

    fn tiny() -> SystemConfig {
        SystemConfig { num_bs_antennas: 3, num_groups: 2, seed: 5, ..Default::default() }.with_cells(4).with_users(3, 1)
    }

    fn quick() -> SolveOptions {
        SolveOptions { max_outer: 5, ..Default::default() }
    }

    #[test]
    fn rows_follow_point_then_architecture_order() {
        let spec = ExperimentSpec {
            system: tiny(),
            axis: SweepAxis::NumGroups(vec![1, 2, 4]),
            architectures: vec![Architecture::DynamicGroupConnected, Architecture::GroupConnected(FixedStrategy::Vertical)],
            trials: 2,
            output: None,
        };
        let rows = run_experiment(&spec, &quick()).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.sweep_value, r.architecture.label())).collect();
        assert_eq!(
            keys,
            vec![
                (1.0, "cw-dgc"),
                (1.0, "cw-gc-vertical"),
                (2.0, "cw-dgc"),
                (2.0, "cw-gc-vertical"),
                (4.0, "cw-dgc"),
                (4.0, "cw-gc-vertical")
            ]
        );
        for r in &rows {
            assert_eq!((r.trials, r.failures, r.seed, r.axis), (2, 0, 5, "num_groups"));
            assert!(r.mean_sum_rate > 0.0 && r.std_sum_rate >= 0.0);
        }
    }

    #[test]
    fn parallel_and_sequential_runs_agree() {
        let spec = ExperimentSpec::compare(tiny(), Architecture::ALL.to_vec(), 3);
        let par = run_experiment_with(&spec, &quick(), Execution::Parallel, |_| {}).unwrap();
        let seq = run_experiment_with(&spec, &quick(), Execution::Sequential, |_| {}).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&par, &mut a).unwrap();
        write_csv(&seq, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregates_match_hand_computation() {
        let spec = ExperimentSpec::compare(tiny(), vec![Architecture::SingleConnected], 3);
        let row = &run_experiment(&spec, &quick()).unwrap()[0];
        let cfg = tiny();
        let rates: Vec<f64> = (0..3)
            .map(|t| solve_scenario(&cfg, &generate_channels(&cfg, t).unwrap(), Architecture::SingleConnected, &quick()).unwrap().sum_rate)
            .collect();
        assert_eq!(row.sum_rates, rates);
        let m = (rates[0] + rates[1] + rates[2]) / 3.0;
        let var = rates.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 2.0;
        assert!((row.mean_sum_rate - m).abs() <= 1e-12 * m);
        assert!((row.std_sum_rate - var.sqrt()).abs() <= 1e-12 * m);
    }

    #[test]
    fn csv_has_header_and_fixed_precision() {
        let spec = ExperimentSpec::compare(tiny(), vec![Architecture::FullyConnected], 1);
        let rows = run_experiment(&spec, &quick()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), CSV_HEADER.len());
        assert_eq!(&fields[..3], &["cw-fc", "none", "0"]);
        assert_eq!(fields[4], "0.00000000000000e0");
        let mantissa = fields[3].split('e').next().unwrap();
        assert_eq!(mantissa.len(), 16);
    }

    #[test]
    fn invalid_points_are_rejected_up_front() {
        let spec = ExperimentSpec {
            system: tiny(),
            axis: SweepAxis::NumGroups(vec![2, 9]),
            architectures: vec![Architecture::SingleConnected],
            trials: 1,
            output: None,
        };
        assert!(run_experiment(&spec, &quick()).is_err());
    }

    #[test]
    fn cell_sweep_scales_groups() {
        let axis = SweepAxis::NumCells { values: vec![16, 36], cells_per_group: Some(4) };
        let (c, v) = axis.point(&SystemConfig::default(), 0);
        assert_eq!((c.num_cells, c.grid_rows, c.grid_cols, c.num_groups, v), (16, 4, 4, 4, 16.0));
        let (c, _) = axis.point(&SystemConfig::default(), 1);
        assert_eq!((c.num_cells, c.num_groups), (36, 9));
    }

    #[test]
    fn matrix_dump_interleaves_rows() {
        let a = CMat::from_row_slice(1, 2, &[num_complex::Complex64::new(1.0, 2.0), num_complex::Complex64::new(3.0, 4.0)]);
        assert_eq!(interleaved_rows(&a), vec![vec![1.0, 2.0, 3.0, 4.0]]);
    }
}
