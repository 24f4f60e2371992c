//! Invariant checks on random instances, run by the `validate` subcommand.
//!
//! Each check draws its instances from its own ChaCha20 stream of the given
//! seed, so a failing instance can be replayed from `(seed, check, index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::bdris::{BdRisPair, UNITARY_TOL};
use crate::channel::{complex_normal, generate_channels, SystemConfig};
use crate::error::Result;
use crate::grouping::Grouping;
use crate::linalg::{herm, CMat};
use crate::manifold::{euclidean_gradient, objective_at, project_tangent, solve_rcg, QuadraticTraceProblem, RcgOptions, StiefelPoint};
use crate::solver::decomposition::{approximate_objective, compute_decomposition, exact_objective};
use crate::solver::fp::{effective_channels, zero_forcing, FpState};
use crate::solver::{solve_scenario_observed, Architecture, SolveOptions};

/// Outcome of one check over all its instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Largest error seen, in the check's own units.
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, instances: 0, failures: 0, worst: 0.0, tol }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        // NaN fails
        if !(err <= self.tol) {
            self.failures += 1;
        }
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn rmat(r: usize, c: usize, rng: &mut ChaCha20Rng) -> CMat {
    CMat::from_fn(r, c, |_, _| complex_normal(rng))
}

fn psd(n: usize, rng: &mut ChaCha20Rng) -> CMat {
    let a = rmat(n, n, rng);
    herm(&(&a * a.adjoint()))
}

fn random_problem(n: usize, rng: &mut ChaCha20Rng) -> Result<QuadraticTraceProblem> {
    QuadraticTraceProblem::from_blocks(rmat(n, 2 * n, rng), psd(n, rng), psd(n, rng), psd(n, rng))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference directional derivative against `⟨∇f, Δ⟩`.
fn gradient_check(seed: u64, instances: usize) -> Result<Check> {
    let mut check = Check::new("euclidean-gradient-finite-difference", 1e-5);
    let mut rng = stream(seed, 0);
    for i in 0..instances {
        let n = 1 + i % 4;
        let p = random_problem(n, &mut rng)?;
        let phi = rmat(2 * n, n, &mut rng);
        let dir = rmat(2 * n, n, &mut rng);
        let h = 1e-5;
        let plus = objective_at(&p, &(&phi + &dir * num_complex::Complex64::from(h)))?;
        let minus = objective_at(&p, &(&phi - &dir * num_complex::Complex64::from(h)))?;
        let fd = (plus - minus) / (2.0 * h);
        let analytic = crate::linalg::re_inner(&euclidean_gradient(&p, &phi)?, &dir);
        check.record(relative(fd, analytic));
    }
    Ok(check)
}

/// With `Y = I` and `Z = I` the minimum is `n − 2‖X‖_*`.
fn procrustes_check(seed: u64, instances: usize) -> Result<Check> {
    let mut check = Check::new("procrustes-oracle", 1e-8);
    let mut rng = stream(seed, 1);
    let opts = RcgOptions { grad_tol: 1e-10, max_iters: 2000, ..Default::default() };
    for i in 0..instances {
        let n = 1 + i % 4;
        let x = rmat(n, 2 * n, &mut rng);
        let nuclear: f64 = x.clone().svd(false, false).singular_values.iter().sum();
        let eye = CMat::identity(n, n);
        let p = QuadraticTraceProblem::from_blocks(x, eye.clone(), eye.clone(), eye)?;
        let start = StiefelPoint::orthonormalize(&rmat(2 * n, n, &mut rng))?;
        let (point, _) = solve_rcg(&p, &start, &opts)?;
        let value = objective_at(&p, point.matrix())?;
        check.record(relative(value, n as f64 - 2.0 * nuclear));
    }
    Ok(check)
}

/// The Riemannian gradient is tangent: `herm(Φ^H ξ) = 0`.
fn tangent_check(seed: u64, instances: usize) -> Result<Check> {
    let mut check = Check::new("tangent-projection", 1e-10);
    let mut rng = stream(seed, 2);
    for i in 0..instances {
        let n = 1 + i % 4;
        let phi = StiefelPoint::orthonormalize(&rmat(2 * n, n, &mut rng))?.into_matrix();
        let xi = project_tangent(&phi, &rmat(2 * n, n, &mut rng));
        check.record(herm(&(phi.adjoint() * &xi)).norm() / xi.norm().max(1.0));
    }
    Ok(check)
}

fn small_config(rng: &mut ChaCha20Rng, seed: u64) -> SystemConfig {
    let m = [4, 8][rng.random_range(0..2)];
    let g = [1, 2, m / 2, m][rng.random_range(0..4)];
    SystemConfig { num_bs_antennas: 4, num_groups: g, seed, ..Default::default() }.with_cells(m).with_users(4, 2)
}

/// Short solves on small surfaces: structure, power and FP monotonicity.
fn solve_checks(seed: u64, instances: usize) -> Result<[Check; 3]> {
    let mut structure = Check::new("surface-structure", UNITARY_TOL);
    let mut power = Check::new("precoder-power", 1e-8);
    let mut monotone = Check::new("fp-block-monotonicity", 1e-8);
    let mut rng = stream(seed, 3);
    let opts = SolveOptions { max_outer: 4, ..Default::default() };
    for i in 0..instances {
        let cfg = small_config(&mut rng, seed ^ i as u64);
        let arch = Architecture::ALL[i % Architecture::ALL.len()];
        let ch = generate_channels(&cfg, i as u64)?;
        let mut worst_drop: f64 = 0.0;
        let result = solve_scenario_observed(&cfg, &ch, arch, &opts, |r| {
            let steps = [r.surrogate_start, r.surrogate_after_iota, r.surrogate_after_tau, r.surrogate_after_precoder];
            for w in steps.windows(2) {
                worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(1.0));
            }
        })?;
        let report = result.bdris.validate_structure(UNITARY_TOL);
        structure.record(if report.is_valid() { report.max_group_residual() } else { f64::INFINITY });
        power.record((result.precoder.norm_squared() - cfg.transmit_power_mw).max(0.0));
        monotone.record(worst_drop.max(0.0));
    }
    Ok([structure, power, monotone])
}

/// Direct double sum, full matrix form and `Σ_g f_g` at one group agree.
fn decomposition_check(seed: u64, instances: usize) -> Result<Check> {
    let mut check = Check::new("decomposition-chain", 1e-10);
    let mut rng = stream(seed, 4);
    for i in 0..instances {
        let mut cfg = small_config(&mut rng, seed ^ i as u64);
        cfg.num_groups = 1;
        let ch = generate_channels(&cfg, i as u64)?;
        let m = cfg.num_cells;
        let stacked = StiefelPoint::orthonormalize(&rmat(2 * m, m, &mut rng))?.into_matrix();
        let blocks = vec![(stacked.rows(0, m).into_owned(), stacked.rows(m, m).into_owned())];
        let pair = BdRisPair::restore(&blocks, Grouping::fully_connected(m))?;
        let heff = effective_channels(&ch, &pair);
        let mut st = FpState::tight(&heff, zero_forcing(&heff, cfg.transmit_power_mw)?, &cfg.noise_power_mw);
        st.precoder = rmat(cfg.num_bs_antennas, cfg.num_users, &mut rng);
        let a = heff.adjoint() * &st.precoder;
        let direct: f64 = (0..cfg.num_users)
            .map(|k| {
                let total: f64 = a.row(k).iter().map(|z| z.norm_sqr()).sum();
                st.tau[k].norm_sqr() * total - 2.0 * (st.tilde_tau(k).conj() * a[(k, k)]).re
            })
            .sum();
        let dec = compute_decomposition(&ch, &st)?;
        let exact = exact_objective(pair.phi_t(), pair.phi_r(), &dec);
        let grouped = approximate_objective(&pair, &dec, pair.grouping());
        let scale = direct.abs().max(exact.abs()).max(1e-300);
        check.record(((direct - exact).abs().max((exact - grouped).abs())) / scale);
    }
    Ok(check)
}

/// Run every check on `instances` random instances each.
pub fn run(seed: u64, instances: usize) -> Result<SelfTestReport> {
    let mut checks = vec![
        gradient_check(seed, instances)?,
        tangent_check(seed, instances)?,
        procrustes_check(seed, instances)?,
        decomposition_check(seed, instances)?,
    ];
    checks.extend(solve_checks(seed, instances)?);
    Ok(SelfTestReport { seed, checks })
}
