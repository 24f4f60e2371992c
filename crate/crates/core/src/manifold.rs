//! Riemannian conjugate gradient on the complex Stiefel manifold.
//!
//! Each group's sub-problem is
//!
//! ```text
//! minimize   f(Φ) = Tr(Φ Y Φ^H Z) − 2 Re Tr(Φ X)
//! subject to Φ^H Φ = I_n,          Φ ∈ C^{2n×n}
//! ```
//!
//! with `Y` (`n×n`) and `Z` (`2n×2n`, block diagonal) Hermitian PSD.
//!
//! Geometry uses the embedded metric `⟨A, B⟩ = Re Tr(A^H B)`:
//!
//! * Euclidean gradient `∇f = 2 (Z Φ Y − X^H)`, so that
//!   `f(Φ + tΔ) = f(Φ) + t ⟨∇f, Δ⟩ + O(t²)`.
//! * Tangent projection `P_Φ(ξ) = ξ − Φ herm(Φ^H ξ)`.
//! * Polar retraction `R_Φ(ξ) = U V^H` where `Φ + ξ = U Σ V^H`.
//! * Vector transport by projection onto the new tangent space.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{herm, is_finite, orthonormality_residual, polar_factor, re_inner, trace_of_product, CMat};

/// Orthonormality tolerance for points on the manifold.
pub const STIEFEL_TOL: f64 = 1e-9;

/// `Tr(Φ Y Φ^H Z) − 2 Re Tr(Φ X)` data for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTraceProblem {
    x: CMat,
    y: CMat,
    z: CMat,
    z_top: CMat,
    z_bottom: CMat,
}

impl QuadraticTraceProblem {
    /// `x` is `n × 2n`, `y` is `n × n`, `z` is `2n × 2n` with zero
    /// off-diagonal `n × n` blocks. `y` and `z` must be Hermitian.
    pub fn new(x: CMat, y: CMat, z: CMat) -> Result<Self> {
        let n = y.nrows();
        if y.shape() != (n, n) || x.shape() != (n, 2 * n) || z.shape() != (2 * n, 2 * n) {
            return invalid(format!(
                "inconsistent shapes: X {:?}, Y {:?}, Z {:?}",
                x.shape(),
                y.shape(),
                z.shape()
            ));
        }
        for (name, a) in [("Y", &y), ("Z", &z)] {
            let skew = (a - a.adjoint()).norm();
            if skew > 1e-12 * a.norm().max(1.0) {
                return invalid(format!("{name} is not Hermitian (skew part {skew:e})"));
            }
        }
        let off = z.view((0, n), (n, n)).iter().chain(z.view((n, 0), (n, n)).iter()).any(|v| v.re != 0.0 || v.im != 0.0);
        if off {
            return invalid("Z must be block diagonal");
        }
        let z_top = z.view((0, 0), (n, n)).into_owned();
        let z_bottom = z.view((n, n), (n, n)).into_owned();
        Ok(Self { x, y, z, z_top, z_bottom })
    }

    /// Assemble from the two diagonal blocks of `Z`.
    pub fn from_blocks(x: CMat, y: CMat, z_top: CMat, z_bottom: CMat) -> Result<Self> {
        let n = y.nrows();
        if z_top.shape() != (n, n) || z_bottom.shape() != (n, n) {
            return invalid("Z blocks must match Y");
        }
        let mut z = CMat::zeros(2 * n, 2 * n);
        z.view_mut((0, 0), (n, n)).copy_from(&z_top);
        z.view_mut((n, n), (n, n)).copy_from(&z_bottom);
        Self::new(x, y, z)
    }

    /// Group size `n`.
    pub fn size(&self) -> usize {
        self.y.nrows()
    }

    pub fn x(&self) -> &CMat {
        &self.x
    }

    pub fn y(&self) -> &CMat {
        &self.y
    }

    pub fn z(&self) -> &CMat {
        &self.z
    }

    fn check(&self, phi: &CMat) -> Result<()> {
        let n = self.size();
        if phi.shape() != (2 * n, n) {
            return invalid(format!("expected a {}x{n} point, got {:?}", 2 * n, phi.shape()));
        }
        Ok(())
    }

    fn z_times(&self, a: &CMat) -> CMat {
        z_times(&self.z_top, &self.z_bottom, a)
    }

    /// Objective and Euclidean gradient at `phi` (shapes assumed checked).
    fn eval(&self, phi: &CMat) -> (f64, CMat) {
        let zpy = self.z_times(phi) * &self.y;
        let quad = re_inner(phi, &zpy);
        let lin = trace_of_product(phi, &self.x).re;
        let grad = (zpy - self.x.adjoint()) * Complex64::from(2.0);
        (quad - 2.0 * lin, grad)
    }

    fn value(&self, phi: &CMat) -> f64 {
        block_value(&self.x, &self.y, &self.z_top, &self.z_bottom, phi)
    }
}

/// `blkdiag(z_top, z_bottom) A`.
fn z_times(z_top: &CMat, z_bottom: &CMat, a: &CMat) -> CMat {
    let n = z_top.nrows();
    let mut out = CMat::zeros(2 * n, a.ncols());
    out.rows_mut(0, n).copy_from(&(z_top * a.rows(0, n)));
    out.rows_mut(n, n).copy_from(&(z_bottom * a.rows(n, n)));
    out
}

/// The objective from unvalidated parts. Shared with the grouped objective so
/// that both produce bit-identical values for the same block.
pub(crate) fn block_value(x: &CMat, y: &CMat, z_top: &CMat, z_bottom: &CMat, phi: &CMat) -> f64 {
    let zpy = z_times(z_top, z_bottom, phi) * y;
    re_inner(phi, &zpy) - 2.0 * trace_of_product(phi, x).re
}

/// A `2n × n` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint(CMat);

impl StiefelPoint {
    pub fn new(phi: CMat) -> Result<Self> {
        if phi.nrows() < phi.ncols() {
            return invalid("a Stiefel point must be tall");
        }
        let res = orthonormality_residual(&phi);
        if !(res <= STIEFEL_TOL) {
            return Err(Error::Precondition(format!("columns not orthonormal (residual {res:e})")));
        }
        Ok(Self(phi))
    }

    /// Project an arbitrary tall matrix onto the manifold (polar factor),
    /// with the same rank-deficiency fallback as [`retract`].
    pub fn orthonormalize(a: &CMat) -> Result<Self> {
        polar_with_fallback(a)
    }

    /// `[I_n; I_n] / √2`.
    pub fn balanced(n: usize) -> Self {
        let s = Complex64::from(std::f64::consts::FRAC_1_SQRT_2);
        Self(CMat::from_fn(2 * n, n, |i, j| if i % n == j { s } else { Complex64::from(0.0) }))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcgOptions {
    /// Stop once the Riemannian gradient norm is at most this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease coefficient, in `(0, 0.5]`.
    pub armijo_coeff: f64,
    /// Backtracking ratio, in `(0, 1)`.
    pub backtrack_ratio: f64,
    /// Trial step used when the local quadratic model along the search
    /// direction has no positive curvature.
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 500,
            armijo_coeff: 1e-4,
            backtrack_ratio: 0.5,
            initial_step: 1.0,
            max_backtracks: 50,
        }
    }
}

impl RcgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return invalid("backtrack_ratio must lie in (0, 1)");
        }
        if !(self.armijo_coeff > 0.0 && self.armijo_coeff <= 0.5) {
            return invalid("armijo_coeff must lie in (0, 0.5]");
        }
        if !(self.grad_tol > 0.0) || self.max_iters == 0 || !(self.initial_step > 0.0) {
            return invalid("grad_tol, max_iters and initial_step must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct RcgDiagnostics {
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Set when a line search exhausted its backtracks; the best iterate so
    /// far is returned.
    pub line_search_failed: bool,
}

pub fn objective(problem: &QuadraticTraceProblem, phi: &StiefelPoint) -> Result<f64> {
    problem.check(phi.matrix())?;
    Ok(problem.value(phi.matrix()))
}

/// Objective at any `2n × n` matrix, on the manifold or not.
pub fn objective_at(problem: &QuadraticTraceProblem, phi: &CMat) -> Result<f64> {
    problem.check(phi)?;
    Ok(problem.value(phi))
}

/// `2 (Z Φ Y − X^H)`.
pub fn euclidean_gradient(problem: &QuadraticTraceProblem, phi: &CMat) -> Result<CMat> {
    problem.check(phi)?;
    Ok(problem.eval(phi).1)
}

/// `ξ − Φ herm(Φ^H ξ)`.
pub fn project_tangent(phi: &CMat, xi: &CMat) -> CMat {
    xi - phi * herm(&(phi.adjoint() * xi))
}

pub fn riemannian_gradient(problem: &QuadraticTraceProblem, phi: &StiefelPoint) -> Result<CMat> {
    let g = euclidean_gradient(problem, phi.matrix())?;
    Ok(project_tangent(phi.matrix(), &g))
}

fn polar_with_fallback(a: &CMat) -> Result<StiefelPoint> {
    let (q, smin) = polar_factor(a)?;
    let scale = a.norm().max(1.0);
    if smin > 1e-12 * scale && orthonormality_residual(&q) <= 1e-12 {
        return Ok(StiefelPoint(q));
    }
    // Rank deficient: nudge along [I_n; I_n] and try once more.
    let n = a.ncols();
    let nudge = StiefelPoint::balanced(n).into_matrix() * Complex64::from(1e-12 * scale);
    let (q, smin) = polar_factor(&(a + nudge))?;
    if smin > 0.0 && orthonormality_residual(&q) <= 1e-12 {
        Ok(StiefelPoint(q))
    } else {
        Err(Error::Numerical(format!("numerically rank-deficient matrix (σ_min = {smin:e})")))
    }
}

/// Polar retraction of `Φ + ξ`.
pub fn retract(phi: &StiefelPoint, xi: &CMat) -> Result<StiefelPoint> {
    if xi.shape() != phi.matrix().shape() {
        return invalid("tangent and point shapes differ");
    }
    if !is_finite(xi) {
        return Err(Error::Numerical("non-finite tangent vector".into()));
    }
    polar_with_fallback(&(phi.matrix() + xi))
}

/// Riemannian conjugate gradient (Polak–Ribière+, Armijo backtracking).
///
/// The direction is reset to steepest descent whenever the PR+ coefficient
/// clips to zero, the direction is not a descent direction, or every `2n·n`
/// iterations. Each line search starts from the minimizer of the second-order
/// model along the direction, `−⟨g, d⟩ / ⟨d, Hess f[d]⟩`, falling back to
/// `initial_step` when that curvature is not positive. Accepted steps never
/// increase the objective.
pub fn solve_rcg(
    problem: &QuadraticTraceProblem,
    start: &StiefelPoint,
    opts: &RcgOptions,
) -> Result<(StiefelPoint, RcgDiagnostics)> {
    opts.validate()?;
    problem.check(start.matrix())?;
    let n = problem.size();
    let reset_period = (2 * n * n).max(1);

    let mut x = start.clone();
    let (mut f, mut egrad) = problem.eval(x.matrix());
    let mut grad = project_tangent(x.matrix(), &egrad);
    let mut gnorm2 = re_inner(&grad, &grad);
    let mut dir = -grad.clone();
    let mut diag = RcgDiagnostics { initial_objective: f, ..Default::default() };

    while gnorm2.sqrt() > opts.grad_tol && diag.iterations < opts.max_iters {
        let mut slope = re_inner(&grad, &dir);
        if !(slope < 0.0) {
            dir = -grad.clone();
            slope = -gnorm2;
        }

        // ⟨d, Hess f[d]⟩ = ⟨d, 2 Z d Y⟩ − ⟨d, d herm(Φ^H ∇f)⟩
        let s = herm(&(x.matrix().adjoint() * &egrad));
        let curvature = 2.0 * re_inner(&dir, &(problem.z_times(&dir) * &problem.y))
            - re_inner(&dir, &(&dir * s));
        let mut alpha = if curvature > 0.0 && curvature.is_finite() {
            -slope / curvature
        } else {
            opts.initial_step
        };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let cand = retract(&x, &(&dir * Complex64::from(alpha)))?;
            let fc = problem.value(cand.matrix());
            if fc <= f + opts.armijo_coeff * alpha * slope && fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= opts.backtrack_ratio;
        }
        let Some((next, fnext)) = accepted else {
            diag.line_search_failed = true;
            break;
        };

        let (_, egrad_next) = problem.eval(next.matrix());
        let grad_next = project_tangent(next.matrix(), &egrad_next);
        let gnorm2_next = re_inner(&grad_next, &grad_next);
        let moved_grad = project_tangent(next.matrix(), &grad);
        let moved_dir = project_tangent(next.matrix(), &dir);
        let mut beta = (re_inner(&grad_next, &(&grad_next - moved_grad)) / gnorm2).max(0.0);
        diag.iterations += 1;
        if diag.iterations.is_multiple_of(reset_period) || !beta.is_finite() {
            beta = 0.0;
        }
        dir = moved_dir * Complex64::from(beta) - &grad_next;

        x = next;
        f = fnext;
        egrad = egrad_next;
        grad = grad_next;
        gnorm2 = gnorm2_next;
    }

    diag.final_objective = f;
    diag.final_grad_norm = gnorm2.sqrt();
    diag.converged = diag.final_grad_norm <= opts.grad_tol;
    Ok((x, diag))
}
