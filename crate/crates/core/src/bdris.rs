//! The transmissive/reflective matrix pair of a hybrid-mode surface.
//!
//! For a grouping `D_1, .., D_G` both matrices share one zero pattern: entry
//! `(m, n)` may be nonzero only when cells `m` and `n` are in the same group.
//! Stacking the two sub-blocks of a group, `[Φ_t,g; Φ_r,g]`, gives a tall
//! matrix with orthonormal columns, so `Φ_t^H Φ_t + Φ_r^H Φ_r = I` globally.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;

use crate::channel::Side;
use crate::error::{invalid, Error, Result};
use crate::grouping::Grouping;
use crate::linalg::{select, CMat, CVec, ZERO};

/// Default tolerance on the per-group unitary-sum residual.
pub const UNITARY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct BdRisPair {
    phi_t: CMat,
    phi_r: CMat,
    grouping: Grouping,
}

/// A group's stacked block `[Φ_t,g; Φ_r,g]`, `2n × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupBlock(pub CMat);

impl GroupBlock {
    pub fn stack(t: &CMat, r: &CMat) -> Self {
        let n = t.ncols();
        let mut s = CMat::zeros(2 * n, n);
        s.view_mut((0, 0), (n, n)).copy_from(t);
        s.view_mut((n, 0), (n, n)).copy_from(r);
        Self(s)
    }

    /// Top half is transmissive, bottom half reflective.
    pub fn split(&self) -> (CMat, CMat) {
        let n = self.0.ncols();
        (self.0.rows(0, n).into_owned(), self.0.rows(n, n).into_owned())
    }
}

/// Outcome of a structural check.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    /// Largest magnitude found where the grouping requires a zero.
    pub max_off_pattern: f64,
    /// `‖Φ_t,g^H Φ_t,g + Φ_r,g^H Φ_r,g − I‖_F` per group.
    pub group_residuals: Vec<f64>,
    /// `‖Φ_t^H Φ_t + Φ_r^H Φ_r − I‖_F`.
    pub global_residual: f64,
    pub tol: f64,
}

impl StructureReport {
    pub fn is_valid(&self) -> bool {
        self.max_off_pattern == 0.0 && self.max_group_residual() <= self.tol
    }

    pub fn max_group_residual(&self) -> f64 {
        self.group_residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Check raw matrices against the structure implied by `grouping`.
pub fn validate_matrices(
    phi_t: &CMat,
    phi_r: &CMat,
    grouping: &Grouping,
    tol: f64,
) -> StructureReport {
    let m = grouping.num_cells();
    let labels = grouping.labels();
    let mut max_off: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            if labels[i] != labels[j] {
                max_off = max_off.max(phi_t[(i, j)].norm()).max(phi_r[(i, j)].norm());
            }
        }
    }
    let group_residuals = grouping
        .groups()
        .iter()
        .map(|d| {
            let t = select(phi_t, d, d);
            let r = select(phi_r, d, d);
            let n = d.len();
            (t.adjoint() * &t + r.adjoint() * &r - CMat::identity(n, n)).norm()
        })
        .collect();
    let global_residual =
        (phi_t.adjoint() * phi_t + phi_r.adjoint() * phi_r - CMat::identity(m, m)).norm();
    StructureReport { max_off_pattern: max_off, group_residuals, global_residual, tol }
}

impl BdRisPair {
    /// Wrap matrices, zeroing every entry the grouping forbids.
    pub fn new(mut phi_t: CMat, mut phi_r: CMat, grouping: Grouping) -> Result<Self> {
        let m = grouping.num_cells();
        if phi_t.shape() != (m, m) || phi_r.shape() != (m, m) {
            return invalid(format!(
                "expected {m}x{m} matrices, got {:?} and {:?}",
                phi_t.shape(),
                phi_r.shape()
            ));
        }
        let labels = grouping.labels();
        for i in 0..m {
            for j in 0..m {
                if labels[i] != labels[j] {
                    phi_t[(i, j)] = ZERO;
                    phi_r[(i, j)] = ZERO;
                }
            }
        }
        Ok(Self { phi_t, phi_r, grouping })
    }

    /// Diagonal start: every diagonal entry has modulus `1/√2` and an
    /// independent uniform phase (transmissive entries drawn first).
    pub fn init_diagonal<R: Rng + ?Sized>(grouping: Grouping, rng: &mut R) -> Self {
        let m = grouping.num_cells();
        let mut phi_t = CMat::zeros(m, m);
        let mut phi_r = CMat::zeros(m, m);
        for i in 0..m {
            phi_t[(i, i)] = Complex64::from_polar(FRAC_1_SQRT_2, rng.random_range(0.0..2.0 * PI));
        }
        for i in 0..m {
            phi_r[(i, i)] = Complex64::from_polar(FRAC_1_SQRT_2, rng.random_range(0.0..2.0 * PI));
        }
        Self { phi_t, phi_r, grouping }
    }

    pub fn phi_t(&self) -> &CMat {
        &self.phi_t
    }

    pub fn phi_r(&self) -> &CMat {
        &self.phi_r
    }

    pub fn phi(&self, side: Side) -> &CMat {
        match side {
            Side::Transmissive => &self.phi_t,
            Side::Reflective => &self.phi_r,
        }
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    pub fn num_cells(&self) -> usize {
        self.grouping.num_cells()
    }

    pub fn validate_structure(&self, tol: f64) -> StructureReport {
        validate_matrices(&self.phi_t, &self.phi_r, &self.grouping, tol)
    }

    /// Sub-blocks of group `g`, rows and columns in ascending cell order.
    pub fn extract_block(&self, g: usize) -> (CMat, CMat) {
        let d = self.grouping.group(g);
        (select(&self.phi_t, d, d), select(&self.phi_r, d, d))
    }

    /// Sub-blocks for an arbitrary ascending index set, which need not be a
    /// group of the current grouping.
    pub fn extract_indices(&self, d: &[usize]) -> (CMat, CMat) {
        (select(&self.phi_t, d, d), select(&self.phi_r, d, d))
    }

    /// Place per-group blocks into zero matrices.
    pub fn restore(blocks: &[(CMat, CMat)], grouping: Grouping) -> Result<Self> {
        if blocks.len() != grouping.num_groups() {
            return invalid(format!(
                "{} blocks for {} groups",
                blocks.len(),
                grouping.num_groups()
            ));
        }
        let m = grouping.num_cells();
        let mut phi_t = CMat::zeros(m, m);
        let mut phi_r = CMat::zeros(m, m);
        for (g, (t, r)) in blocks.iter().enumerate() {
            let d = grouping.group(g);
            let n = d.len();
            if t.shape() != (n, n) || r.shape() != (n, n) {
                return invalid(format!(
                    "group {g} has {n} cells but blocks are {:?} and {:?}",
                    t.shape(),
                    r.shape()
                ));
            }
            for (a, &i) in d.iter().enumerate() {
                for (b, &j) in d.iter().enumerate() {
                    phi_t[(i, j)] = t[(a, b)];
                    phi_r[(i, j)] = r[(a, b)];
                }
            }
        }
        Ok(Self { phi_t, phi_r, grouping })
    }

    /// `h̃_k` for a user on `side`.
    pub fn effective_channel(&self, h: &CVec, bs_ris: &CMat, side: Side) -> CVec {
        effective_channel(self.phi(side), h, bs_ris)
    }
}

/// `h̃ = (h^H Φ G)^H = G^H Φ^H h`.
pub fn effective_channel(phi: &CMat, h: &CVec, bs_ris: &CMat) -> CVec {
    bs_ris.adjoint() * (phi.adjoint() * h)
}

/// Number of impedance links switched on for a grouping: `Σ_g n_g (2 n_g + 1)`.
pub fn activated_links(grouping: &Grouping) -> usize {
    grouping.groups().iter().map(|d| d.len() * (2 * d.len() + 1)).sum()
}

/// Components needed to build an `M`-cell dynamically grouped surface:
/// `(impedances, switches) = (M(2M+1), 2M(M−1))`.
pub fn hardware_cost(num_cells: usize) -> Result<(usize, usize)> {
    if num_cells == 0 {
        return invalid("a surface needs at least one cell");
    }
    let m = num_cells;
    Ok((m * (2 * m + 1), 2 * m * (m - 1)))
}

/// Dump a matrix as CSV: one line per row, `re,im` pairs interleaved, full
/// round-trip precision.
pub fn write_matrix_csv<W: Write>(a: &CMat, mut out: W) -> Result<()> {
    for i in 0..a.nrows() {
        let line = (0..a.ncols())
            .map(|j| format!("{:e},{:e}", a[(i, j)].re, a[(i, j)].im))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Inverse of [`write_matrix_csv`].
pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<CMat> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() % 2 != 0 {
            return invalid(format!("line {}: odd number of values", lineno + 1));
        }
        rows.push(vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect());
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return invalid("ragged matrix dump");
    }
    Ok(CMat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_normal, trial_rng, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
    }

    /// A random valid pair for `grouping`: each group block is the Q factor of
    /// a random tall matrix.
    fn random_pair(grouping: &Grouping, rng: &mut ChaCha8Rng) -> BdRisPair {
        let blocks: Vec<_> = grouping
            .groups()
            .iter()
            .map(|d| {
                let n = d.len();
                let q = random_cmat(2 * n, n, rng).qr().q();
                GroupBlock(q).split()
            })
            .collect();
        BdRisPair::restore(&blocks, grouping.clone()).unwrap()
    }

    #[test]
    fn init_diagonal_is_feasible_for_any_grouping() {
        let mut rng = trial_rng(9, 0, Stream::SurfaceInit);
        let pair = BdRisPair::init_diagonal(Grouping::singletons(8), &mut rng);
        for i in 0..8 {
            let s = pair.phi_t()[(i, i)].norm_sqr() + pair.phi_r()[(i, i)].norm_sqr();
            assert!((s - 1.0).abs() < 1e-15);
            for j in 0..8 {
                if i != j {
                    assert_eq!(pair.phi_t()[(i, j)], ZERO);
                    assert_eq!(pair.phi_r()[(i, j)], ZERO);
                }
            }
        }
        assert!(pair.validate_structure(1e-12).is_valid());
        let regrouped = BdRisPair::new(
            pair.phi_t().clone(),
            pair.phi_r().clone(),
            Grouping::uniform_adjacent(8, 3).unwrap(),
        )
        .unwrap();
        assert!(regrouped.validate_structure(1e-12).is_valid());
    }

    #[test]
    fn identity_cases() {
        let m = 6;
        let g = Grouping::uniform_adjacent(m, 2).unwrap();
        let half = CMat::identity(m, m) * Complex64::from(FRAC_1_SQRT_2);
        let ok = BdRisPair::new(half.clone(), half, g.clone()).unwrap();
        assert!(ok.validate_structure(UNITARY_TOL).is_valid());
        let bad = BdRisPair::new(CMat::identity(m, m), CMat::identity(m, m), g).unwrap();
        let rep = bad.validate_structure(UNITARY_TOL);
        assert!(!rep.is_valid());
        assert!((rep.global_residual - (m as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn off_pattern_entries_are_reported() {
        let g = Grouping::uniform_adjacent(4, 2).unwrap();
        let mut t = CMat::identity(4, 4) * Complex64::from(FRAC_1_SQRT_2);
        let r = t.clone();
        t[(0, 3)] = Complex64::new(0.25, 0.0);
        let rep = validate_matrices(&t, &r, &g, UNITARY_TOL);
        assert_eq!(rep.max_off_pattern, 0.25);
        assert!(!rep.is_valid());
    }

    #[test]
    fn extract_and_restore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in [
            Grouping::from_subsets(vec![vec![0, 2], vec![1, 3]], 4).unwrap(),
            Grouping::fully_connected(5),
            Grouping::singletons(3),
            Grouping::from_subsets(vec![vec![4, 0], vec![2], vec![1, 3, 5]], 6).unwrap(),
        ] {
            let pair = random_pair(&g, &mut rng);
            let rep = pair.validate_structure(UNITARY_TOL);
            assert!(rep.is_valid(), "{rep:?}");
            assert!(rep.global_residual < UNITARY_TOL * g.num_groups() as f64);
            let blocks: Vec<_> = (0..g.num_groups()).map(|i| pair.extract_block(i)).collect();
            assert_eq!(BdRisPair::restore(&blocks, g.clone()).unwrap(), pair);
        }
    }

    #[test]
    fn restore_places_interlaced_block() {
        let g = Grouping::from_subsets(vec![vec![0, 2], vec![1, 3]], 4).unwrap();
        let a = CMat::from_fn(2, 2, |i, j| Complex64::new((1 + 2 * i + j) as f64, 0.0));
        let b = CMat::from_fn(2, 2, |i, j| Complex64::new(0.0, (1 + 2 * i + j) as f64));
        let pair = BdRisPair::restore(&[(a.clone(), a.clone()), (b.clone(), b)], g).unwrap();
        let t = pair.phi_t();
        assert_eq!(t[(0, 0)].re, 1.0);
        assert_eq!(t[(0, 2)].re, 2.0);
        assert_eq!(t[(2, 0)].re, 3.0);
        assert_eq!(t[(2, 2)].re, 4.0);
        assert_eq!(t[(1, 3)].im, 2.0);
        assert_eq!(t[(0, 1)], ZERO);
        assert_eq!(t[(3, 0)], ZERO);
    }

    #[test]
    fn restore_rejects_bad_dimensions() {
        let g = Grouping::uniform_adjacent(4, 2).unwrap();
        let z = CMat::zeros(2, 2);
        assert!(BdRisPair::restore(&[(z.clone(), z.clone())], g.clone()).is_err());
        let w = CMat::zeros(3, 3);
        assert!(BdRisPair::restore(&[(z.clone(), z.clone()), (w.clone(), w)], g).is_err());
    }

    #[test]
    fn singleton_extract_gives_diagonal_scalars() {
        let mut rng = trial_rng(2, 0, Stream::SurfaceInit);
        let pair = BdRisPair::init_diagonal(Grouping::singletons(4), &mut rng);
        let (t, r) = pair.extract_block(2);
        assert_eq!(t[(0, 0)], pair.phi_t()[(2, 2)]);
        assert_eq!(r[(0, 0)], pair.phi_r()[(2, 2)]);
        let full = BdRisPair::new(pair.phi_t().clone(), pair.phi_r().clone(), Grouping::fully_connected(4)).unwrap();
        assert_eq!(full.extract_block(0).0, *pair.phi_t());
    }

    #[test]
    fn effective_channel_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cmat(5, 1, &mut rng).column(0).into_owned();
        let gm = random_cmat(5, 3, &mut rng);
        let zero = CMat::zeros(5, 5);
        assert!(effective_channel(&zero, &h, &gm).iter().all(|z| *z == ZERO));

        let (hs, phi, g) = (Complex64::new(0.3, -1.2), Complex64::new(0.5, 0.5), Complex64::new(-2.0, 0.7));
        let e = effective_channel(
            &CMat::from_element(1, 1, phi),
            &CVec::from_element(1, hs),
            &CMat::from_element(1, 1, g),
        );
        assert!((e[0] - (hs.conj() * phi * g).conj()).norm() < 1e-15);

        // dense triple product, entry by entry
        let phi = random_cmat(5, 5, &mut rng);
        let e = effective_channel(&phi, &h, &gm);
        for n in 0..3 {
            let mut acc = ZERO;
            for a in 0..5 {
                for b in 0..5 {
                    acc += h[a].conj() * phi[(a, b)] * gm[(b, n)];
                }
            }
            assert!((e[n] - acc.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn link_and_hardware_counts() {
        assert_eq!(activated_links(&Grouping::fully_connected(3)), 21);
        assert_eq!(activated_links(&Grouping::singletons(4)), 12);
        let g = Grouping::from_subsets(vec![vec![0, 2], vec![1]], 3).unwrap();
        assert_eq!(activated_links(&g), 13);
        assert_eq!(hardware_cost(3).unwrap(), (21, 12));
        assert_eq!(hardware_cost(1).unwrap(), (3, 0));
        assert_eq!(hardware_cost(36).unwrap(), (2628, 2520));
        assert!(hardware_cost(0).is_err());
    }

    /// Every set partition of `0..m` into exactly `g` blocks.
    fn partitions(m: usize, g: usize) -> Vec<Vec<Vec<usize>>> {
        fn rec(i: usize, m: usize, g: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
            if i == m {
                if cur.len() == g {
                    out.push(cur.clone());
                }
                return;
            }
            for b in 0..cur.len() {
                cur[b].push(i);
                rec(i + 1, m, g, cur, out);
                cur[b].pop();
            }
            if cur.len() < g {
                cur.push(vec![i]);
                rec(i + 1, m, g, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, m, g, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn activated_links_extremes_by_enumeration() {
        for m in 1..=6 {
            for g in 1..=m {
                let all = partitions(m, g);
                let counts: Vec<usize> = all
                    .iter()
                    .map(|p| activated_links(&Grouping::from_subsets(p.clone(), m).unwrap()))
                    .collect();
                let min = *counts.iter().min().unwrap();
                let max = *counts.iter().max().unwrap();
                // minimum: as balanced as possible; maximum: one big group plus singletons
                assert_eq!(min, activated_links(&Grouping::uniform_adjacent(m, g).unwrap()));
                let big = m - (g - 1);
                assert_eq!(max, big * (2 * big + 1) + 3 * (g - 1));
                assert!(max <= activated_links(&Grouping::fully_connected(m)));
            }
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_cmat(3, 4, &mut rng);
        let mut buf = Vec::new();
        write_matrix_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 8);
        assert_eq!(read_matrix_csv(&buf[..]).unwrap(), a);
    }
}
