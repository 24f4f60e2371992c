//! Surface design with dynamic grouping.
//!
//! One design call alternates two steps until the grouped objective
//! `Σ_g f_g` settles:
//!
//! 1. a greedy sweep over the cells that moves each cell to the group that
//!    minimizes `Σ_g f_g`, candidates scored per [`CandidateRule`]
//!    ([`grouping_pass`]);
//! 2. an independent Stiefel solve per group, after which the blocks are
//!    placed back into zeroed matrices ([`optimize_blocks`]).
//!
//! `Σ_g f_g` drops the coupling between groups. [`refine_exact`] puts it back:
//! with the grouping fixed it sweeps the groups on the full objective, so the
//! returned surface is a block-wise stationary point of the quantity the
//! outer loop actually sees.

use crate::bdris::{BdRisPair, GroupBlock};
use crate::channel::ChannelSet;
use crate::error::Result;
use crate::grouping::Grouping;
use crate::linalg::{orthonormality_residual, select, CMat};
use crate::manifold::{solve_rcg, QuadraticTraceProblem, RcgDiagnostics, RcgOptions, StiefelPoint};
use num_complex::Complex64;

use super::decomposition::{
    approximate_objective, compute_decomposition, exact_objective, group_objectives, subset_objective,
    DecompositionMatrices,
};
use super::fp::FpState;

/// How each inner iteration seeds the per-group solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestoreMode {
    /// Start from the current matrices' entries on the group's cells,
    /// re-orthonormalized when the grouping changed; the matrices are zeroed
    /// before the new blocks are placed.
    #[default]
    ClearThenRestore,
    /// Discard the current matrices and start every block from `[I; I]/√2`.
    ColdStart,
}

/// How a candidate move is scored in the grouping sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateRule {
    /// Read the candidate groups from the fixed matrices. A moved cell keeps
    /// only its own diagonal entries; its coupling to the new group is zero.
    Reindex,
    /// Re-solve both affected groups from warm starts (at most
    /// `candidate_iters` RCG iterations) and compare the solved values. Every
    /// group is first polished with the same budget so staying and moving are
    /// scored alike.
    #[default]
    Resolve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignOptions {
    pub rcg: RcgOptions,
    /// Relative change of `Σ_g f_g` that ends the inner loop.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub restore: RestoreMode,
    pub candidates: CandidateRule,
    pub candidate_iters: usize,
    /// Block sweeps of [`refine_exact`] after each surface design; 0 disables.
    pub refine_sweeps: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            rcg: RcgOptions::default(),
            inner_tol: 1e-6,
            max_inner: 50,
            restore: RestoreMode::default(),
            candidates: CandidateRule::default(),
            candidate_iters: 5,
            refine_sweeps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupingPass {
    /// Matrices after the sweep, zero outside the new grouping's pattern.
    /// Under [`CandidateRule::Reindex`] the blocks of changed groups are not
    /// unitary until the next block solve.
    pub bdris: BdRisPair,
    pub objective_before: f64,
    pub objective_after: f64,
    pub moves: usize,
}

impl GroupingPass {
    pub fn grouping(&self) -> &Grouping {
        self.bdris.grouping()
    }
}

/// `f̄_{m,g}` for every group `g` under [`CandidateRule::Reindex`]: the
/// grouped objective if cell `m` stayed (`g` = its group) or moved to `g`,
/// with the matrices held fixed.
pub fn candidate_objectives(pair: &BdRisPair, dec: &DecompositionMatrices, m: usize) -> Vec<f64> {
    let values = group_objectives(pair, dec, pair.grouping());
    reindex_candidates(pair, dec, pair.grouping(), &values, m).0
}

/// The `f̄` values plus the objective of the shrunk home group and of each
/// enlarged group.
fn reindex_candidates(
    pair: &BdRisPair,
    dec: &DecompositionMatrices,
    grouping: &Grouping,
    values: &[f64],
    m: usize,
) -> (Vec<f64>, f64, Vec<f64>) {
    let tag = grouping.group_of(m).expect("cell belongs to the grouping");
    let reduced: Vec<usize> = grouping.group(tag).iter().copied().filter(|&c| c != m).collect();
    let f_reduced = subset_objective(pair, dec, &reduced);
    let num_groups = grouping.num_groups();
    let mut enlarged_values = vec![f64::NAN; num_groups];
    let mut totals = Vec::with_capacity(num_groups);
    for g in 0..num_groups {
        if g == tag {
            totals.push(values.iter().sum());
            continue;
        }
        let enlarged = with_cell(grouping.group(g), m).1;
        let f_enlarged = subset_objective(pair, dec, &enlarged);
        enlarged_values[g] = f_enlarged;
        totals.push(replaced_sum(values, tag, f_reduced, g, f_enlarged));
    }
    (totals, f_reduced, enlarged_values)
}

/// `d ∪ {m}` (ascending) and the position of `m` in it.
fn with_cell(d: &[usize], m: usize) -> (usize, Vec<usize>) {
    let mut out = d.to_vec();
    let at = out.binary_search(&m).unwrap_err();
    out.insert(at, m);
    (at, out)
}

/// `Σ_p values[p]` in group order with two entries replaced.
fn replaced_sum(values: &[f64], a: usize, va: f64, b: usize, vb: f64) -> f64 {
    (0..values.len()).map(|p| if p == a { va } else if p == b { vb } else { values[p] }).sum()
}

/// Lowest total wins; ties keep `tag`, then favour the lowest index.
fn best_group(totals: &[f64], tag: usize) -> usize {
    let mut best = tag;
    for (g, &t) in totals.iter().enumerate() {
        if t < totals[best] {
            best = g;
        }
    }
    best
}

/// One sweep over the cells in ascending order. A cell whose group has a
/// single member is skipped.
pub fn grouping_pass(pair: &BdRisPair, dec: &DecompositionMatrices, opts: &DesignOptions) -> Result<GroupingPass> {
    let grouping = pair.grouping();
    let movable = grouping.num_groups() > 1 && grouping.groups().iter().any(|d| d.len() > 1);
    if !movable {
        let value = approximate_objective(pair, dec, grouping);
        return Ok(GroupingPass { bdris: pair.clone(), objective_before: value, objective_after: value, moves: 0 });
    }
    match opts.candidates {
        CandidateRule::Reindex => reindex_pass(pair, dec),
        CandidateRule::Resolve => resolve_pass(pair, dec, opts),
    }
}

fn reindex_pass(pair: &BdRisPair, dec: &DecompositionMatrices) -> Result<GroupingPass> {
    let mut current = pair.grouping().clone();
    let mut values = group_objectives(pair, dec, &current);
    let objective_before: f64 = values.iter().sum();
    let mut moves = 0;
    for m in 0..current.num_cells() {
        let tag = current.group_of(m).expect("cell belongs to the grouping");
        if current.group(tag).len() <= 1 {
            continue;
        }
        let (totals, f_reduced, enlarged) = reindex_candidates(pair, dec, &current, &values, m);
        let best = best_group(&totals, tag);
        if best != tag {
            current = current.move_cell(m, tag, best)?;
            values[tag] = f_reduced;
            values[best] = enlarged[best];
            moves += 1;
        }
    }
    let bdris = BdRisPair::new(pair.phi_t().clone(), pair.phi_r().clone(), current)?;
    Ok(GroupingPass { bdris, objective_before, objective_after: values.iter().sum(), moves })
}

/// Stacked `[Φ_t; Φ_r]` block of `d` read from the full matrices.
fn stacked_block(pair: &BdRisPair, d: &[usize]) -> CMat {
    let (t, r) = pair.extract_indices(d);
    GroupBlock::stack(&t, &r).0
}

/// Feasible starting point: `a` itself when its columns are orthonormal to
/// 1e-12, its polar factor otherwise.
fn warm_start(a: CMat) -> Result<StiefelPoint> {
    if orthonormality_residual(&a) <= 1e-12 {
        StiefelPoint::new(a)
    } else {
        StiefelPoint::orthonormalize(&a)
    }
}

/// RCG from `start` on the cells `d`; returns the block and its `f_g`.
fn solve_group(dec: &DecompositionMatrices, d: &[usize], start: CMat, opts: &RcgOptions) -> Result<(CMat, f64)> {
    let problem = dec.group_problem(d)?;
    let (point, _) = solve_rcg(&problem, &warm_start(start)?, opts)?;
    let block = point.into_matrix();
    let value = dec.stacked_objective(d, &block);
    Ok((block, value))
}

/// Drop local index `i` from a stacked `2n × n` block.
fn remove_cell(block: &CMat, i: usize) -> CMat {
    let n = block.ncols();
    let rows: Vec<usize> = (0..2 * n).filter(|&r| r != i && r != n + i).collect();
    let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
    crate::linalg::select(block, &rows, &cols)
}

/// Insert a cell at local index `at` of a stacked `2n × n` block with
/// diagonal entries `t` and `r` and no coupling.
fn insert_cell(block: &CMat, at: usize, t: Complex64, r: Complex64) -> CMat {
    let n = block.ncols();
    let shift = |i: usize| if i < at { i } else { i + 1 };
    let mut out = CMat::zeros(2 * (n + 1), n + 1);
    for c in 0..n {
        for i in 0..n {
            out[(shift(i), shift(c))] = block[(i, c)];
            out[(n + 1 + shift(i), shift(c))] = block[(n + i, c)];
        }
    }
    out[(at, at)] = t;
    out[(n + 1 + at, at)] = r;
    out
}

fn resolve_pass(pair: &BdRisPair, dec: &DecompositionMatrices, opts: &DesignOptions) -> Result<GroupingPass> {
    let cand = RcgOptions { max_iters: opts.candidate_iters.max(1), ..opts.rcg.clone() };
    let mut current = pair.grouping().clone();
    let mut blocks: Vec<CMat> = current.groups().iter().map(|d| stacked_block(pair, d)).collect();
    let mut values: Vec<f64> = current.groups().iter().zip(&blocks).map(|(d, b)| dec.stacked_objective(d, b)).collect();
    let objective_before: f64 = values.iter().sum();

    for (g, d) in current.groups().iter().enumerate() {
        let (b, v) = solve_group(dec, d, blocks[g].clone(), &cand)?;
        if v <= values[g] {
            blocks[g] = b;
            values[g] = v;
        }
    }

    let mut moves = 0;
    for m in 0..current.num_cells() {
        let tag = current.group_of(m).expect("cell belongs to the grouping");
        let home = current.group(tag);
        if home.len() <= 1 {
            continue;
        }
        let local = home.binary_search(&m).expect("groups are sorted");
        let n = home.len();
        let (t_mm, r_mm) = (blocks[tag][(local, local)], blocks[tag][(n + local, local)]);
        let reduced: Vec<usize> = home.iter().copied().filter(|&c| c != m).collect();
        let (b_reduced, f_reduced) = solve_group(dec, &reduced, remove_cell(&blocks[tag], local), &cand)?;

        let stay: f64 = values.iter().sum();
        let mut totals = vec![stay; current.num_groups()];
        let mut enlarged = vec![None; current.num_groups()];
        for g in 0..current.num_groups() {
            if g == tag {
                continue;
            }
            let (at, set) = with_cell(current.group(g), m);
            let (b, f) = solve_group(dec, &set, insert_cell(&blocks[g], at, t_mm, r_mm), &cand)?;
            totals[g] = replaced_sum(&values, tag, f_reduced, g, f);
            enlarged[g] = Some((b, f));
        }
        let best = best_group(&totals, tag);
        if best != tag {
            let (b, f) = enlarged[best].take().expect("candidate was solved");
            current = current.move_cell(m, tag, best)?;
            blocks[tag] = b_reduced;
            values[tag] = f_reduced;
            blocks[best] = b;
            values[best] = f;
            moves += 1;
        }
    }

    let split: Vec<(CMat, CMat)> = blocks.into_iter().map(|b| GroupBlock(b).split()).collect();
    let bdris = BdRisPair::restore(&split, current)?;
    Ok(GroupingPass { bdris, objective_before, objective_after: values.iter().sum(), moves })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSolve {
    /// `(Φ_t,g, Φ_r,g)` per group.
    pub blocks: Vec<(CMat, CMat)>,
    pub diagnostics: Vec<RcgDiagnostics>,
    /// `f_g` at each (feasible) starting block.
    pub start_objectives: Vec<f64>,
    pub final_objectives: Vec<f64>,
}

/// Solve every group's Stiefel sub-problem of `current`'s grouping and split
/// the result into transmissive and reflective halves.
pub fn optimize_blocks(dec: &DecompositionMatrices, current: &BdRisPair, opts: &DesignOptions) -> Result<BlockSolve> {
    let grouping = current.grouping();
    let mut out = BlockSolve {
        blocks: Vec::with_capacity(grouping.num_groups()),
        diagnostics: Vec::with_capacity(grouping.num_groups()),
        start_objectives: Vec::with_capacity(grouping.num_groups()),
        final_objectives: Vec::with_capacity(grouping.num_groups()),
    };
    for d in grouping.groups() {
        let problem = dec.group_problem(d)?;
        let start = match opts.restore {
            RestoreMode::ClearThenRestore => warm_start(stacked_block(current, d))?,
            RestoreMode::ColdStart => StiefelPoint::balanced(d.len()),
        };
        let (point, diag) = solve_rcg(&problem, &start, &opts.rcg)?;
        out.start_objectives.push(dec.stacked_objective(d, start.matrix()));
        out.final_objectives.push(dec.stacked_objective(d, point.matrix()));
        out.diagnostics.push(diag);
        out.blocks.push(GroupBlock(point.into_matrix()).split());
    }
    Ok(out)
}

/// Per inner iteration bookkeeping of [`design_dynamic`].
#[derive(Clone, Debug, PartialEq)]
pub struct InnerRecord {
    pub before_pass: f64,
    pub after_pass: f64,
    pub moves: usize,
    /// `Σ_g f_g` at the feasible starting blocks of the block solve.
    pub before_blocks: f64,
    pub after_blocks: f64,
    /// False when the new grouping and blocks did worse than the previous
    /// iterate and were discarded.
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignOutcome {
    pub bdris: BdRisPair,
    pub inner_iterations: usize,
    /// `Σ_g f_g` after each accepted iteration, starting from the input.
    pub trace: Vec<f64>,
    pub records: Vec<InnerRecord>,
    /// Diagnostics of the block solve that produced `bdris`.
    pub rcg: Vec<RcgDiagnostics>,
}

/// Block solve on a fixed grouping: no grouping sweep, no iterations.
pub fn design_fixed(dec: &DecompositionMatrices, pair: &BdRisPair, opts: &DesignOptions) -> Result<DesignOutcome> {
    let before = approximate_objective(pair, dec, pair.grouping());
    let solve = optimize_blocks(dec, pair, opts)?;
    let bdris = BdRisPair::restore(&solve.blocks, pair.grouping().clone())?;
    let after = approximate_objective(&bdris, dec, bdris.grouping());
    let record = InnerRecord {
        before_pass: before,
        after_pass: before,
        moves: 0,
        before_blocks: solve.start_objectives.iter().sum(),
        after_blocks: solve.final_objectives.iter().sum(),
        accepted: true,
    };
    Ok(DesignOutcome { bdris, inner_iterations: 1, trace: vec![before, after], records: vec![record], rcg: solve.diagnostics })
}

/// Dynamic grouping design starting from `pair` and its grouping.
///
/// Stops when the relative change of `Σ_g f_g` falls below `inner_tol`, after
/// `max_inner` iterations, or when a sweep after the first moves no cell (the
/// blocks are then already solved for that grouping). An iteration that ends
/// above the previous `Σ_g f_g` is discarded in favour of a block solve on the
/// previous grouping, and the loop stops; the trace is therefore
/// non-increasing.
pub fn design_dynamic(dec: &DecompositionMatrices, pair: &BdRisPair, opts: &DesignOptions) -> Result<DesignOutcome> {
    let mut pair = pair.clone();
    let mut current = approximate_objective(&pair, dec, pair.grouping());
    let mut trace = vec![current];
    let mut records = Vec::new();
    let mut rcg = Vec::new();
    let mut iterations = 0;

    for it in 0..opts.max_inner {
        let pass = grouping_pass(&pair, dec, opts)?;
        if it > 0 && pass.moves == 0 {
            break;
        }
        let solve = optimize_blocks(dec, &pass.bdris, opts)?;
        let next = BdRisPair::restore(&solve.blocks, pass.grouping().clone())?;
        let value = approximate_objective(&next, dec, next.grouping());
        let record = InnerRecord {
            before_pass: pass.objective_before,
            after_pass: pass.objective_after,
            moves: pass.moves,
            before_blocks: solve.start_objectives.iter().sum(),
            after_blocks: solve.final_objectives.iter().sum(),
            accepted: value <= current,
        };
        records.push(record.clone());
        if !record.accepted {
            let fallback = design_fixed(dec, &pair, opts)?;
            let fb_value = *fallback.trace.last().expect("trace has two entries");
            if fb_value <= current {
                pair = fallback.bdris;
                rcg = fallback.rcg;
                current = fb_value;
                trace.push(current);
                iterations += 1;
                records.extend(fallback.records);
            }
            break;
        }
        pair = next;
        rcg = solve.diagnostics;
        iterations += 1;
        let done = (current - value).abs() <= opts.inner_tol * current.abs().max(1e-300);
        current = value;
        trace.push(current);
        if done {
            break;
        }
    }
    Ok(DesignOutcome { bdris: pair, inner_iterations: iterations, trace, records, rcg })
}

/// Dynamic grouping design from channels and fixed FP variables: computes the
/// decomposition once, then runs [`design_dynamic`].
pub fn algorithm1(channels: &ChannelSet, state: &FpState, pair: &BdRisPair, opts: &DesignOptions) -> Result<DesignOutcome> {
    let dec = compute_decomposition(channels, state)?;
    design_dynamic(&dec, pair, opts)
}

/// Gauss-Seidel sweeps over the groups on the full objective, cross-group
/// terms included.
///
/// Group `g` sees the others through its linear term: with the remaining
/// blocks fixed, the full objective restricted to `Φ_g` is `f_g` with `X_i`
/// replaced by `X_i − C_i`, `C_i = Σ_{p≠g} Y_{D_g,D_p} Φ_{i,p}^H Z_{i,D_p,D_g}`,
/// plus a constant. Each group solve starts from the current block, so the
/// full objective never increases. Stops after `sweeps` sweeps or when a
/// sweep changes the full objective by less than `inner_tol` relative.
pub fn refine_exact(dec: &DecompositionMatrices, pair: &BdRisPair, opts: &DesignOptions) -> Result<BdRisPair> {
    let sweeps = opts.refine_sweeps;
    if sweeps == 0 || pair.grouping().num_groups() < 2 {
        return Ok(pair.clone());
    }
    let mut phi_t = pair.phi_t().clone();
    let mut phi_r = pair.phi_r().clone();
    let mut value = exact_objective(&phi_t, &phi_r, dec);
    for _ in 0..sweeps {
        let start_value = value;
        for d in pair.grouping().groups() {
            let problem = coupled_problem(dec, &phi_t, &phi_r, d)?;
            let (point, _) = solve_rcg(&problem, &warm_start(stacked_block_of(&phi_t, &phi_r, d))?, &opts.rcg)?;
            let (t, r) = GroupBlock(point.into_matrix()).split();
            for (a, &i) in d.iter().enumerate() {
                for (b, &j) in d.iter().enumerate() {
                    phi_t[(i, j)] = t[(a, b)];
                    phi_r[(i, j)] = r[(a, b)];
                }
            }
        }
        value = exact_objective(&phi_t, &phi_r, dec);
        if (start_value - value).abs() <= opts.inner_tol * value.abs() {
            break;
        }
    }
    BdRisPair::new(phi_t, phi_r, pair.grouping().clone())
}

/// Full objective restricted to the block on `d`, up to a constant.
fn coupled_problem(dec: &DecompositionMatrices, phi_t: &CMat, phi_r: &CMat, d: &[usize]) -> Result<QuadraticTraceProblem> {
    let n = d.len();
    let mut x = CMat::zeros(n, 2 * n);
    for (half, phi, x_full, z_full) in [(0, phi_t, &dec.x_t, &dec.z_t), (1, phi_r, &dec.x_r, &dec.z_r)] {
        let y_rows = dec.y.select_rows(d.iter());
        let z_cols = z_full.select_columns(d.iter());
        let all = &y_rows * phi.adjoint() * &z_cols;
        let own = select(&dec.y, d, d) * select(phi, d, d).adjoint() * select(z_full, d, d);
        x.view_mut((0, half * n), (n, n)).copy_from(&(select(x_full, d, d) - all + own));
    }
    QuadraticTraceProblem::from_blocks(x, select(&dec.y, d, d), select(&dec.z_t, d, d), select(&dec.z_r, d, d))
}

fn stacked_block_of(phi_t: &CMat, phi_r: &CMat, d: &[usize]) -> CMat {
    GroupBlock::stack(&select(phi_t, d, d), &select(phi_r, d, d)).0
}
