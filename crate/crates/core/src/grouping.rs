//! Partitions of the surface cells into groups.
//!
//! Cells are indexed row-major over the surface grid. Internally indices are
//! 0-based; the serialized form (list of lists) is 1-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A partition of `{0, .., M-1}` into `G` nonempty, disjoint subsets.
///
/// Each subset is kept in strictly ascending order, which is the index order
/// used when a group's block is placed back into the full matrices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
    num_cells: usize,
}

/// Layouts for fixed (CSI-independent) groupings on a rectangular grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedStrategy {
    /// Contiguous runs in row-major order.
    Horizontal,
    /// Contiguous runs in column-major order.
    Vertical,
    /// Cell `m` joins group `m mod G`.
    Interlaced,
}

impl fmt::Display for FixedStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedStrategy::Horizontal => "horizontal",
            FixedStrategy::Vertical => "vertical",
            FixedStrategy::Interlaced => "interlaced",
        })
    }
}

/// One violated clause of the partition definition. Cell and group numbers
/// are reported 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    GroupCount { expected: usize, found: usize },
    EmptyGroup { group: usize },
    OutOfRange { cell: usize },
    Overlap { cell: usize, groups: Vec<usize> },
    Uncovered { cell: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::GroupCount { expected, found } => {
                write!(f, "expected {expected} groups, found {found}")
            }
            Violation::EmptyGroup { group } => write!(f, "group {group} is empty"),
            Violation::OutOfRange { cell } => write!(f, "cell {cell} is out of range"),
            Violation::Overlap { cell, groups } => {
                write!(f, "cell {cell} appears more than once (groups {groups:?})")
            }
            Violation::Uncovered { cell } => write!(f, "cell {cell} belongs to no group"),
        }
    }
}

/// Check raw subsets against the partition definition. An empty result means
/// the subsets form a valid grouping of `num_cells` cells into `num_groups`
/// groups.
pub fn validate(subsets: &[Vec<usize>], num_cells: usize, num_groups: usize) -> Vec<Violation> {
    let mut report = Vec::new();
    if subsets.len() != num_groups {
        report.push(Violation::GroupCount { expected: num_groups, found: subsets.len() });
    }
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); num_cells];
    for (g, set) in subsets.iter().enumerate() {
        if set.is_empty() {
            report.push(Violation::EmptyGroup { group: g });
        }
        for &m in set {
            if m >= num_cells {
                report.push(Violation::OutOfRange { cell: m });
            } else {
                owners[m].push(g);
            }
        }
    }
    for (m, o) in owners.into_iter().enumerate() {
        match o.len() {
            0 => report.push(Violation::Uncovered { cell: m }),
            1 => {}
            _ => report.push(Violation::Overlap { cell: m, groups: o }),
        }
    }
    report
}

impl Grouping {
    /// Build from 0-based subsets; order within a subset does not matter.
    pub fn from_subsets(subsets: Vec<Vec<usize>>, num_cells: usize) -> Result<Self> {
        let g = subsets.len();
        let report = validate(&subsets, num_cells, g);
        if !report.is_empty() || g == 0 {
            let msg = if g == 0 {
                "a grouping needs at least one group".to_string()
            } else {
                report.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
            };
            return invalid(msg);
        }
        let groups = subsets
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s
            })
            .collect();
        Ok(Self { groups, num_cells })
    }

    /// Balanced contiguous partition. When `G` does not divide `M`, the first
    /// `M mod G` groups get one extra cell.
    pub fn uniform_adjacent(num_cells: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || num_groups > num_cells {
            return invalid(format!("cannot split {num_cells} cells into {num_groups} groups"));
        }
        let base = num_cells / num_groups;
        let extra = num_cells % num_groups;
        let mut start = 0;
        let groups = (0..num_groups)
            .map(|g| {
                let len = base + usize::from(g < extra);
                let set: Vec<usize> = (start..start + len).collect();
                start += len;
                set
            })
            .collect();
        Ok(Self { groups, num_cells })
    }

    pub fn singletons(num_cells: usize) -> Self {
        Self { groups: (0..num_cells).map(|m| vec![m]).collect(), num_cells }
    }

    pub fn fully_connected(num_cells: usize) -> Self {
        Self { groups: vec![(0..num_cells).collect()], num_cells }
    }

    /// Fixed layout on a `rows × cols` grid; `G` must divide `rows·cols`.
    pub fn fixed_strategy(
        rows: usize,
        cols: usize,
        num_groups: usize,
        strategy: FixedStrategy,
    ) -> Result<Self> {
        let m = rows * cols;
        if m == 0 || num_groups == 0 || !m.is_multiple_of(num_groups) {
            return invalid(format!(
                "{num_groups} groups do not evenly divide a {rows}x{cols} grid"
            ));
        }
        Self::balanced_strategy(rows, cols, num_groups, strategy)
    }

    /// [`Grouping::fixed_strategy`] for any `1 ≤ G ≤ rows·cols`. Horizontal
    /// and vertical cut the row- or column-major cell order into contiguous
    /// runs whose sizes follow [`Grouping::uniform_adjacent`]; interlaced
    /// assigns cell `m` to group `m mod G`. Equal to `fixed_strategy` when
    /// `G` divides the cell count.
    pub fn balanced_strategy(
        rows: usize,
        cols: usize,
        num_groups: usize,
        strategy: FixedStrategy,
    ) -> Result<Self> {
        let m = rows * cols;
        let runs = Self::uniform_adjacent(m, num_groups)?;
        let order: Vec<usize> = match strategy {
            FixedStrategy::Horizontal => return Ok(runs),
            FixedStrategy::Vertical => {
                (0..cols).flat_map(|c| (0..rows).map(move |r| r * cols + c)).collect()
            }
            FixedStrategy::Interlaced => {
                let groups = (0..num_groups)
                    .map(|g| (g..m).step_by(num_groups).collect())
                    .collect();
                return Ok(Self { groups, num_cells: m });
            }
        };
        let groups = runs
            .groups
            .iter()
            .map(|run| {
                let mut v: Vec<usize> = run.iter().map(|&i| order[i]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Ok(Self { groups, num_cells: m })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Ascending member list of group `g`.
    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group containing cell `m`.
    pub fn group_of(&self, m: usize) -> Option<usize> {
        self.groups.iter().position(|s| s.binary_search(&m).is_ok())
    }

    /// Group label of every cell.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.num_cells];
        for (g, s) in self.groups.iter().enumerate() {
            for &m in s {
                labels[m] = g;
            }
        }
        labels
    }

    /// Move cell `m` from group `from` to group `to`. Refuses to empty a group.
    pub fn move_cell(&self, m: usize, from: usize, to: usize) -> Result<Self> {
        let g = self.num_groups();
        if from >= g || to >= g {
            return invalid(format!("group index out of range (from {from}, to {to}, G = {g})"));
        }
        let pos = self.groups[from].binary_search(&m).map_err(|_| {
            Error::Precondition(format!("cell {m} is not in group {from}"))
        })?;
        if self.groups[from].len() <= 1 {
            return Err(Error::Precondition(format!(
                "moving cell {m} would leave group {from} empty"
            )));
        }
        let mut next = self.clone();
        if from == to {
            return Ok(next);
        }
        next.groups[from].remove(pos);
        let ins = next.groups[to].binary_search(&m).unwrap_err();
        next.groups[to].insert(ins, m);
        Ok(next)
    }

    /// 1-based list of lists, as written to result files.
    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|s| s.iter().map(|m| m + 1).collect()).collect()
    }

    pub fn from_one_based(subsets: Vec<Vec<usize>>) -> Result<Self> {
        let mut zero = Vec::with_capacity(subsets.len());
        for s in subsets {
            let mut v = Vec::with_capacity(s.len());
            for m in s {
                if m == 0 {
                    return invalid("1-based cell index 0 in grouping");
                }
                v.push(m - 1);
            }
            zero.push(v);
        }
        let num_cells = zero.iter().map(Vec::len).sum();
        Self::from_subsets(zero, num_cells)
    }

    /// Whether cells `a` and `b` share a group.
    pub fn same_group(&self, a: usize, b: usize) -> bool {
        self.groups.iter().any(|s| s.binary_search(&a).is_ok() && s.binary_search(&b).is_ok())
    }
}

impl TryFrom<Vec<Vec<usize>>> for Grouping {
    type Error = Error;

    fn try_from(value: Vec<Vec<usize>>) -> Result<Self> {
        Self::from_one_based(value)
    }
}

impl From<Grouping> for Vec<Vec<usize>> {
    fn from(g: Grouping) -> Self {
        g.to_one_based()
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", serde_json::to_string(&self.to_one_based()).map_err(|_| fmt::Error)?)
    }
}
