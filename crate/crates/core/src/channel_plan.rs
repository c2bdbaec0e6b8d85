//! DSRC channel identifiers and the grid-to-SCH channel map.
//!
//! The map is built from one 6x6 block: every SCH once per row and once per
//! column, no channel repeated inside a cell's 8-neighbourhood, and the
//! neighbourhood rule also enforced between the last and first row so the
//! block tiles vertically without seams. The block search is seeded with an
//! N-Queens placement for the first channel.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid_map::GridCoord;

/// A 10 MHz DSRC channel number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelId(u16);

impl ChannelId {
    pub const CCH: ChannelId = ChannelId(178);

    /// Service channels in ascending order, the fixed symbol order.
    pub const SCHS: [ChannelId; 6] = [
        ChannelId(172),
        ChannelId(174),
        ChannelId(176),
        ChannelId(180),
        ChannelId(182),
        ChannelId(184),
    ];

    pub fn new(number: u16) -> Result<Self, PlanError> {
        let id = ChannelId(number);
        if id == Self::CCH || Self::SCHS.contains(&id) {
            Ok(id)
        } else {
            Err(PlanError::UnknownChannel(number))
        }
    }

    pub fn number(self) -> u16 {
        self.0
    }

    pub fn is_cch(self) -> bool {
        self == Self::CCH
    }

    pub fn is_sch(self) -> bool {
        !self.is_cch()
    }

    /// Index into [`ChannelId::SCHS`], `None` for the CCH.
    pub fn sch_index(self) -> Option<usize> {
        Self::SCHS.iter().position(|&c| c == self)
    }

    pub fn all() -> impl Iterator<Item = ChannelId> {
        let mut v: Vec<ChannelId> = Self::SCHS.to_vec();
        v.push(Self::CCH);
        v.sort();
        v.into_iter()
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("channel {0} is not a DSRC channel (172..=184, even)")]
    UnknownChannel(u16),
    #[error("no N-Queens placement exists for n = {0}")]
    NoQueensSolution(usize),
    #[error("plan needs exactly 6 distinct service channels, got {0}")]
    WrongChannelSet(usize),
    #[error("service channel set must not contain the CCH")]
    CchInServiceSet,
    #[error("plan needs 6 columns and a multiple of 6 rows, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("channel constraints are infeasible")]
    Infeasible,
    #[error("cell {coord} is outside the {rows}x{cols} plan")]
    OutOfBounds {
        coord: GridCoord,
        rows: usize,
        cols: usize,
    },
    #[error("plan file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One queen per row; `cols[r]` is the column of the queen in row `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueensPlacement {
    pub n: usize,
    pub cols: Vec<usize>,
}

impl QueensPlacement {
    pub fn is_valid(&self) -> bool {
        if self.cols.len() != self.n {
            return false;
        }
        let mut seen = vec![false; self.n];
        for &c in &self.cols {
            if c >= self.n || seen[c] {
                return false;
            }
            seen[c] = true;
        }
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.cols[i].abs_diff(self.cols[j]) == j - i {
                    return false;
                }
            }
        }
        true
    }
}

struct QueensSearch {
    n: usize,
    cols: Vec<usize>,
    used_col: Vec<bool>,
    used_diag: Vec<bool>,
    used_anti: Vec<bool>,
}

impl QueensSearch {
    fn new(n: usize) -> Self {
        QueensSearch {
            n,
            cols: Vec::with_capacity(n),
            used_col: vec![false; n],
            used_diag: vec![false; 2 * n],
            used_anti: vec![false; 2 * n],
        }
    }

    /// Visits placements in lexicographic order; `visit` returns `true` to stop.
    fn run(&mut self, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        let row = self.cols.len();
        if row == self.n {
            return visit(&self.cols);
        }
        for c in 0..self.n {
            let d = row + self.n - c;
            let a = row + c;
            if self.used_col[c] || self.used_diag[d] || self.used_anti[a] {
                continue;
            }
            self.used_col[c] = true;
            self.used_diag[d] = true;
            self.used_anti[a] = true;
            self.cols.push(c);
            let stop = self.run(visit);
            self.cols.pop();
            self.used_col[c] = false;
            self.used_diag[d] = false;
            self.used_anti[a] = false;
            if stop {
                return true;
            }
        }
        false
    }
}

/// First placement in lexicographic backtracking order.
pub fn solve_n_queens(n: usize) -> Result<QueensPlacement, PlanError> {
    if n == 0 {
        return Err(PlanError::NoQueensSolution(0));
    }
    let mut found = None;
    QueensSearch::new(n).run(&mut |cols| {
        found = Some(cols.to_vec());
        true
    });
    found
        .map(|cols| QueensPlacement { n, cols })
        .ok_or(PlanError::NoQueensSolution(n))
}

/// Number of distinct placements on an `n x n` board.
pub fn count_n_queens(n: usize) -> u64 {
    let mut count = 0u64;
    QueensSearch::new(n).run(&mut |_| {
        count += 1;
        false
    });
    count
}

pub const BLOCK: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    rows: usize,
    cols: usize,
    cells: Vec<ChannelId>,
    cch: ChannelId,
}

impl ChannelPlan {
    /// Wraps an arbitrary matrix; use [`verify_plan`] to check it.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<ChannelId>) -> Result<Self, PlanError> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(PlanError::BadShape { rows, cols });
        }
        Ok(ChannelPlan {
            rows,
            cols,
            cells,
            cch: ChannelId::CCH,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cch(&self) -> ChannelId {
        self.cch
    }

    pub fn channel_of(&self, coord: GridCoord) -> Result<ChannelId, PlanError> {
        if coord.row >= self.rows || coord.col >= self.cols {
            return Err(PlanError::OutOfBounds {
                coord,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.cells[coord.row * self.cols + coord.col])
    }

    /// Lookup for coordinates already known to be in range.
    pub fn at(&self, row: usize, col: usize) -> ChannelId {
        self.cells[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[ChannelId] {
        &self.cells[row * self.cols..(row + 1) * self.cols]
    }

    /// Plain-text export: header `rows cols cch`, then one line per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.rows, self.cols, self.cch);
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PlanError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: &str| PlanError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| err(0, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(hl, "header must be `rows cols cch`"));
        }
        let num = |s: &str| usize::from_str(s).map_err(|_| err(hl, "bad header number"));
        let rows = num(fields[0])?;
        let cols = num(fields[1])?;
        let cch = u16::from_str(fields[2]).map_err(|_| err(hl, "bad cch"))?;
        if ChannelId::new(cch)? != ChannelId::CCH {
            return Err(err(hl, "cch must be 178"));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        let mut read_rows = 0;
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<ChannelId>, PlanError> = line
                .split_whitespace()
                .map(|t| {
                    let n = u16::from_str(t).map_err(|_| err(ln, "bad channel number"))?;
                    ChannelId::new(n).map_err(|e| err(ln, &e.to_string()))
                })
                .collect();
            let row = row?;
            if row.len() != cols {
                return Err(err(ln, "wrong number of columns"));
            }
            if row.iter().any(|c| c.is_cch()) {
                return Err(err(ln, "cells must hold service channels"));
            }
            cells.extend(row);
            read_rows += 1;
        }
        if read_rows != rows {
            return Err(err(hl, "row count does not match header"));
        }
        ChannelPlan::from_cells(rows, cols, cells)
    }
}

/// Constraint search for one `BLOCK x BLOCK` Latin block.
struct BlockSearch {
    grid: [[Option<usize>; BLOCK]; BLOCK],
}

impl BlockSearch {
    fn allowed(&self, r: usize, c: usize, sym: usize) -> bool {
        for k in 0..BLOCK {
            if self.grid[r][k] == Some(sym) || self.grid[k][c] == Some(sym) {
                return false;
            }
        }
        for dr in [BLOCK - 1, 0, 1] {
            for dc in [-1isize, 0, 1] {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let rr = (r + dr) % BLOCK;
                let cc = c as isize + dc;
                if !(0..BLOCK as isize).contains(&cc) {
                    continue;
                }
                if self.grid[rr][cc as usize] == Some(sym) {
                    return false;
                }
            }
        }
        true
    }

    fn fill(&mut self, free: &[(usize, usize)]) -> bool {
        let Some((&(r, c), rest)) = free.split_first() else {
            return true;
        };
        for sym in 0..BLOCK {
            if self.allowed(r, c, sym) {
                self.grid[r][c] = Some(sym);
                if self.fill(rest) {
                    return true;
                }
                self.grid[r][c] = None;
            }
        }
        false
    }

    /// Fills the block; `seed` fixes symbol 0 at `(r, seed[r])` when given.
    fn solve(seed: Option<&QueensPlacement>) -> Option<[[usize; BLOCK]; BLOCK]> {
        let mut s = BlockSearch {
            grid: [[None; BLOCK]; BLOCK],
        };
        if let Some(q) = seed {
            for (r, &c) in q.cols.iter().enumerate() {
                s.grid[r][c] = Some(0);
            }
        }
        let free: Vec<(usize, usize)> = (0..BLOCK)
            .flat_map(|r| (0..BLOCK).map(move |c| (r, c)))
            .filter(|&(r, c)| s.grid[r][c].is_none())
            .collect();
        if !s.fill(&free) {
            return None;
        }
        let mut out = [[0; BLOCK]; BLOCK];
        for r in 0..BLOCK {
            for c in 0..BLOCK {
                out[r][c] = s.grid[r][c]?;
            }
        }
        Some(out)
    }
}

pub fn build_plan(rows: usize, cols: usize, sch_channels: &[ChannelId]) -> Result<ChannelPlan, PlanError> {
    let mut schs: Vec<ChannelId> = sch_channels.to_vec();
    schs.sort();
    schs.dedup();
    if schs.len() != BLOCK || sch_channels.len() != BLOCK {
        return Err(PlanError::WrongChannelSet(sch_channels.len()));
    }
    if schs.iter().any(|c| c.is_cch()) {
        return Err(PlanError::CchInServiceSet);
    }
    if cols != BLOCK || rows == 0 || rows % BLOCK != 0 {
        return Err(PlanError::BadShape { rows, cols });
    }
    let seed = solve_n_queens(BLOCK)?;
    let block = BlockSearch::solve(Some(&seed))
        .or_else(|| BlockSearch::solve(None))
        .ok_or(PlanError::Infeasible)?;
    let cells = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| schs[block[r % BLOCK][c]])
        .collect();
    ChannelPlan::from_cells(rows, cols, cells)
}

/// Plan for the standard six SCHs.
pub fn default_plan(rows: usize) -> Result<ChannelPlan, PlanError> {
    build_plan(rows, BLOCK, &ChannelId::SCHS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub latin_rows: bool,
    pub latin_cols: bool,
    pub per_channel_counts: BTreeMap<ChannelId, usize>,
    /// `None` when no channel appears twice.
    pub min_same_channel_chebyshev: Option<usize>,
    /// No 8-neighbour pair straddling a multiple-of-6 row seam (including
    /// the wrap from the last row to the first) shares a channel.
    pub seam_ok: bool,
}

impl PlanReport {
    pub fn min_distance_at_least(&self, d: usize) -> bool {
        self.min_same_channel_chebyshev.map_or(true, |m| m >= d)
    }
}

fn is_latin(vals: &[ChannelId]) -> bool {
    let mut seen = vals.to_vec();
    seen.sort();
    seen.dedup();
    seen.len() == vals.len() && vals.iter().all(|c| c.is_sch())
}

pub fn verify_plan(plan: &ChannelPlan) -> PlanReport {
    let (rows, cols) = (plan.rows, plan.cols);
    let block_h = BLOCK.min(rows);
    let mut latin_rows = true;
    for r in 0..rows {
        for c0 in (0..cols).step_by(BLOCK) {
            let c1 = (c0 + BLOCK).min(cols);
            latin_rows &= is_latin(&plan.row(r)[c0..c1]);
        }
    }
    let mut latin_cols = true;
    for c in 0..cols {
        for r0 in (0..rows).step_by(block_h) {
            let r1 = (r0 + block_h).min(rows);
            let col: Vec<ChannelId> = (r0..r1).map(|r| plan.at(r, c)).collect();
            latin_cols &= is_latin(&col);
        }
    }

    let mut per_channel_counts = BTreeMap::new();
    for &c in &plan.cells {
        *per_channel_counts.entry(c).or_insert(0) += 1;
    }

    // Row distance is measured cyclically when the plan is tiled from
    // whole blocks, so the seam between the last and first rows counts.
    let cyclic = rows % BLOCK == 0 && rows > BLOCK;
    let row_dist = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        if cyclic {
            d.min(rows - d)
        } else {
            d
        }
    };
    let mut min_d: Option<usize> = None;
    for i in 0..plan.cells.len() {
        for j in i + 1..plan.cells.len() {
            if plan.cells[i] != plan.cells[j] {
                continue;
            }
            let (ri, ci) = (i / cols, i % cols);
            let (rj, cj) = (j / cols, j % cols);
            let d = row_dist(ri, rj).max(ci.abs_diff(cj));
            min_d = Some(min_d.map_or(d, |m| m.min(d)));
        }
    }

    let mut seam_ok = true;
    if rows > 1 {
        let seams: Vec<usize> = (0..rows)
            .filter(|r| (r + 1) % BLOCK == 0 && (*r + 1 < rows || cyclic))
            .collect();
        for r in seams {
            let next = (r + 1) % rows;
            for c in 0..cols {
                for dc in [-1isize, 0, 1] {
                    let cc = c as isize + dc;
                    if (0..cols as isize).contains(&cc) && plan.at(r, c) == plan.at(next, cc as usize) {
                        seam_ok = false;
                    }
                }
            }
        }
    }

    PlanReport {
        latin_rows,
        latin_cols,
        per_channel_counts,
        min_same_channel_chebyshev: min_d,
        seam_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ch(n: u16) -> ChannelId {
        ChannelId::new(n).unwrap()
    }

    #[test]
    fn channel_roles() {
        assert!(ch(178).is_cch());
        assert_eq!(ChannelId::SCHS.iter().filter(|c| c.is_sch()).count(), 6);
        assert_eq!(ChannelId::all().filter(|c| c.is_cch()).count(), 1);
        assert!(ChannelId::new(173).is_err());
        assert!(ChannelId::new(186).is_err());
    }

    #[test]
    fn queens_small_boards() {
        assert_eq!(solve_n_queens(1).unwrap().cols, vec![0]);
        assert_eq!(solve_n_queens(2), Err(PlanError::NoQueensSolution(2)));
        assert_eq!(solve_n_queens(3), Err(PlanError::NoQueensSolution(3)));
        assert!(solve_n_queens(0).is_err());
        let q6 = solve_n_queens(6).unwrap();
        assert!(q6.is_valid());
        assert_eq!(q6.cols, vec![1, 3, 5, 0, 2, 4]);
        for n in [4, 5, 7, 8, 9, 10] {
            assert!(solve_n_queens(n).unwrap().is_valid(), "n = {n}");
        }
    }

    #[test]
    fn plan_shape_errors() {
        assert_eq!(
            build_plan(6, 6, &ChannelId::SCHS[..5]),
            Err(PlanError::WrongChannelSet(5))
        );
        let with_cch = [ch(172), ch(174), ch(176), ch(178), ch(180), ch(182)];
        assert_eq!(build_plan(6, 6, &with_cch), Err(PlanError::CchInServiceSet));
        assert!(matches!(build_plan(7, 6, &ChannelId::SCHS), Err(PlanError::BadShape { .. })));
        assert!(matches!(build_plan(6, 5, &ChannelId::SCHS), Err(PlanError::BadShape { .. })));
    }

    #[test]
    fn first_row_carries_the_queens_seed() {
        let plan = default_plan(6).unwrap();
        let q = solve_n_queens(6).unwrap();
        for (r, &c) in q.cols.iter().enumerate() {
            assert_eq!(plan.at(r, c), ChannelId::SCHS[0]);
        }
    }

    #[test]
    fn lookup_and_bounds() {
        let plan = default_plan(18).unwrap();
        for c in 0..6 {
            assert_eq!(
                plan.channel_of(GridCoord::new(6, c)).unwrap(),
                plan.channel_of(GridCoord::new(0, c)).unwrap()
            );
        }
        assert!(matches!(
            plan.channel_of(GridCoord::new(18, 0)),
            Err(PlanError::OutOfBounds { .. })
        ));
        assert!(plan.channel_of(GridCoord::new(0, 6)).is_err());
    }

    #[test]
    fn degenerate_reports() {
        let constant = ChannelPlan::from_cells(6, 6, vec![ch(172); 36]).unwrap();
        let rep = verify_plan(&constant);
        assert!(!rep.latin_rows && !rep.latin_cols);
        assert_eq!(rep.min_same_channel_chebyshev, Some(1));

        let single = ChannelPlan::from_cells(1, 1, vec![ch(176)]).unwrap();
        let rep = verify_plan(&single);
        assert_eq!(rep.per_channel_counts.get(&ch(176)), Some(&1));
        assert_eq!(rep.min_same_channel_chebyshev, None);
        assert!(rep.min_distance_at_least(2));
    }

    #[test]
    fn text_format_rejects_garbage() {
        assert!(ChannelPlan::from_text("").is_err());
        assert!(ChannelPlan::from_text("1 1 178\n173\n").is_err());
        assert!(ChannelPlan::from_text("1 1 178\n178\n").is_err());
        assert!(ChannelPlan::from_text("2 1 178\n172\n").is_err());
        assert!(ChannelPlan::from_text("1 2 178\n172\n").is_err());
        let p = ChannelPlan::from_text("1 2 178\n172 174\n").unwrap();
        assert_eq!(p.to_text(), "1 2 178\n172 174\n");
    }

    proptest! {
        #[test]
        fn plan_text_round_trip(blocks in 1usize..5) {
            let plan = default_plan(blocks * 6).unwrap();
            let text = plan.to_text();
            let back = ChannelPlan::from_text(&text).unwrap();
            prop_assert_eq!(&back, &plan);
            prop_assert_eq!(back.to_text(), text);
        }

        #[test]
        fn tiled_plan_invariants(blocks in 1usize..6) {
            let rows = blocks * 6;
            let plan = default_plan(rows).unwrap();
            let rep = verify_plan(&plan);
            prop_assert!(rep.latin_rows && rep.latin_cols && rep.seam_ok);
            prop_assert!(rep.min_distance_at_least(2));
            for c in ChannelId::SCHS {
                prop_assert_eq!(rep.per_channel_counts[&c], rows);
            }
            for r in 0..rows {
                for c in 0..6 {
                    prop_assert_eq!(plan.at(r, c), plan.at(r % 6, c));
                }
            }
        }
    }
}
