//! Convex feasibility as energy minimization.
//!
//! For closed convex sets `C₁ … C_N` the energy `(1/2N) Σ d²(u, Cᵢ)` vanishes
//! exactly on their intersection, and its gradient `(1/N) Σ (u − Πᵢu)` is
//! 1-Lipschitz. A unit gradient step is therefore the average of the
//! projections. The Sudoku relaxation lives here as well.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum ConvexSet {
    /// Each index group is projected onto the probability simplex; groups are disjoint.
    SimplexSlices {
        len: usize,
        groups: Vec<Vec<usize>>,
    },
    Box {
        lo: f64,
        hi: f64,
    },
    /// Coordinates pinned to fixed values; everything else is free.
    Givens {
        indices: Vec<usize>,
        values: Vec<f64>,
    },
    Ball {
        center: Tensor,
        radius: f64,
    },
    /// `{x : ⟨normal, x⟩ ≤ offset}`.
    HalfSpace {
        normal: Tensor,
        offset: f64,
    },
    /// `{x : A x = b}` for a small dense `A`.
    AffineDense {
        a: DMatrix<f64>,
        b: Vec<f64>,
        pinv: DMatrix<f64>,
    },
}

impl ConvexSet {
    pub fn simplex_slices(len: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; len];
        for &i in groups.iter().flatten() {
            if i >= len || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "simplex groups must be disjoint indices below {len}; offending index {i}"
                )));
            }
            seen[i] = true;
        }
        Ok(ConvexSet::SimplexSlices { len, groups })
    }

    pub fn givens(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument(
                "givens: index/value count mismatch".into(),
            ));
        }
        Ok(ConvexSet::Givens { indices, values })
    }

    pub fn ball(center: Tensor, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius {radius}")));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    pub fn half_space(normal: Tensor, offset: f64) -> Result<Self> {
        if normal.norm() == 0.0 {
            return Err(Error::InvalidArgument("half-space normal is zero".into()));
        }
        Ok(ConvexSet::HalfSpace { normal, offset })
    }

    pub fn affine(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols || b.len() != rows {
            return Err(Error::InvalidArgument(
                "affine set: inconsistent sizes".into(),
            ));
        }
        let a = DMatrix::from_row_slice(rows, cols, &a);
        let pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidArgument(format!("affine set: {e}")))?;
        Ok(ConvexSet::AffineDense { a, b, pinv })
    }

    fn check(&self, u: &Tensor) -> Result<()> {
        let n = u.len();
        let ok = match self {
            ConvexSet::SimplexSlices { len, .. } => *len == n,
            ConvexSet::Box { .. } => true,
            ConvexSet::Givens { indices, .. } => indices.iter().all(|&i| i < n),
            ConvexSet::Ball { center, .. } => center.shape() == u.shape(),
            ConvexSet::HalfSpace { normal, .. } => normal.shape() == u.shape(),
            ConvexSet::AffineDense { a, .. } => a.ncols() == n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "projection: set domain does not match input of shape {:?}",
                u.shape()
            )))
        }
    }

    /// Euclidean projection.
    pub fn project(&self, u: &Tensor) -> Result<Tensor> {
        self.check(u)?;
        let mut out = u.clone();
        match self {
            ConvexSet::SimplexSlices { groups, .. } => {
                let data = out.data_mut();
                let mut buf = Vec::new();
                for group in groups {
                    buf.clear();
                    buf.extend(group.iter().map(|&i| u.data()[i]));
                    project_simplex_in_place(&mut buf);
                    for (&i, &v) in group.iter().zip(&buf) {
                        data[i] = v;
                    }
                }
            }
            ConvexSet::Box { lo, hi } => {
                out = u.map(|x| x.clamp(*lo, *hi));
            }
            ConvexSet::Givens { indices, values } => {
                let data = out.data_mut();
                for (&i, &v) in indices.iter().zip(values) {
                    data[i] = v;
                }
            }
            ConvexSet::Ball { center, radius } => {
                let diff = u.sub(center)?;
                let dn = diff.norm();
                if dn > *radius {
                    out = center.axpy(radius / dn, &diff)?;
                }
            }
            ConvexSet::HalfSpace { normal, offset } => {
                let excess = u.dot(normal)? - offset;
                if excess > 0.0 {
                    out = u.axpy(-excess / normal.norm_sq(), normal)?;
                }
            }
            ConvexSet::AffineDense { a, b, pinv } => {
                let x = nalgebra::DVector::from_column_slice(u.data());
                let r = a * &x - nalgebra::DVector::from_column_slice(b);
                let p = x - pinv * r;
                out.data_mut().copy_from_slice(p.as_slice());
            }
        }
        Ok(out)
    }
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx = 1}` by sorting and
/// thresholding: find `θ` with `Σ max(vᵢ − θ, 0) = 1`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

fn project_simplex_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// `(1/2N) Σ ‖u − Πᵢ u‖²` over a list of sets sharing the domain `shape`.
#[derive(Clone, Debug)]
pub struct FeasibilityEnergy {
    sets: Vec<ConvexSet>,
    shape: Vec<usize>,
}

impl FeasibilityEnergy {
    pub fn new(sets: Vec<ConvexSet>, shape: Vec<usize>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidArgument(
                "feasibility energy needs at least one set".into(),
            ));
        }
        let probe = Tensor::zeros(&shape);
        for s in &sets {
            s.check(&probe)?;
        }
        Ok(Self { sets, shape })
    }

    pub fn sets(&self) -> &[ConvexSet] {
        &self.sets
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn projections(&self, u: &Tensor) -> Result<Vec<Tensor>> {
        self.sets.iter().map(|s| s.project(u)).collect()
    }

    pub fn value(&self, u: &Tensor) -> Result<f64> {
        let n = self.sets.len() as f64;
        let mut total = 0.0;
        for p in self.projections(u)? {
            total += u.sub(&p)?.norm_sq();
        }
        Ok(total / (2.0 * n))
    }

    pub fn grad(&self, u: &Tensor) -> Result<Tensor> {
        let n = self.sets.len() as f64;
        let mut g = Tensor::zeros(u.shape());
        for p in self.projections(u)? {
            g.axpy_mut(1.0 / n, &u.sub(&p)?)?;
        }
        Ok(g)
    }

    /// Mean of the projections.
    pub fn average_projection(&self, u: &Tensor) -> Result<Tensor> {
        let n = self.sets.len() as f64;
        let mut m = Tensor::zeros(u.shape());
        for p in self.projections(u)? {
            m.axpy_mut(1.0 / n, &p)?;
        }
        Ok(m)
    }
}

/// Tolerance of the unit-step / averaged-projections identity.
pub const EQUIVALENCE_TOL: f64 = 1e-12;

/// Checks `u − ∇E(u) = (1/N) Σ Πᵢ u` and returns that point.
pub fn averaged_projections_equivalence(energy: &FeasibilityEnergy, u: &Tensor) -> Result<Tensor> {
    let step = u.sub(&energy.grad(u)?)?;
    let mean = energy.average_projection(u)?;
    let gap = step.sub(&mean)?.max_abs();
    let scale = 1.0f64.max(u.max_abs());
    if gap > EQUIVALENCE_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "gradient step and averaged projections differ by {gap:e}"
        )));
    }
    Ok(mean)
}

// --- Sudoku -----------------------------------------------------------------

/// A 9x9 grid; `0` marks a blank.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sudoku {
    cells: [u8; 81],
}

impl Sudoku {
    pub fn from_cells(cells: [u8; 81]) -> Result<Self> {
        if let Some(c) = cells.iter().find(|&&c| c > 9) {
            return Err(Error::Puzzle(format!("cell value {c} outside 0..=9")));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[u8; 81] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * 9 + col]
    }

    pub fn givens(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|&c| c != 0)
    }

    /// No digit repeats within any row, column or box (blanks ignored).
    pub fn is_consistent(&self) -> bool {
        unit_indices().all(|unit| {
            let mut seen = [false; 10];
            unit.iter().all(|&i| {
                let c = self.cells[i] as usize;
                if c == 0 {
                    return true;
                }
                !std::mem::replace(&mut seen[c], true)
            })
        })
    }

    /// Complete and consistent.
    pub fn is_valid_solution(&self) -> bool {
        self.is_complete() && self.is_consistent()
    }

    /// Fraction of cells equal to `reference`.
    pub fn accuracy_against(&self, reference: &Sudoku) -> f64 {
        let hits = self
            .cells
            .iter()
            .zip(&reference.cells)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / 81.0
    }

    /// Whether every given of `self` appears in `other`.
    pub fn agrees_with(&self, other: &Sudoku) -> bool {
        self.cells
            .iter()
            .zip(&other.cells)
            .all(|(&a, &b)| a == 0 || a == b)
    }
}

fn unit_indices() -> impl Iterator<Item = [usize; 9]> {
    let rows = (0..9).map(|r| std::array::from_fn(|c| r * 9 + c));
    let cols = (0..9).map(|c| std::array::from_fn(|r| r * 9 + c));
    let boxes = (0..9).map(|b| {
        let (br, bc) = (3 * (b / 3), 3 * (b % 3));
        std::array::from_fn(|k| (br + k / 3) * 9 + bc + k % 3)
    });
    rows.chain(cols).chain(boxes)
}

impl FromStr for Sudoku {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        if chars.len() != 81 {
            return Err(Error::Puzzle(format!(
                "expected 81 symbols, got {}",
                chars.len()
            )));
        }
        let mut cells = [0u8; 81];
        for (cell, ch) in cells.iter_mut().zip(chars) {
            *cell = match ch {
                '.' => 0,
                '0'..='9' => ch as u8 - b'0',
                other => return Err(Error::Puzzle(format!("unexpected symbol `{other}`"))),
            };
        }
        Ok(Self { cells })
    }
}

impl fmt::Display for Sudoku {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.cells {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Sudoku {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sudoku({self})")
    }
}

/// One puzzle per line; blank lines and `#` comments are skipped.
pub fn read_puzzles(path: impl AsRef<Path>) -> Result<Vec<Sudoku>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_puzzles(&text)
}

pub fn parse_puzzles(text: &str) -> Result<Vec<Sudoku>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(n, l)| {
            l.parse()
                .map_err(|e| Error::Puzzle(format!("puzzle {}: {e}", n + 1)))
        })
        .collect()
}

pub const SUDOKU_SHAPE: [usize; 3] = [9, 9, 9];

/// Flat index of (digit 0..9, row, col) in the `[digit, row, col]` tensor.
#[inline]
pub fn sudoku_index(digit: usize, row: usize, col: usize) -> usize {
    digit * 81 + row * 9 + col
}

/// Noise amplitude added to the uniform start on blank cells.
pub const SUDOKU_INIT_NOISE: f64 = 1e-3;

/// Continuous relaxation on `[0,1]^{9×9×9}` with five constraint sets:
/// one digit per cell, each digit once per row, once per column, once per
/// box, and the givens.
#[derive(Clone, Debug)]
pub struct SudokuRelaxation {
    pub puzzle: Sudoku,
    pub energy: FeasibilityEnergy,
    pub initial: Tensor,
}

pub fn sudoku_sets(puzzle: &Sudoku) -> Result<Vec<ConvexSet>> {
    let n = 729;
    let cell = (0..81)
        .map(|rc| (0..9).map(|d| sudoku_index(d, rc / 9, rc % 9)).collect())
        .collect();
    let row = (0..81)
        .map(|rd| (0..9).map(|c| sudoku_index(rd % 9, rd / 9, c)).collect())
        .collect();
    let col = (0..81)
        .map(|cd| (0..9).map(|r| sudoku_index(cd % 9, r, cd / 9)).collect())
        .collect();
    let block = (0..81)
        .map(|bd| {
            let (b, d) = (bd / 9, bd % 9);
            let (br, bc) = (3 * (b / 3), 3 * (b % 3));
            (0..9)
                .map(|k| sudoku_index(d, br + k / 3, bc + k % 3))
                .collect()
        })
        .collect();
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for r in 0..9 {
        for c in 0..9 {
            let v = puzzle.get(r, c) as usize;
            if v != 0 {
                for d in 0..9 {
                    idx.push(sudoku_index(d, r, c));
                    vals.push(if d + 1 == v { 1.0 } else { 0.0 });
                }
            }
        }
    }
    Ok(vec![
        ConvexSet::simplex_slices(n, cell)?,
        ConvexSet::simplex_slices(n, row)?,
        ConvexSet::simplex_slices(n, col)?,
        ConvexSet::simplex_slices(n, block)?,
        ConvexSet::givens(idx, vals)?,
    ])
}

/// One-hot encoding of a (possibly partial) grid; blanks are all-zero.
pub fn sudoku_one_hot(grid: &Sudoku) -> Tensor {
    let mut t = Tensor::zeros(&SUDOKU_SHAPE);
    for r in 0..9 {
        for c in 0..9 {
            let v = grid.get(r, c) as usize;
            if v != 0 {
                t.data_mut()[sudoku_index(v - 1, r, c)] = 1.0;
            }
        }
    }
    t
}

/// Build the relaxation and its start: one-hot givens, `1/9` plus seeded
/// noise of amplitude [`SUDOKU_INIT_NOISE`] elsewhere.
pub fn sudoku_encode(puzzle: &Sudoku, seed: u64) -> Result<SudokuRelaxation> {
    if !puzzle.is_consistent() {
        return Err(Error::Puzzle(format!("contradictory givens in {puzzle}")));
    }
    let energy = FeasibilityEnergy::new(sudoku_sets(puzzle)?, SUDOKU_SHAPE.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut initial = sudoku_one_hot(puzzle);
    for r in 0..9 {
        for c in 0..9 {
            if puzzle.get(r, c) == 0 {
                for d in 0..9 {
                    let noise = rng.random_range(-SUDOKU_INIT_NOISE..SUDOKU_INIT_NOISE);
                    initial.data_mut()[sudoku_index(d, r, c)] = 1.0 / 9.0 + noise;
                }
            }
        }
    }
    Ok(SudokuRelaxation {
        puzzle: *puzzle,
        energy,
        initial,
    })
}

/// Per-cell argmax over digits (lowest digit wins ties), plus whether the
/// result is a valid completed grid.
pub fn sudoku_round(u: &Tensor) -> Result<(Sudoku, bool)> {
    u.check_shape("sudoku_round", &SUDOKU_SHAPE)?;
    let mut cells = [0u8; 81];
    for r in 0..9 {
        for c in 0..9 {
            let mut best = 0;
            for d in 1..9 {
                if u.data()[sudoku_index(d, r, c)] > u.data()[sudoku_index(best, r, c)] {
                    best = d;
                }
            }
            cells[r * 9 + c] = best as u8 + 1;
        }
    }
    let grid = Sudoku { cells };
    let valid = grid.is_valid_solution();
    Ok((grid, valid))
}
