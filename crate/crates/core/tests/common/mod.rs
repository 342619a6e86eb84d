//! Reference implementations used as test oracles. None of them call into
//! the library code they check.
#![allow(dead_code)]

pub mod gradients;

use std::sync::Arc;

use dissipnet::feasibility::{Sudoku, SUDOKU_SHAPE};
use dissipnet::{Energy, LinearOperator, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Accepted relative error between reverse-mode and finite differences.
pub const FD_REL_TOL: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const FD_FLOOR: f64 = 1e-3;
/// Probes whose central differences at `h` and `h/2` disagree by more than
/// this (relative) straddle a kink and are redrawn.
pub const FD_KINK_GATE: f64 = 1e-6;

pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
    let shifted = |s: f64| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + s * b).collect() };
    (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ProbeStats {
    pub accepted: usize,
    pub redrawn: usize,
    pub worst: f64,
}

impl ProbeStats {
    pub fn merge(&mut self, other: ProbeStats) {
        self.accepted += other.accepted;
        self.redrawn += other.redrawn;
        self.worst = self.worst.max(other.worst);
    }

    pub fn passes(&self) -> bool {
        self.worst <= FD_REL_TOL
    }
}

/// Compare `⟨analytic, v⟩` with central differences along `v`. Returns
/// `None` when the two-step gate flags a kink inside the stencil.
pub fn directional_check(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    v: &[f64],
    analytic: &[f64],
) -> Option<f64> {
    let fd = central_difference(f, x, v, FD_STEP);
    let fd_half = central_difference(f, x, v, FD_STEP / 2.0);
    if (fd - fd_half).abs() > FD_KINK_GATE * fd.abs().max(FD_FLOOR) {
        return None;
    }
    let a: f64 = analytic.iter().zip(v).map(|(g, d)| g * d).sum();
    Some((a - fd_half).abs() / a.abs().max(fd_half.abs()).max(FD_FLOOR))
}

/// Run `probes` accepted directional checks at random points from `point`.
pub fn probe_many(
    probes: usize,
    seed: u64,
    mut point: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
) -> ProbeStats {
    let mut r = rng(seed);
    let mut stats = ProbeStats::default();
    while stats.accepted < probes {
        let x = point(&mut r);
        let v = unit_vector(x.len(), &mut r);
        match directional_check(f, &x, &v, &grad(&x)) {
            Some(err) => {
                stats.accepted += 1;
                stats.worst = stats.worst.max(err);
            }
            None => {
                stats.redrawn += 1;
                assert!(
                    stats.redrawn <= probes,
                    "kink gate rejects almost every probe"
                );
            }
        }
    }
    stats
}

pub fn gaussian_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    // Box-Muller keeps the oracle independent of the library's sampler.
    (0..n)
        .map(|_| {
            let u1: f64 = 1.0 - r.random::<f64>();
            let u2: f64 = r.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn unit_vector(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let v = gaussian_vec(n, r);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Simplex projection by bisection on the threshold `θ` with
/// `Σ max(vᵢ − θ, 0) = 1`.
pub fn simplex_projection_bisect(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>();
    let hi_start = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (hi_start - 1.0, hi_start);
    // The bracket has width 1; 80 halvings reach machine precision.
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

/// Simplex projection by a dense grid search over `θ`, refined once.
pub fn simplex_projection_grid(v: &[f64]) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>();
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (top - 1.0, top);
    for _ in 0..8 {
        let steps = 1000;
        let width = (hi - lo) / steps as f64;
        let k = (0..=steps)
            .find(|&k| mass(lo + k as f64 * width) <= 1.0)
            .unwrap_or(steps);
        let new_hi = lo + k as f64 * width;
        lo = new_hi - width;
        hi = new_hi;
    }
    // Mass is piecewise linear in θ: solve exactly on the final bracket.
    let (ml, mh) = (mass(lo), mass(hi));
    let t = if ml == mh {
        hi
    } else {
        lo + (ml - 1.0) / (ml - mh) * (hi - lo)
    };
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

fn idx(d: usize, r: usize, c: usize) -> usize {
    d * 81 + r * 9 + c
}

/// Index groups of the four simplex families: cell, row, column, box.
pub fn sudoku_groups() -> [Vec<[usize; 9]>; 4] {
    let mut cell = Vec::new();
    let mut row = Vec::new();
    let mut col = Vec::new();
    let mut boxes = Vec::new();
    for a in 0..9 {
        for b in 0..9 {
            cell.push(std::array::from_fn(|d| idx(d, a, b)));
            row.push(std::array::from_fn(|c| idx(a, b, c)));
            col.push(std::array::from_fn(|r| idx(a, r, b)));
            let (br, bc) = (3 * (b / 3), 3 * (b % 3));
            boxes.push(std::array::from_fn(|k| idx(a, br + k / 3, bc + k % 3)));
        }
    }
    [cell, row, col, boxes]
}

/// The five Sudoku projections computed from scratch.
pub fn sudoku_projections(puzzle: &Sudoku, u: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for family in sudoku_groups() {
        let mut p = u.to_vec();
        for group in family {
            let v: Vec<f64> = group.iter().map(|&i| u[i]).collect();
            for (&i, x) in group.iter().zip(simplex_projection_bisect(&v)) {
                p[i] = x;
            }
        }
        out.push(p);
    }
    let mut givens = u.to_vec();
    for r in 0..9 {
        for c in 0..9 {
            let v = puzzle.get(r, c) as usize;
            if v != 0 {
                for d in 0..9 {
                    givens[idx(d, r, c)] = if d + 1 == v { 1.0 } else { 0.0 };
                }
            }
        }
    }
    out.push(givens);
    out
}

pub fn sudoku_energy_oracle(puzzle: &Sudoku, u: &[f64]) -> f64 {
    let projections = sudoku_projections(puzzle, u);
    let n = projections.len() as f64;
    projections
        .iter()
        .map(|p| u.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / (2.0 * n)
}

pub fn random_sudoku_state(r: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(
        SUDOKU_SHAPE.to_vec(),
        (0..729).map(|_| r.random::<f64>()).collect(),
    )
    .unwrap()
}

/// Plain backtracking solver; returns the first solution in digit order and
/// the number of solutions found up to `limit`.
pub fn backtracking_solve(puzzle: &Sudoku, limit: usize) -> (Option<Sudoku>, usize) {
    fn ok(cells: &[u8; 81], pos: usize, v: u8) -> bool {
        let (r, c) = (pos / 9, pos % 9);
        for k in 0..9 {
            if cells[r * 9 + k] == v || cells[k * 9 + c] == v {
                return false;
            }
        }
        let (br, bc) = (3 * (r / 3), 3 * (c / 3));
        for k in 0..9 {
            if cells[(br + k / 3) * 9 + bc + k % 3] == v {
                return false;
            }
        }
        true
    }
    fn go(cells: &mut [u8; 81], first: &mut Option<[u8; 81]>, count: &mut usize, limit: usize) {
        let Some(pos) = cells.iter().position(|&x| x == 0) else {
            *count += 1;
            first.get_or_insert(*cells);
            return;
        };
        for v in 1..=9 {
            if *count >= limit {
                return;
            }
            if ok(cells, pos, v) {
                cells[pos] = v;
                go(cells, first, count, limit);
                cells[pos] = 0;
            }
        }
    }
    let mut cells = *puzzle.cells();
    let mut first = None;
    let mut count = 0;
    go(&mut cells, &mut first, &mut count, limit);
    (first.map(|c| Sudoku::from_cells(c).unwrap()), count)
}

/// `½‖Au − f‖²` with a random `n × n` matrix whose spectrum of `AᵀA` lies in
/// `[1/κ, 1]` with both ends attained. Returns the energy and `κ`.
pub fn random_quadratic(n: usize, kappa: f64, r: &mut ChaCha8Rng) -> Energy {
    // Random orthogonal Q from Gram-Schmidt on Gaussian columns.
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v = gaussian_vec(n, r);
        for w in &q {
            let p = dot(&v, w);
            v.iter_mut().zip(w).for_each(|(a, b)| *a -= p * b);
        }
        let nv = norm(&v);
        if nv > 1e-6 {
            q.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    let mut s: Vec<f64> = (0..n).map(|_| r.random_range((1.0 / kappa)..1.0)).collect();
    s[0] = 1.0;
    s[n - 1] = 1.0 / kappa;
    // A = diag(sqrt(s)) Qᵀ, so AᵀA = Q diag(s) Qᵀ.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = s[i].sqrt() * q[i][j];
        }
    }
    let f = gaussian_vec(n, r);
    Energy::least_squares(
        Arc::new(LinearOperator::dense(n, n, a).unwrap()),
        Tensor::vector(f),
    )
    .unwrap()
}
