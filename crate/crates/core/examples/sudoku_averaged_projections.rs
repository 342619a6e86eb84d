//! Solve the bundled easy Sudokus by gradient descent on the mean squared
//! distance to the five constraint sets, which is averaged projections.
//!
//! `cargo run --release --example sudoku_averaged_projections`

use dissipnet::energies::Energy;
use dissipnet::feasibility::{averaged_projections_equivalence, sudoku_encode, sudoku_round};
use dissipnet::models::GradientOracle;
use dissipnet::optimizer::{descend, DescentConfig};
use dissipnet::problems::shipped_sudoku_easy;

fn main() -> dissipnet::Result<()> {
    let (puzzles, solutions) = shipped_sudoku_easy()?;
    let (mut correct, mut solved) = (0.0, 0);
    for (i, (puzzle, solution)) in puzzles.iter().zip(&solutions).enumerate() {
        let relax = sudoku_encode(puzzle, i as u64)?;
        // The first gradient step with τ = 1 is exactly the mean of the projections.
        let averaged = averaged_projections_equivalence(&relax.energy, &relax.initial)?;
        let energy = Energy::Feasibility(relax.energy);
        let out = descend(
            &energy,
            &GradientOracle,
            &relax.initial,
            &DescentConfig::with_iters(100),
            None,
        )?;
        assert!(out.history.is_monotone());
        let first_step = &out.history.records[1];
        assert_eq!(first_step.tau, Some(1.0));
        assert!((energy.value(&averaged)? - first_step.energy).abs() <= 1e-12);
        let (grid, valid) = sudoku_round(&out.u)?;
        let acc = grid.accuracy_against(solution);
        correct += acc;
        solved += usize::from(valid && grid == *solution);
        println!("puzzle {i:2}: acc {:5.1}%  valid {valid}", 100.0 * acc);
    }
    let n = puzzles.len();
    println!(
        "Acc. {:.1}%  Solve {:.1}%",
        100.0 * correct / n as f64,
        100.0 * solved as f64 / n as f64
    );
    Ok(())
}
