//! Constant-step descent against the widest admissible direction of a
//! bounded cone on random quadratics, compared with the `(1 − γ²μ/L)^k`
//! bound.
//!
//! `cargo run --release --example linear_rate`

use std::sync::Arc;

use dissipnet::optimizer::{verify_linear_rate, WorstCaseAdversary};
use dissipnet::{ConeSpec, Energy, LinearOperator, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `½‖Au − f‖²` with `AᵀA` having eigenvalues spread over `[1/κ, 1]`.
fn quadratic(n: usize, kappa: f64, rng: &mut ChaCha8Rng) -> dissipnet::Result<Energy> {
    let q = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
        .qr()
        .q();
    let s = nalgebra::DVector::from_fn(n, |i, _| kappa.powf(-(i as f64) / (n - 1) as f64).sqrt());
    let a = nalgebra::DMatrix::from_diagonal(&s) * q.transpose();
    let rows: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .collect();
    let f = Tensor::vector((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    Energy::least_squares(Arc::new(LinearOperator::dense(n, n, rows)?), f)
}

fn main() -> dissipnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!(
        "{:>6} {:>6} {:>10} {:>12} {:>12} {:>12}",
        "kappa", "gamma", "factor", "k(1e-6)", "bound k", "max excess"
    );
    for kappa in [10.0, 25.0, 50.0] {
        let energy = quadratic(8, kappa, &mut rng)?;
        for (zeta1, zeta2) in [(1.0, 1.0), (0.5, 1.0), (0.2, 0.5)] {
            let cone = ConeSpec::bounded(zeta1, zeta2)?;
            let reference = Tensor::vector((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
            let adversary = WorstCaseAdversary::new(&cone, reference)?;
            let u0 = Tensor::vector((0..8).map(|_| rng.random_range(-5.0..5.0)).collect());
            let report = verify_linear_rate(&energy, &cone, &adversary, &u0, 2000)?;
            let tol = 1e-6 * report.gaps[0];
            let bound_k = (1e-6f64).ln() / report.factor.ln();
            println!(
                "{kappa:>6} {:>6.2} {:>10.6} {:>12} {:>12.1} {:>12.2e}",
                zeta1 / zeta2,
                report.factor,
                report
                    .iterations_to(tol)
                    .map_or("-".into(), |k| k.to_string()),
                bound_k,
                report.max_excess
            );
        }
    }
    Ok(())
}
