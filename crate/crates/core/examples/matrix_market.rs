//! Load a sparse operator from a Matrix Market file, check its adjoint and
//! estimate `‖A‖²`, then descend on `½‖Au − f‖²`.
//!
//! `cargo run --example matrix_market [path.mtx]`
//!
//! Without an argument a banded 40×30 matrix is written to a temporary file
//! first.

use std::sync::Arc;

use dissipnet::models::GradientOracle;
use dissipnet::operators::CsrMatrix;
use dissipnet::optimizer::{descend, DescentConfig, StoppingRule};
use dissipnet::{Energy, LinearOperator, Tensor};

fn main() -> dissipnet::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let mut triplets = Vec::new();
            for i in 0..40usize {
                for j in i.saturating_sub(2)..(i + 1).min(30) {
                    triplets.push((i, j, 1.0 / (1 + i.abs_diff(j)) as f64));
                }
            }
            let p = std::env::temp_dir().join("dissipnet_banded.mtx");
            CsrMatrix::from_triplets(40, 30, &triplets)?.write_matrix_market(&p)?;
            p
        }
    };
    let csr = CsrMatrix::read_matrix_market(&path)?;
    let (m, n) = (csr.rows(), csr.cols());
    println!("{}: {m}x{n}, {} stored entries", path.display(), csr.nnz());
    let op = Arc::new(LinearOperator::from_matrix_market(&path, vec![n], vec![m])?);

    let u = Tensor::vector((0..n).map(|i| (i as f64 * 0.7).sin()).collect());
    let v = Tensor::vector((0..m).map(|i| (i as f64 * 0.3).cos()).collect());
    let lhs = op.apply(&u)?.dot(&v)?;
    let rhs = u.dot(&op.adjoint(&v)?)?;
    println!("<Au, v> = {lhs:.12}, <u, A'v> = {rhs:.12}");
    let est = op.operator_norm_sq(1000, 1e-12)?;
    println!(
        "|A|^2 ~ {:.8} after {} power iterations",
        est.value, est.iterations
    );

    let truth = Tensor::vector((0..n).map(|i| if i % 7 < 3 { 1.0 } else { 0.0 }).collect());
    let data = op.apply(&truth)?;
    let energy = Energy::least_squares(op, data)?;
    let cfg = DescentConfig {
        stop: StoppingRule::GradNorm(1e-8),
        ..DescentConfig::with_iters(5000)
    };
    let out = descend(&energy, &GradientOracle, &Tensor::zeros(&[n]), &cfg, None)?;
    let last = out.history.last().expect("history has the start");
    println!(
        "gradient descent: {} iterations ({}), energy {:.3e}, |u - u_true| = {:.3e}",
        out.history.steps(),
        out.stop_reason,
        last.energy,
        out.u.sub(&truth)?.norm()
    );
    Ok(())
}
