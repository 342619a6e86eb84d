//! Early stopping by the discrepancy principle on a blurred, noisy phantom,
//! against the same iteration left running five times as long.
//!
//! `cargo run --release --example phantom_discrepancy`

use dissipnet::models::GradientOracle;
use dissipnet::optimizer::{descend, DescentConfig, StoppingRule};
use dissipnet::problems::{make_phantom_inverse, psnr, PhantomConfig};

fn main() -> dissipnet::Result<()> {
    let p = make_phantom_inverse(&PhantomConfig::default())?;
    println!("{}: noise norm {:.4}", p.name, p.noise_norm());
    let stopped = descend(
        &p.energy,
        &GradientOracle,
        &p.u0,
        &DescentConfig {
            max_outer_iters: 10_000,
            stop: p.discrepancy_rule(1.0),
            ..DescentConfig::default()
        },
        Some(&p.ground_truth),
    )?;
    let k = stopped.history.steps();
    let at_stop = psnr(&stopped.u, &p.ground_truth, 1.0)?;
    println!(
        "discrepancy stop after {k} iterations ({}): psnr {at_stop:.2} dB",
        stopped.stop_reason
    );

    let long = descend(
        &p.energy,
        &GradientOracle,
        &p.u0,
        &DescentConfig {
            max_outer_iters: 5 * k,
            stop: StoppingRule::MaxIters,
            ..DescentConfig::default()
        },
        Some(&p.ground_truth),
    )?;
    let best = long
        .history
        .records
        .iter()
        .filter_map(|r| r.psnr.map(|v| (r.iter, v)))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    println!(
        "continued to {} iterations: psnr {:.2} dB (peak {:.2} dB at iteration {})",
        long.history.steps(),
        psnr(&long.u, &p.ground_truth, 1.0)?,
        best.1,
        best.0
    );
    Ok(())
}
