//! Train an MLP direction model on `u₁ + u₂ = 5` with the lagged pool and
//! compare where it ends up against plain gradient descent.
//!
//! `cargo run --release --example toy2d_lagged`

use dissipnet::models::{DirectionModel, GradientOracle, ModelKind};
use dissipnet::optimizer::{descend, DescentConfig, StoppingRule};
use dissipnet::problems::{make_toy2d, toy2d, toy2d_random_starts, TOY_SOLUTION};
use dissipnet::trainer::{bootstrap_and_train, TrainConfig, TrainingProblem};
use dissipnet::{ConeSpec, DirectionOracle, Tensor};

fn final_point(oracle: &dyn DirectionOracle, start: [f64; 2]) -> dissipnet::Result<Tensor> {
    let p = toy2d(start)?;
    let cfg = DescentConfig {
        max_outer_iters: 1000,
        stop: StoppingRule::GradNorm(1e-6),
        ..DescentConfig::default()
    };
    Ok(descend(&p.energy, oracle, &p.u0, &cfg, None)?.u)
}

fn distance_to_solution(u: &Tensor) -> f64 {
    let [a, b] = TOY_SOLUTION;
    (u.data()[0] - a).hypot(u.data()[1] - b)
}

fn main() -> dissipnet::Result<()> {
    let problems: Vec<TrainingProblem> = make_toy2d(64, 1)?
        .iter()
        .map(TrainingProblem::from)
        .collect();
    let model = DirectionModel::new(
        ModelKind::Mlp {
            hidden: vec![64, 64, 64],
        },
        ConeSpec::half_space_relative(0.1)?,
        &[2],
        &[1],
        7,
    )?;
    let cfg = TrainConfig {
        batch_size: 32,
        samples_per_problem: 4,
        epochs: 40,
        ..TrainConfig::default()
    };
    let out = bootstrap_and_train(model, &problems, &cfg)?;
    let first = out.losses.first().copied().unwrap_or(f64::NAN);
    let last = out.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} batches, {} regenerations, loss {first:.4} -> {last:.6}",
        out.losses.len(),
        out.regenerations
    );

    let feature = Tensor::vector(vec![5.0]);
    let learned = out.model.bind(&feature);
    let (mut gd_dist, mut model_dist, mut worst_residual) = (0.0, 0.0, 0.0f64);
    let starts = toy2d_random_starts(100, 2024);
    for &s in &starts {
        let u_gd = final_point(&GradientOracle, s)?;
        let u_model = final_point(&learned, s)?;
        gd_dist += distance_to_solution(&u_gd);
        model_dist += distance_to_solution(&u_model);
        worst_residual = worst_residual.max((u_model.data()[0] + u_model.data()[1] - 5.0).abs());
    }
    let n = starts.len() as f64;
    println!(
        "mean distance to (0, 5): gradient descent {:.4}, learned {:.4}",
        gd_dist / n,
        model_dist / n
    );
    println!("worst |u1 + u2 - 5| with the learned model: {worst_residual:.2e}");
    Ok(())
}
