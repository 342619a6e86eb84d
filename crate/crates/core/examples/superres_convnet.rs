//! Train a small convolutional direction model on 4× super-resolution
//! patches and compare it with plain gradient descent on a held-out patch.
//! A small TV term makes the upsampled start a non-minimizer.
//!
//! `cargo run --release --example superres_convnet`

use dissipnet::energies::DEFAULT_TV_EPS;
use dissipnet::models::{DirectionModel, GradientOracle, ModelKind};
use dissipnet::optimizer::{descend, DescentConfig, StoppingRule};
use dissipnet::problems::{make_superres, psnr};
use dissipnet::trainer::{bootstrap_and_train, TrainConfig, TrainingProblem};
use dissipnet::{ConeSpec, DirectionOracle};

const ALPHA: f64 = 0.002;

fn main() -> dissipnet::Result<()> {
    let mut instances = make_superres(16, 4, 0.01, 9, 5)?
        .into_iter()
        .map(|p| p.with_tv(ALPHA, DEFAULT_TV_EPS))
        .collect::<dissipnet::Result<Vec<_>>>()?;
    let test = instances.pop().expect("nine instances");
    let problems: Vec<TrainingProblem> = instances.iter().map(TrainingProblem::from).collect();
    let cone = ConeSpec::bounded(0.1, 10.0)?;
    let model = DirectionModel::new(
        ModelKind::Convnet {
            blocks: 3,
            channels: 8,
        },
        cone,
        test.u0.shape(),
        test.feature.shape(),
        1,
    )?;
    let cfg = TrainConfig {
        batch_size: 8,
        samples_per_problem: 4,
        epochs: 30,
        regen_period: 40,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = bootstrap_and_train(model, &problems, &cfg)?;
    println!(
        "{} parameters, {} batches, {} regenerations, loss {:.4e} -> {:.4e}",
        out.model.num_params(),
        out.losses.len(),
        out.regenerations,
        out.losses.first().copied().unwrap_or(f64::NAN),
        out.losses.last().copied().unwrap_or(f64::NAN)
    );

    // Model-driven runs stop at the cone's gradient floor.
    let descent = DescentConfig {
        stop: StoppingRule::GradNorm(cone.grad_floor),
        ..DescentConfig::with_iters(200)
    };
    let learned = out.model.bind(&test.feature);
    let runs: [(&str, &dyn DirectionOracle); 2] =
        [("gradient descent", &GradientOracle), ("learned", &learned)];
    println!(
        "{}: start psnr {:.2} dB",
        test.name,
        psnr(&test.u0, &test.ground_truth, 1.0)?
    );
    for (name, oracle) in runs {
        let run = descend(
            &test.energy,
            oracle,
            &test.u0,
            &descent,
            Some(&test.ground_truth),
        )?;
        println!(
            "{name:>17}: {} iterations ({}), energy {:.4e}, psnr {:.2} dB",
            run.history.steps(),
            run.stop_reason,
            run.history.last().expect("history has the start").energy,
            psnr(&run.u, &test.ground_truth, 1.0)?
        );
    }
    Ok(())
}
