//! Reverse-mode gradients of a small conv net checked against central
//! differences along random directions.
//!
//! `cargo run --example autodiff_gradcheck`

use dissipnet::autodiff::{NodeId, Tape};
use dissipnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SHAPES: [&[usize]; 4] = [&[4, 2, 3, 3], &[4], &[1, 4, 3, 3], &[1]];

/// `½‖conv(relu(conv(x)))‖² − target` style loss with flat parameters.
fn loss(
    tape: &mut Tape,
    theta: &[f64],
    x: &Tensor,
    target: &Tensor,
) -> dissipnet::Result<(NodeId, Vec<NodeId>)> {
    let mut leaves = Vec::new();
    let mut offset = 0;
    for shape in SHAPES {
        let n: usize = shape.iter().product();
        leaves.push(tape.leaf(
            Tensor::new(shape.to_vec(), theta[offset..offset + n].to_vec())?,
            true,
        ));
        offset += n;
    }
    let xi = tape.leaf(x.clone(), false);
    let h = tape.conv2d_3x3(xi, leaves[0], leaves[1])?;
    let h = tape.relu(h)?;
    let y = tape.conv2d_3x3(h, leaves[2], leaves[3])?;
    let t = tape.leaf(target.clone(), false);
    Ok((tape.square_loss(y, t)?, leaves))
}

fn main() -> dissipnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let total: usize = SHAPES.iter().map(|s| s.iter().product::<usize>()).sum();
    let x = Tensor::random_normal(&[2, 6, 5], 1.0, &mut rng);
    let target = Tensor::random_normal(&[1, 6, 5], 1.0, &mut rng);
    let theta = Tensor::random_normal(&[total], 0.5, &mut rng).into_data();

    let value = |th: &[f64]| -> dissipnet::Result<f64> {
        let mut tape = Tape::no_grad();
        let (out, _) = loss(&mut tape, th, &x, &target)?;
        Ok(tape.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let (out, leaves) = loss(&mut tape, &theta, &x, &target)?;
    let grads = tape.backward(out, &Tensor::scalar(1.0))?;
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|&id| grads.get(id).expect("trainable leaf").data().to_vec())
        .collect();
    println!("{} parameters, loss {:.6}", total, value(&theta)?);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for probe in 0..10 {
        let v = Tensor::random_normal(&[total], 1.0, &mut rng);
        let v = v.scale(1.0 / v.norm());
        let shifted =
            |s: f64| -> Vec<f64> { theta.iter().zip(v.data()).map(|(a, b)| a + s * b).collect() };
        let fd = (value(&shifted(h))? - value(&shifted(-h))?) / (2.0 * h);
        let rev: f64 = analytic.iter().zip(v.data()).map(|(a, b)| a * b).sum();
        let rel = (rev - fd).abs() / rev.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
        println!("probe {probe}: reverse {rev:+.8e}, central difference {fd:+.8e}, rel {rel:.2e}");
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
