//! Reverse-mode gradients of every differentiable component against central
//! differences.

use std::sync::Arc;

use dissipnet::autodiff::Tape;
use dissipnet::feasibility::{sudoku_encode, ConvexSet, FeasibilityEnergy};
use dissipnet::models::{DirectionModel, ModelKind};
use dissipnet::operators::{CsrMatrix, Kernel};
use dissipnet::problems::shipped_sudoku_easy;
use dissipnet::trainer::{sample_loss_and_grad, PoolEntry, Provenance};
use dissipnet::{ConeSpec, Energy, LinearOperator, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_vec, probe_many, rng, ProbeStats};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn scaled(n: usize, s: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    gaussian_vec(n, r).into_iter().map(|x| s * x).collect()
}

/// Check one fixed function over `setups` random instances.
fn repeat(
    per_setup: usize,
    setups: usize,
    seed: u64,
    mut one: impl FnMut(usize, u64) -> ProbeStats,
) -> ProbeStats {
    let mut total = ProbeStats::default();
    for s in 0..setups {
        total.merge(one(
            per_setup,
            seed.wrapping_mul(1000).wrapping_add(s as u64),
        ));
    }
    total
}

/// conv → relu → scale → add(skip) → square loss, all leaves trainable.
pub fn tape_conv(probes: usize, seed: u64) -> ProbeStats {
    let (c, h, w, co) = (2, 4, 5, 2);
    let sizes = [c * h * w, co * c * 9, co, co * h * w];
    let total: usize = sizes.iter().sum();
    let mut r = rng(seed);
    let skip = scaled(co * h * w, 1.0, &mut r);
    let record = move |x: &[f64], tape: &mut Tape| {
        let mut off = 0;
        let mut take = |n: usize, shape: &[usize], tape: &mut Tape| {
            let id = tape.leaf(t(shape, &x[off..off + n]), true);
            off += n;
            id
        };
        let xi = take(sizes[0], &[c, h, w], tape);
        let k = take(sizes[1], &[co, c, 3, 3], tape);
        let b = take(sizes[2], &[co], tape);
        let target = take(sizes[3], &[co, h, w], tape);
        let s = tape.leaf(t(&[co, h, w], &skip), false);
        let y = tape.conv2d_3x3(xi, k, b).unwrap();
        let y = tape.relu(y).unwrap();
        let y = tape.scale(y, 0.7).unwrap();
        let y = tape.add(y, s).unwrap();
        let loss = tape.square_loss(y, target).unwrap();
        (loss, [xi, k, b, target])
    };
    let f = |x: &[f64]| {
        let mut tape = Tape::no_grad();
        let (loss, _) = record(x, &mut tape);
        tape.value(loss).data()[0]
    };
    let grad = |x: &[f64]| {
        let mut tape = Tape::new();
        let (loss, leaves) = record(x, &mut tape);
        let g = tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
        leaves
            .iter()
            .flat_map(|&id| g.get(id).unwrap().data().to_vec())
            .collect()
    };
    probe_many(probes, seed, |r| scaled(total, 1.0, r), &f, &grad)
}

/// affine → relu → affine, concatenated with a trainable leaf, square loss.
pub fn tape_affine(probes: usize, seed: u64) -> ProbeStats {
    let (i, hdim, o) = (5, 7, 3);
    let sizes = [i, hdim * i, hdim, o * hdim, o, 2, o + 2];
    let total: usize = sizes.iter().sum();
    let record = move |x: &[f64], tape: &mut Tape| {
        let shapes: [&[usize]; 7] = [&[i], &[hdim, i], &[hdim], &[o, hdim], &[o], &[2], &[o + 2]];
        let mut off = 0;
        let ids: Vec<usize> = sizes
            .iter()
            .zip(shapes)
            .map(|(&n, shape)| {
                let id = tape.leaf(t(shape, &x[off..off + n]), true);
                off += n;
                id
            })
            .collect();
        let h1 = tape.affine(ids[1], ids[2], ids[0]).unwrap();
        let h1 = tape.relu(h1).unwrap();
        let y = tape.affine(ids[3], ids[4], h1).unwrap();
        let y = tape.concat(&[y, ids[5]]).unwrap();
        (tape.square_loss(y, ids[6]).unwrap(), ids)
    };
    let f = |x: &[f64]| {
        let mut tape = Tape::no_grad();
        let (loss, _) = record(x, &mut tape);
        tape.value(loss).data()[0]
    };
    let grad = |x: &[f64]| {
        let mut tape = Tape::new();
        let (loss, ids) = record(x, &mut tape);
        let g = tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
        ids.iter()
            .flat_map(|&id| g.get(id).unwrap().data().to_vec())
            .collect()
    };
    probe_many(probes, seed, |r| scaled(total, 1.0, r), &f, &grad)
}

/// The full training loss `‖u − enforce(trunk(θ)) − u*‖²` as a function of
/// the parameters, for one fixed pool entry.
fn model_loss(model: DirectionModel, probes: usize, seed: u64) -> ProbeStats {
    let mut r = rng(seed ^ 0xabc);
    let n_u: usize = model.u_shape().iter().product();
    let n_f: usize = model.f_shape().iter().product();
    let entry = PoolEntry {
        problem: 0,
        u: t(model.u_shape(), &scaled(n_u, 1.0, &mut r)),
        grad: t(model.u_shape(), &scaled(n_u, 1.0, &mut r)),
        feature: t(model.f_shape(), &scaled(n_f, 1.0, &mut r)),
        u_star: t(model.u_shape(), &scaled(n_u, 1.0, &mut r)),
        steps: 0,
        provenance: Provenance::GdBootstrap,
    };
    let theta0 = model.params().data().to_vec();
    let with = |x: &[f64]| {
        let mut m = model.clone();
        m.set_params(Tensor::vector(x.to_vec())).unwrap();
        m
    };
    let f = |x: &[f64]| sample_loss_and_grad(&with(x), &entry).unwrap().0;
    let grad = |x: &[f64]| {
        sample_loss_and_grad(&with(x), &entry)
            .unwrap()
            .1
            .data()
            .to_vec()
    };
    probe_many(
        probes,
        seed,
        |r| {
            theta0
                .iter()
                .map(|p| p + 0.05 * gaussian_vec(1, r)[0])
                .collect()
        },
        &f,
        &grad,
    )
}

pub fn mlp_loss(probes: usize, seed: u64) -> ProbeStats {
    let cones = [
        ConeSpec::half_space(0.5).unwrap(),
        ConeSpec::half_space_relative(0.1).unwrap(),
        ConeSpec::bounded(0.3, 1.5).unwrap(),
    ];
    repeat(probes.div_ceil(3), 3, seed, |p, s| {
        let kind = ModelKind::Mlp { hidden: vec![8, 6] };
        let model = DirectionModel::new(kind, cones[(s % 3) as usize], &[3], &[2], s).unwrap();
        model_loss(model, p, s)
    })
}

pub fn convnet_loss(probes: usize, seed: u64) -> ProbeStats {
    let cones = [
        ConeSpec::bounded(0.2, 2.0).unwrap(),
        ConeSpec::half_space_relative(0.3).unwrap(),
    ];
    repeat(probes.div_ceil(2), 2, seed, |p, s| {
        let kind = ModelKind::Convnet {
            blocks: 2,
            channels: 3,
        };
        let model =
            DirectionModel::new(kind, cones[(s % 2) as usize], &[4, 4], &[4, 4], s).unwrap();
        model_loss(model, p, s)
    })
}

/// `z ↦ ⟨w, enforce(z, g)⟩` for each cone mode, with `g` fixed per setup.
pub fn cone_layers(probes: usize, seed: u64) -> ProbeStats {
    repeat(probes.div_ceil(9), 9, seed, |p, s| {
        let mut r = rng(s);
        let n = r.random_range(2..7);
        let cone = match s % 3 {
            0 => ConeSpec::half_space(r.random_range(0.1..2.0)).unwrap(),
            1 => ConeSpec::half_space_relative(r.random_range(0.05..1.0)).unwrap(),
            _ => {
                let z1 = r.random_range(0.1..1.0);
                ConeSpec::bounded(z1, z1 + r.random_range(0.1..2.0)).unwrap()
            }
        };
        let g = Tensor::vector(scaled(n, 1.0, &mut r));
        let w = Tensor::vector(scaled(n, 1.0, &mut r));
        let f = |x: &[f64]| {
            cone.enforce(&Tensor::vector(x.to_vec()), &g)
                .unwrap()
                .dot(&w)
                .unwrap()
        };
        let grad = |x: &[f64]| {
            cone.enforce_backward(&Tensor::vector(x.to_vec()), &g, &w)
                .unwrap()
                .data()
                .to_vec()
        };
        probe_many(p, s, |r| scaled(n, 1.5, r), &f, &grad)
    })
}

fn energy_probes(
    energy: &Energy,
    probes: usize,
    seed: u64,
    spread: f64,
    center: f64,
) -> ProbeStats {
    let shape = energy.domain_shape();
    let n: usize = shape.iter().product();
    let f = |x: &[f64]| energy.value(&t(&shape, x)).unwrap();
    let grad = |x: &[f64]| energy.grad(&t(&shape, x)).unwrap().data().to_vec();
    probe_many(
        probes,
        seed,
        |r| {
            scaled(n, spread, r)
                .into_iter()
                .map(|v| v + center)
                .collect()
        },
        &f,
        &grad,
    )
}

pub fn least_squares(probes: usize, seed: u64) -> ProbeStats {
    let mut r = rng(seed);
    let dense = LinearOperator::dense(5, 6, scaled(30, 1.0, &mut r)).unwrap();
    let pool = LinearOperator::avgpool(2, [6, 4]).unwrap();
    let conv = LinearOperator::conv2d(Kernel::gaussian(1.0, 1), [5, 5]).unwrap();
    let triplets: Vec<(usize, usize, f64)> = (0..12)
        .map(|_| {
            (
                r.random_range(0..4),
                r.random_range(0..7),
                gaussian_vec(1, &mut r)[0],
            )
        })
        .collect();
    let sparse = LinearOperator::sparse(
        CsrMatrix::from_triplets(4, 7, &triplets).unwrap(),
        vec![7],
        vec![4],
    )
    .unwrap();
    let ops = [dense, pool, conv, sparse];
    let mut total = ProbeStats::default();
    for (i, op) in ops.into_iter().enumerate() {
        let data = t(&op.output_shape(), &scaled(op.output_len(), 1.0, &mut r));
        let e = Energy::least_squares(Arc::new(op), data).unwrap();
        total.merge(energy_probes(
            &e,
            probes.div_ceil(4),
            seed + i as u64,
            1.0,
            0.0,
        ));
    }
    total
}

pub fn total_variation(probes: usize, seed: u64) -> ProbeStats {
    let mut r = rng(seed);
    let tv = Energy::charbonnier_tv(0.1, [5, 6]).unwrap();
    let op = LinearOperator::avgpool(2, [6, 6]).unwrap();
    let data = t(&[3, 3], &scaled(9, 1.0, &mut r));
    let composite = Energy::regularized(Arc::new(op), data, 0.8, 0.05).unwrap();
    let mut total = energy_probes(&tv, probes.div_ceil(2), seed, 1.0, 0.0);
    total.merge(energy_probes(
        &composite,
        probes.div_ceil(2),
        seed + 1,
        1.0,
        0.0,
    ));
    total
}

pub fn feasibility(probes: usize, seed: u64) -> ProbeStats {
    let mut r = rng(seed);
    let (puzzles, _) = shipped_sudoku_easy().unwrap();
    let sudoku = Energy::Feasibility(
        sudoku_encode(&puzzles[(seed % 50) as usize], seed)
            .unwrap()
            .energy,
    );
    let n = 6;
    let sets = vec![
        ConvexSet::ball(Tensor::vector(scaled(n, 1.0, &mut r)), 0.7).unwrap(),
        ConvexSet::half_space(Tensor::vector(scaled(n, 1.0, &mut r)), 0.3).unwrap(),
        ConvexSet::affine(2, n, scaled(2 * n, 1.0, &mut r), scaled(2, 1.0, &mut r)).unwrap(),
        ConvexSet::simplex_slices(n, vec![vec![0, 2, 4], vec![1, 3]]).unwrap(),
        ConvexSet::Box { lo: -0.2, hi: 0.4 },
    ];
    let mixed = Energy::Feasibility(FeasibilityEnergy::new(sets, vec![n]).unwrap());
    let mut total = energy_probes(&sudoku, probes.div_ceil(2), seed, 0.3, 0.2);
    total.merge(energy_probes(
        &mixed,
        probes.div_ceil(2),
        seed + 1,
        1.5,
        0.0,
    ));
    total
}

/// Every category with `per_category` accepted probes.
pub fn gradient_suite(per_category: usize, seed: u64) -> Vec<(&'static str, ProbeStats)> {
    vec![
        (
            "tape conv/relu/scale/add/square_loss",
            tape_conv(per_category, seed),
        ),
        (
            "tape affine/relu/concat/square_loss",
            tape_affine(per_category, seed + 1),
        ),
        (
            "mlp trunk through cone and loss",
            mlp_loss(per_category, seed + 2),
        ),
        (
            "convnet trunk through cone and loss",
            convnet_loss(per_category, seed + 3),
        ),
        ("cone layers", cone_layers(per_category, seed + 4)),
        (
            "least-squares energies",
            least_squares(per_category, seed + 5),
        ),
        (
            "charbonnier tv and composite",
            total_variation(per_category, seed + 6),
        ),
        ("feasibility energies", feasibility(per_category, seed + 7)),
    ]
}
