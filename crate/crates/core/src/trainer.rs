//! Training direction models on the one-step loss `‖(u − G(u, f, ∇E(u))) − u*‖²`
//! with Adam, over a pool of iterates that is periodically regenerated by
//! running the current model ("lagged" training distribution).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::energies::Energy;
use crate::error::{Error, Result};
use crate::models::{DirectionModel, GradientOracle, ModelKind};
use crate::optimizer::{descend, DescentConfig, StoppingRule};
use crate::problems::ProblemInstance;
use crate::tensor::Tensor;

/// Gradient norm below which pool generation stops early.
pub const GENERATION_GRAD_TOL: f64 = 1e-12;

/// Everything needed to produce training iterates for one instance.
#[derive(Clone, Debug)]
pub struct TrainingProblem {
    pub energy: Energy,
    pub u0: Tensor,
    pub feature: Tensor,
    pub u_star: Tensor,
}

impl From<&ProblemInstance> for TrainingProblem {
    fn from(p: &ProblemInstance) -> Self {
        Self {
            energy: p.energy.clone(),
            u0: p.u0.clone(),
            feature: p.feature.clone(),
            u_star: p.ground_truth.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    GdBootstrap,
    ModelGeneration(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub problem: usize,
    pub u: Tensor,
    pub grad: Tensor,
    pub feature: Tensor,
    pub u_star: Tensor,
    /// Descent steps taken from `u0` to reach `u`.
    pub steps: usize,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingPool {
    pub entries: Vec<PoolEntry>,
}

impl TrainingPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Mini-batches between pool regenerations.
    pub regen_period: usize,
    /// Generation draws `k ~ U{0..k_max}` descent steps.
    pub k_max: usize,
    pub epochs: usize,
    pub samples_per_problem: usize,
    pub seed: u64,
    /// Save a checkpoint every this many mini-batches; `0` disables.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            regen_period: 100,
            k_max: 10,
            epochs: 10,
            samples_per_problem: 1,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return bad(format!(
                "lr and eps must be positive, got {} and {}",
                self.lr, self.eps
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if self.batch_size == 0 || self.regen_period == 0 || self.samples_per_problem == 0 {
            return bad("batch_size, regen_period and samples_per_problem must be positive".into());
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn draw_steps(
    problems: usize,
    samples: usize,
    k_max: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    (0..problems)
        .flat_map(|p| (0..samples).map(move |_| p))
        .map(|p| (p, rng.random_range(0..=k_max)))
        .collect()
}

fn generate(
    problems: &[TrainingProblem],
    plan: &[(usize, usize)],
    provenance: Provenance,
    grad_tol: f64,
    model: Option<&DirectionModel>,
) -> Result<TrainingPool> {
    let entries = plan
        .par_iter()
        .map(|&(p, k)| {
            let problem = &problems[p];
            let cfg = DescentConfig {
                max_outer_iters: k,
                stop: StoppingRule::GradNorm(grad_tol),
                ..DescentConfig::default()
            };
            let out = match model {
                None => descend(&problem.energy, &GradientOracle, &problem.u0, &cfg, None)?,
                Some(m) => descend(
                    &problem.energy,
                    &m.bind(&problem.feature),
                    &problem.u0,
                    &cfg,
                    None,
                )?,
            };
            out.u.ensure_finite("pool generation")?;
            Ok(PoolEntry {
                problem: p,
                grad: problem.energy.grad(&out.u)?,
                u: out.u,
                feature: problem.feature.clone(),
                u_star: problem.u_star.clone(),
                steps: out.history.steps(),
                provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingPool { entries })
}

/// Pool of plain gradient-descent iterates.
pub fn bootstrap_pool(
    problems: &[TrainingProblem],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPool> {
    let plan = draw_steps(problems.len(), cfg.samples_per_problem, cfg.k_max, rng);
    generate(
        problems,
        &plan,
        Provenance::GdBootstrap,
        GENERATION_GRAD_TOL,
        None,
    )
}

/// Fresh pool of iterates driven by `model`, tagged with `generation`.
/// The previous pool is dropped entirely.
pub fn regenerate_pool(
    model: &DirectionModel,
    problems: &[TrainingProblem],
    cfg: &TrainConfig,
    generation: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPool> {
    let plan = draw_steps(problems.len(), cfg.samples_per_problem, cfg.k_max, rng);
    // Below the cone's gradient floor membership is no longer guaranteed.
    let tol = GENERATION_GRAD_TOL.max(model.cone().grad_floor);
    generate(
        problems,
        &plan,
        Provenance::ModelGeneration(generation),
        tol,
        Some(model),
    )
}

/// Loss `‖(u − d) − u*‖²` of one entry and its gradient in the parameters.
pub fn sample_loss_and_grad(model: &DirectionModel, entry: &PoolEntry) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let (out, params) = model.record_trunk(&mut tape, &entry.u, &entry.feature, &entry.grad)?;
    let z = tape.value(out).clone().reshape(model.u_shape())?;
    let cone = model.cone();
    let d = cone.enforce(&z, &entry.grad)?;
    let residual = entry.u.sub(&d)?.sub(&entry.u_star)?;
    let loss = residual.norm_sq();
    // d/dd of ‖u − d − u*‖² is −2(u − d − u*).
    let seed_d = residual.scale(-2.0);
    let seed_z = cone.enforce_backward(&z, &entry.grad, &seed_d)?;
    let seed = seed_z.reshape(tape.value(out).shape())?;
    let grads = tape.backward(out, &seed)?;
    Ok((loss, model.flatten_grads(&grads, &params)?))
}

/// Mean loss and mean parameter gradient over `indices`. Per-sample work runs
/// in parallel; the reduction is sequential in index order.
pub fn batch_loss_and_grad(
    model: &DirectionModel,
    pool: &TrainingPool,
    indices: &[usize],
) -> Result<(f64, Tensor)> {
    let parts = indices
        .par_iter()
        .map(|&i| sample_loss_and_grad(model, &pool.entries[i]))
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.num_params()];
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, Tensor::vector(grad)))
}

/// Mean loss over the whole pool.
pub fn pool_loss(model: &DirectionModel, pool: &TrainingPool) -> Result<f64> {
    let all: Vec<usize> = (0..pool.len()).collect();
    Ok(batch_loss_and_grad(model, pool, &all)?.0)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DirectionModel,
    /// Mean mini-batch loss, one per batch.
    pub losses: Vec<f64>,
    pub regenerations: usize,
    pub pool: TrainingPool,
}

impl TrainOutcome {
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        write_loss_csv(&self.losses, out)
    }
}

pub fn write_loss_csv<W: Write>(losses: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch", "loss"])?;
    for (b, l) in losses.iter().enumerate() {
        w.write_record([b.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<loss csv>", e))
}

pub fn save_loss_csv(losses: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_loss_csv(losses, std::io::BufWriter::new(file))
}

/// Train `model` starting from `pool`; every `regen_period` mini-batches the
/// pool is replaced by iterates of the current model.
pub fn train(
    model: DirectionModel,
    pool: TrainingPool,
    problems: &[TrainingProblem],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.kind() == &ModelKind::RawGradient {
        return Err(Error::InvalidArgument(
            "raw_gradient has no trainable parameters".into(),
        ));
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("training pool is empty".into()));
    }
    let mut model = model;
    let mut pool = pool;
    let mut adam = Adam::from_config(model.num_params(), cfg);
    let mut losses = Vec::new();
    let mut regenerations = 0;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut batch = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if batch > 0 && batch % cfg.regen_period == 0 {
                regenerations += 1;
                let fresh = regenerate_pool(&model, problems, cfg, regenerations, rng)?;
                if fresh.len() != pool.len() {
                    return Err(Error::InvalidArgument(
                        "regenerated pool changed size".into(),
                    ));
                }
                pool = fresh;
            }
            let (loss, grad) = batch_loss_and_grad(&model, &pool, chunk)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NonFinite(format!("training loss at batch {batch}")));
            }
            let mut params = model.params().clone();
            adam.step(params.data_mut(), grad.data());
            model.set_params(params)?;
            losses.push(loss);
            batch += 1;
            if cfg.checkpoint_every > 0 && batch % cfg.checkpoint_every == 0 {
                if let Some(dir) = &cfg.checkpoint_dir {
                    model.save(dir.join(format!("checkpoint_{batch:06}.json")))?;
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        losses,
        regenerations,
        pool,
    })
}

/// Bootstrap a pool with gradient descent, then train.
pub fn bootstrap_and_train(
    model: DirectionModel,
    problems: &[TrainingProblem],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = bootstrap_pool(problems, cfg, &mut rng)?;
    train(model, pool, problems, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::ConeSpec;
    use crate::problems::toy2d;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut adam = Adam::new(1, 1e-3, 0.9, 0.999, 1e-8);
        let mut p = [0.5];
        adam.step(&mut p, &[1.0]);
        assert!((0.5 - p[0] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn k_max_zero_keeps_the_starts() {
        let problems: Vec<TrainingProblem> = [[1.0, 2.0], [-3.0, 0.5]]
            .iter()
            .map(|&s| TrainingProblem::from(&toy2d(s).unwrap()))
            .collect();
        let cfg = TrainConfig {
            k_max: 0,
            samples_per_problem: 3,
            ..TrainConfig::default()
        };
        let pool = bootstrap_pool(&problems, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pool.len(), 6);
        for e in &pool.entries {
            assert_eq!(e.u, problems[e.problem].u0);
            assert_eq!(e.provenance, Provenance::GdBootstrap);
        }
    }

    #[test]
    fn raw_gradient_cannot_be_trained() {
        let problems = vec![TrainingProblem::from(&toy2d([0.0, 0.0]).unwrap())];
        let model = DirectionModel::raw_gradient(ConeSpec::half_space(1.0).unwrap(), &[2]);
        assert!(bootstrap_and_train(model, &problems, &TrainConfig::default()).is_err());
    }
}
