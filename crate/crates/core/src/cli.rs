//! The `dissipnet solve|train|sudoku|report` command surface.
//!
//! Every command writes into `<out>.partial` and renames it to `<out>` only
//! after all post-hoc checks passed; on failure the partial directory is
//! removed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::ConeSpec;
use crate::energies::{Energy, DEFAULT_TV_EPS};
use crate::error::{Error, Result};
use crate::feasibility::{
    read_puzzles, sudoku_encode, sudoku_one_hot, sudoku_round, Sudoku, SUDOKU_SHAPE,
};
use crate::models::{DirectionModel, GradientOracle, ModelKind};
use crate::optimizer::{
    descend, DescentConfig, DescentOutcome, IterateHistory, StepMode, StoppingRule,
};
use crate::problems::{
    make_phantom_inverse, make_superres, make_toy2d, toy2d, write_pgm, PhantomConfig,
    ProblemInstance,
};
use crate::tensor::Tensor;
use crate::trainer::{bootstrap_and_train, save_loss_csv, TrainConfig, TrainingProblem};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "DISSIPNET_THREADS";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";
/// Gradient norm at which Sudoku descents stop early.
pub const SUDOKU_GRAD_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(
    name = "dissipnet",
    version,
    about = "Energy-dissipating descent with learned directions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the descent on the configured problem.
    Solve(RunArgs),
    /// Bootstrap, train with lagged regeneration, save the model.
    Train(RunArgs),
    /// Solve a puzzle file by descent on the feasibility energy.
    Sudoku(SudokuArgs),
    /// Merge run histories into comparison tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON run configuration.
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `descent.max_outer_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SudokuArgs {
    /// One puzzle per line, `.` or `0` for blanks.
    pub puzzles: PathBuf,
    /// Reference solutions in the same order.
    #[arg(long)]
    pub solutions: Option<PathBuf>,
    /// `gd` or a saved model file.
    #[arg(long, default_value = "gd")]
    pub model: String,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `sudoku.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories containing `history.csv`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Toy2d {
        #[serde(default = "default_toy_start")]
        start: [f64; 2],
        #[serde(default = "default_toy_train_starts")]
        train_starts: usize,
    },
    Superres {
        #[serde(default = "default_patch")]
        patch_size: usize,
        #[serde(default = "default_factor")]
        factor: usize,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default)]
        index: usize,
    },
    Phantom {
        #[serde(default = "default_phantom_size")]
        size: usize,
        #[serde(default = "default_blur_sigma")]
        blur_sigma: f64,
        #[serde(default = "default_blur_radius")]
        blur_radius: usize,
        #[serde(default = "default_phantom_noise")]
        noise_sigma: f64,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default)]
        index: usize,
    },
}

fn default_toy_start() -> [f64; 2] {
    [-4.0, 3.0]
}
fn default_toy_train_starts() -> usize {
    64
}
fn default_patch() -> usize {
    crate::problems::DEFAULT_PATCH
}
fn default_factor() -> usize {
    crate::problems::DEFAULT_FACTOR
}
fn default_count() -> usize {
    8
}
fn default_phantom_size() -> usize {
    PhantomConfig::default().size
}
fn default_blur_sigma() -> f64 {
    PhantomConfig::default().blur_sigma
}
fn default_blur_radius() -> usize {
    PhantomConfig::default().blur_radius
}
fn default_phantom_noise() -> f64 {
    PhantomConfig::default().noise_sigma
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// TV weight; `0` keeps plain least squares.
    pub alpha: f64,
    pub eps: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            eps: DEFAULT_TV_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Saved weights to load instead of a fresh initialization.
    pub path: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::RawGradient,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentSection {
    pub c: f64,
    pub rho: f64,
    pub max_outer_iters: usize,
    pub max_backtracks: usize,
    /// Use this fixed step instead of the line search.
    pub constant_step: Option<f64>,
    pub grad_tol: Option<f64>,
    /// Enables the discrepancy rule `‖Au − f‖ ≤ factor·‖ξ‖`.
    pub discrepancy_factor: Option<f64>,
}

impl Default for DescentSection {
    fn default() -> Self {
        let d = DescentConfig::default();
        Self {
            c: d.c,
            rho: d.rho,
            max_outer_iters: 100,
            max_backtracks: d.max_backtracks,
            constant_step: None,
            grad_tol: Some(1e-6),
            discrepancy_factor: None,
        }
    }
}

impl DescentSection {
    pub fn to_config(&self, instance: &ProblemInstance) -> DescentConfig {
        let mut rules = Vec::new();
        if let Some(tol) = self.grad_tol {
            rules.push(StoppingRule::GradNorm(tol));
        }
        if let Some(factor) = self.discrepancy_factor {
            rules.push(instance.discrepancy_rule(factor));
        }
        DescentConfig {
            c: self.c,
            rho: self.rho,
            max_outer_iters: self.max_outer_iters,
            max_backtracks: self.max_backtracks,
            step_mode: self
                .constant_step
                .map_or(StepMode::LineSearch, StepMode::Constant),
            stop: if rules.is_empty() {
                StoppingRule::MaxIters
            } else {
                StoppingRule::Any(rules)
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub energy: EnergyConfig,
    pub cone: ConeSpec,
    pub model: ModelConfig,
    pub descent: DescentSection,
    /// `train.seed` is taken from the top-level `seed`.
    pub train: TrainConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::Toy2d {
                start: default_toy_start(),
                train_starts: default_toy_train_starts(),
            },
            energy: EnergyConfig::default(),
            cone: ConeSpec::half_space_relative(0.1).expect("valid default cone"),
            model: ModelConfig::default(),
            descent: DescentSection::default(),
            train: TrainConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn apply_overrides(&mut self, args: &RunArgs) {
        if let Some(seed) = args.seed {
            self.seed = seed;
            self.train.seed = seed;
        }
        if let Some(iters) = args.iters {
            self.descent.max_outer_iters = iters;
        }
        if let Some(out) = &args.out {
            self.output_dir = out.clone();
        }
    }

    /// Instances for training (all of them) or solving (just the selected one).
    pub fn instances(&self, training: bool) -> Result<Vec<ProblemInstance>> {
        let mut out = match &self.problem {
            ProblemConfig::Toy2d {
                start,
                train_starts,
            } => {
                if self.energy.alpha != 0.0 {
                    return Err(Error::InvalidArgument(
                        "toy2d has no image domain for TV".into(),
                    ));
                }
                if training {
                    make_toy2d(*train_starts, self.seed)?
                } else {
                    vec![toy2d(*start)?]
                }
            }
            ProblemConfig::Superres {
                patch_size,
                factor,
                noise_sigma,
                count,
                index,
            } => {
                let all = make_superres(
                    *patch_size,
                    *factor,
                    *noise_sigma,
                    (*count).max(index + 1),
                    self.seed,
                )?;
                select(all, training, *count, *index)?
            }
            ProblemConfig::Phantom {
                size,
                blur_sigma,
                blur_radius,
                noise_sigma,
                count,
                index,
            } => {
                let make = |i: usize| {
                    make_phantom_inverse(&PhantomConfig {
                        size: *size,
                        blur_sigma: *blur_sigma,
                        blur_radius: *blur_radius,
                        noise_sigma: *noise_sigma,
                        alpha: 0.0,
                        eps: self.energy.eps,
                        seed: self.seed.wrapping_add(i as u64),
                    })
                };
                if training {
                    (0..*count).map(make).collect::<Result<Vec<_>>>()?
                } else {
                    vec![make(*index)?]
                }
            }
        };
        if self.energy.alpha != 0.0 {
            out = out
                .into_iter()
                .map(|p| p.with_tv(self.energy.alpha, self.energy.eps))
                .collect::<Result<_>>()?;
        }
        Ok(out)
    }

    /// Model for `instance`: raw gradient, loaded weights, or a fresh init.
    pub fn model_for(&self, instance: &ProblemInstance) -> Result<DirectionModel> {
        let u_shape = instance.u0.shape();
        if self.model.kind == ModelKind::RawGradient {
            return Ok(DirectionModel::raw_gradient(self.cone, u_shape));
        }
        let template = DirectionModel::new(
            self.model.kind.clone(),
            self.cone,
            u_shape,
            instance.feature.shape(),
            self.seed,
        )?;
        match &self.model.path {
            None => Ok(template),
            Some(path) => {
                let loaded = DirectionModel::load_matching(path, &template)?;
                if loaded.cone() != template.cone() {
                    return Err(Error::Manifest {
                        expected: format!("cone {:?}", template.cone()),
                        found: format!("cone {:?}", loaded.cone()),
                    });
                }
                Ok(loaded)
            }
        }
    }
}

fn select(
    all: Vec<ProblemInstance>,
    training: bool,
    count: usize,
    index: usize,
) -> Result<Vec<ProblemInstance>> {
    if training {
        Ok(all.into_iter().take(count).collect())
    } else {
        all.into_iter()
            .nth(index)
            .map(|p| vec![p])
            .ok_or_else(|| Error::InvalidArgument(format!("instance index {index} out of range")))
    }
}

/// Run `f` against `<out>.partial`, then move it to `out`; on error the
/// partial directory is removed.
pub fn with_output_dir<T>(out: &Path, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let mut partial = out.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    std::fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    match f(&partial) {
        Ok(value) => {
            if out.exists() {
                std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
            }
            std::fs::rename(&partial, out).map_err(|e| Error::io(out, e))?;
            Ok(value)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_vector_csv(path: &Path, u: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "value"])?;
    for (i, v) in u.data().iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_monotone(history: &IterateHistory, what: &str) -> Result<()> {
    match history.monotonicity_violations().first() {
        None => Ok(()),
        Some(k) => Err(Error::InvalidArgument(format!(
            "{what}: energy increased between iterations {k} and {}",
            k + 1
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct SolveSummary {
    pub name: String,
    pub outcome: DescentOutcome,
    pub psnr: f64,
}

impl SolveSummary {
    pub fn line(&self) -> String {
        let last = self.outcome.history.last().expect("history has the start");
        format!(
            "{}: energy {:.6e}, residual {}, psnr {:.3} dB, iterations {}, stop {}",
            self.name,
            last.energy,
            last.residual_norm
                .map_or("-".to_string(), |r| format!("{r:.6e}")),
            self.psnr,
            self.outcome.history.steps(),
            self.outcome.stop_reason
        )
    }
}

/// Descend on the configured instance, without touching the filesystem
/// except for loading model weights.
pub fn solve_in_memory(cfg: &RunConfig) -> Result<SolveSummary> {
    let instance = cfg.instances(false)?.remove(0);
    let model = cfg.model_for(&instance)?;
    solve_with_model(cfg, &instance, &model)
}

pub fn solve_with_model(
    cfg: &RunConfig,
    instance: &ProblemInstance,
    model: &DirectionModel,
) -> Result<SolveSummary> {
    let descent = cfg.descent.to_config(instance);
    let outcome = descend(
        &instance.energy,
        &model.bind(&instance.feature),
        &instance.u0,
        &descent,
        Some(&instance.ground_truth),
    )?;
    check_monotone(&outcome.history, &instance.name)?;
    let psnr = crate::problems::psnr(&outcome.u, &instance.ground_truth, 1.0)?;
    Ok(SolveSummary {
        name: instance.name.clone(),
        outcome,
        psnr,
    })
}

pub fn cmd_solve(args: &RunArgs) -> Result<SolveSummary> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(args);
    let out = cfg.output_dir.clone();
    with_output_dir(&out, |dir| {
        write_json(&dir.join(RESOLVED_CONFIG), &cfg)?;
        let summary = solve_in_memory(&cfg)?;
        summary.outcome.history.save_csv(dir.join("history.csv"))?;
        write_vector_csv(&dir.join("final_u.csv"), &summary.outcome.u)?;
        if summary.outcome.u.shape().len() == 2 {
            write_pgm(dir.join("final.pgm"), &summary.outcome.u)?;
        }
        let last = summary
            .outcome
            .history
            .last()
            .expect("history has the start");
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record([
            "name",
            "final_energy",
            "residual_norm",
            "psnr",
            "iterations",
            "stop_reason",
        ])?;
        w.write_record([
            summary.name.clone(),
            last.energy.to_string(),
            last.residual_norm
                .map(|r| r.to_string())
                .unwrap_or_default(),
            summary.psnr.to_string(),
            summary.outcome.history.steps().to_string(),
            summary.outcome.stop_reason.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(summary)
    })
}

/// Train per the config; returns the model and per-batch losses.
pub fn train_in_memory(
    cfg: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<crate::trainer::TrainOutcome> {
    let instances = cfg.instances(true)?;
    let first = instances
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training instances".into()))?;
    let model = cfg.model_for(first)?;
    let problems: Vec<TrainingProblem> = instances.iter().map(TrainingProblem::from).collect();
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    train.checkpoint_dir = checkpoint_dir.map(Path::to_path_buf);
    bootstrap_and_train(model, &problems, &train)
}

pub fn cmd_train(args: &RunArgs) -> Result<crate::trainer::TrainOutcome> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply_overrides(args);
    let out = cfg.output_dir.clone();
    with_output_dir(&out, |dir| {
        write_json(&dir.join(RESOLVED_CONFIG), &cfg)?;
        let outcome = train_in_memory(&cfg, Some(dir))?;
        outcome.model.save(dir.join("model.json"))?;
        save_loss_csv(&outcome.losses, dir.join("loss.csv"))?;
        println!(
            "trained {} parameters: {} batches, {} regenerations, loss {:.6e} -> {:.6e}",
            outcome.model.num_params(),
            outcome.losses.len(),
            outcome.regenerations,
            outcome.losses.first().copied().unwrap_or(f64::NAN),
            outcome.losses.last().copied().unwrap_or(f64::NAN),
        );
        Ok(outcome)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SudokuResult {
    pub grid: Sudoku,
    /// `None` without a reference solution.
    pub accuracy: Option<f64>,
    pub solved: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
}

/// Descend on one puzzle with `model` (`None` is plain gradient descent).
pub fn solve_sudoku(
    puzzle: &Sudoku,
    reference: Option<&Sudoku>,
    model: Option<&DirectionModel>,
    iters: usize,
    seed: u64,
) -> Result<SudokuResult> {
    let relax = sudoku_encode(puzzle, seed)?;
    let energy = Energy::Feasibility(relax.energy);
    let cfg = DescentConfig {
        max_outer_iters: iters,
        stop: StoppingRule::GradNorm(SUDOKU_GRAD_TOL),
        ..DescentConfig::default()
    };
    let out = match model {
        None => descend(&energy, &GradientOracle, &relax.initial, &cfg, None)?,
        Some(m) => {
            let givens = sudoku_one_hot(puzzle);
            descend(&energy, &m.bind(&givens), &relax.initial, &cfg, None)?
        }
    };
    check_monotone(&out.history, &format!("sudoku {puzzle}"))?;
    let (grid, valid) = sudoku_round(&out.u)?;
    let reference = reference.or(puzzle.is_valid_solution().then_some(puzzle));
    Ok(SudokuResult {
        grid,
        accuracy: reference.map(|r| grid.accuracy_against(r)),
        solved: valid && puzzle.agrees_with(&grid) && reference.is_none_or(|r| *r == grid),
        initial_energy: out.history.records[0].energy,
        final_energy: out.history.last().expect("history has the start").energy,
        iterations: out.history.steps(),
    })
}

#[derive(Clone, Debug)]
pub struct SudokuReport {
    pub method: String,
    pub results: Vec<SudokuResult>,
}

impl SudokuReport {
    /// Mean accuracy over puzzles with a reference.
    pub fn accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.results.iter().filter_map(|r| r.accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn solve_rate(&self) -> f64 {
        self.results.iter().filter(|r| r.solved).count() as f64 / self.results.len().max(1) as f64
    }

    pub fn table(&self) -> String {
        let acc = self
            .accuracy()
            .map_or("-".to_string(), |a| format!("{:.1}%", 100.0 * a));
        format!(
            "{:<12} {:>8} {:>8}\n{:<12} {:>8} {:>7.1}%",
            "Method",
            "Acc.",
            "Solve",
            self.method,
            acc,
            100.0 * self.solve_rate()
        )
    }
}

pub fn run_sudoku(
    puzzles: &[Sudoku],
    solutions: Option<&[Sudoku]>,
    model: Option<&DirectionModel>,
    iters: usize,
    seed: u64,
) -> Result<Vec<SudokuResult>> {
    if let Some(s) = solutions {
        if s.len() != puzzles.len() {
            return Err(Error::InvalidArgument(format!(
                "{} puzzles but {} solutions",
                puzzles.len(),
                s.len()
            )));
        }
    }
    puzzles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            solve_sudoku(
                p,
                solutions.map(|s| &s[i]),
                model,
                iters,
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}

pub fn cmd_sudoku(args: &SudokuArgs) -> Result<SudokuReport> {
    let puzzles = read_puzzles(&args.puzzles)?;
    let solutions = args.solutions.as_ref().map(read_puzzles).transpose()?;
    let model = match args.model.as_str() {
        "gd" => None,
        path => {
            let m = DirectionModel::load(path)?;
            if m.u_shape() != SUDOKU_SHAPE {
                return Err(Error::Manifest {
                    expected: format!("model on {SUDOKU_SHAPE:?}"),
                    found: format!("{:?}", m.u_shape()),
                });
            }
            Some(m)
        }
    };
    let results = run_sudoku(
        &puzzles,
        solutions.as_deref(),
        model.as_ref(),
        args.iters,
        args.seed,
    )?;
    let report = SudokuReport {
        method: if model.is_some() {
            "model".into()
        } else {
            "gd".into()
        },
        results,
    };
    if let Some(out) = &args.out {
        with_output_dir(out, |dir| {
            let path = dir.join("sudoku.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([
                "puzzle",
                "accuracy",
                "solved",
                "initial_energy",
                "final_energy",
                "iterations",
                "grid",
            ])?;
            for (i, r) in report.results.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                    r.solved.to_string(),
                    r.initial_energy.to_string(),
                    r.final_energy.to_string(),
                    r.iterations.to_string(),
                    r.grid.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        })?;
    }
    Ok(report)
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Write one `iter,<run>...` table per column of interest.
pub fn merge_histories(runs: &[(String, IterateHistory)], dir: &Path) -> Result<()> {
    let len = runs.iter().map(|(_, h)| h.len()).max().unwrap_or(0);
    type Column = fn(&crate::optimizer::HistoryRecord) -> Option<f64>;
    let tables: [(&str, Column); 2] = [
        ("psnr_vs_iter.csv", |r| r.psnr),
        ("residual_sq_vs_iter.csv", |r| {
            r.residual_norm.map(|x| x * x)
        }),
    ];
    for (file, column) in tables {
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(runs.iter().map(|(name, _)| name.clone()));
        w.write_record(&header)?;
        for k in 0..len {
            let mut row = vec![k.to_string()];
            row.extend(runs.iter().map(|(_, h)| {
                h.records
                    .get(k)
                    .and_then(column)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            }));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .par_iter()
        .map(|dir| {
            Ok((
                run_label(dir),
                IterateHistory::read_csv(dir.join("history.csv"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    with_output_dir(&args.out, |dir| merge_histories(&runs, dir))
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value.parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
        // A pool that already exists is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Solve(args) => println!("{}", cmd_solve(args)?.line()),
        Command::Train(args) => {
            cmd_train(args)?;
        }
        Command::Sudoku(args) => println!("{}", cmd_sudoku(args)?.table()),
        Command::Report(args) => cmd_report(args)?,
    }
    Ok(())
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
