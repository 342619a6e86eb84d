//! Backtracking descent `u⁺ = u − τd` with Armijo acceptance, the constant
//! step of the linear-rate result, stopping rules and iterate histories.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::cone::{ConeMode, ConeSpec};
use crate::energies::Energy;
use crate::error::{Error, Result};
use crate::models::DirectionOracle;
use crate::operators::LinearOperator;
use crate::problems::psnr;
use crate::tensor::Tensor;

pub const DEFAULT_C: f64 = 0.1;
pub const DEFAULT_RHO: f64 = 0.5;
pub const DEFAULT_MAX_BACKTRACKS: usize = 60;
pub const DEFAULT_MAX_OUTER_ITERS: usize = 1000;

/// Absolute slack added to the rate bound.
pub const RATE_BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepMode {
    LineSearch,
    Constant(f64),
}

#[derive(Clone, Debug)]
pub enum StoppingRule {
    /// Stop once `‖∇E(u)‖ ≤ tol`.
    GradNorm(f64),
    /// Stop at the first iterate with `‖Au − f‖ ≤ factor·delta`.
    Discrepancy {
        op: Arc<LinearOperator>,
        data: Tensor,
        delta: f64,
        factor: f64,
    },
    /// Run until `max_outer_iters`.
    MaxIters,
    Any(Vec<StoppingRule>),
}

impl StoppingRule {
    pub fn discrepancy(op: Arc<LinearOperator>, data: Tensor, delta: f64) -> Self {
        StoppingRule::Discrepancy {
            op,
            data,
            delta,
            factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingRule::GradNorm(tol) if !(*tol > 0.0) => Err(Error::InvalidArgument(format!(
                "gradient tolerance must be positive, got {tol}"
            ))),
            StoppingRule::Discrepancy {
                delta,
                factor,
                op,
                data,
            } => {
                if !(*delta >= 0.0) || !(*factor > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "discrepancy needs delta >= 0 and factor > 0, got {delta}, {factor}"
                    )));
                }
                data.check_shape("discrepancy data", &op.output_shape())
            }
            StoppingRule::Any(rules) => rules.iter().try_for_each(StoppingRule::validate),
            _ => Ok(()),
        }
    }

    fn triggered(&self, u: &Tensor, grad_norm: f64) -> Result<Option<StopReason>> {
        Ok(match self {
            StoppingRule::GradNorm(tol) => (grad_norm <= *tol).then_some(StopReason::GradNorm),
            StoppingRule::Discrepancy {
                op,
                data,
                delta,
                factor,
            } => {
                let r = op.apply(u)?.sub(data)?.norm();
                (r <= factor * delta).then_some(StopReason::Discrepancy)
            }
            StoppingRule::MaxIters => None,
            StoppingRule::Any(rules) => {
                for rule in rules {
                    if let Some(reason) = rule.triggered(u, grad_norm)? {
                        return Ok(Some(reason));
                    }
                }
                None
            }
        })
    }

    /// `‖Au − f‖` for the first discrepancy rule found.
    fn residual(&self, u: &Tensor) -> Result<Option<f64>> {
        match self {
            StoppingRule::Discrepancy { op, data, .. } => Ok(Some(op.apply(u)?.sub(data)?.norm())),
            StoppingRule::Any(rules) => {
                for rule in rules {
                    if let Some(r) = rule.residual(u)? {
                        return Ok(Some(r));
                    }
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentConfig {
    pub c: f64,
    pub rho: f64,
    pub max_outer_iters: usize,
    pub max_backtracks: usize,
    pub step_mode: StepMode,
    pub stop: StoppingRule,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            rho: DEFAULT_RHO,
            max_outer_iters: DEFAULT_MAX_OUTER_ITERS,
            max_backtracks: DEFAULT_MAX_BACKTRACKS,
            step_mode: StepMode::LineSearch,
            stop: StoppingRule::MaxIters,
        }
    }
}

impl DescentConfig {
    pub fn with_iters(max_outer_iters: usize) -> Self {
        Self {
            max_outer_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "c must lie in (0, 0.5), got {}",
                self.c
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if let StepMode::Constant(tau) = self.step_mode {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "constant step must be positive, got {tau}"
                )));
            }
        }
        self.stop.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub residual_norm: Option<f64>,
    /// Step that produced this iterate; `None` for the starting point.
    pub tau: Option<f64>,
    pub backtracks: Option<usize>,
    pub psnr: Option<f64>,
}

pub const HISTORY_HEADER: [&str; 7] = [
    "iter",
    "energy",
    "grad_norm",
    "residual_norm",
    "tau",
    "backtracks",
    "psnr",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterateHistory {
    pub records: Vec<HistoryRecord>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl IterateHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Indices `k` with `E(u^{k+1}) > E(u^k)`.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        self.records
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].energy > w[0].energy)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.monotonicity_violations().is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HISTORY_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.energy.to_string(),
                r.grad_norm.to_string(),
                opt(r.residual_norm),
                opt(r.tau),
                opt(r.backtracks),
                opt(r.psnr),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().ne(HISTORY_HEADER) {
            return Err(Error::Format(format!(
                "{}: unexpected history header {:?}",
                path.display(),
                headers
            )));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("{}: bad number {s:?}", path.display())))
            }
        };
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            let field = |i: usize| num(&row[i]);
            let required = |i: usize| {
                field(i)?.ok_or_else(|| {
                    Error::Format(format!("{}: missing {}", path.display(), HISTORY_HEADER[i]))
                })
            };
            records.push(HistoryRecord {
                iter: required(0)? as usize,
                energy: required(1)?,
                grad_norm: required(2)?,
                residual_norm: field(3)?,
                tau: field(4)?,
                backtracks: field(5)?.map(|b| b as usize),
                psnr: field(6)?,
            });
        }
        Ok(Self { records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradNorm,
    Discrepancy,
    MaxIters,
    /// The gradient vanished exactly.
    Stationary,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::GradNorm => "grad_norm",
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxIters => "max_iters",
            StopReason::Stationary => "stationary",
        })
    }
}

#[derive(Clone, Debug)]
pub struct DescentOutcome {
    pub u: Tensor,
    pub history: IterateHistory,
    pub stop_reason: StopReason,
}

/// Run the descent from `u0`. `reference` enables the PSNR column.
pub fn descend(
    energy: &Energy,
    oracle: &dyn DirectionOracle,
    u0: &Tensor,
    cfg: &DescentConfig,
    reference: Option<&Tensor>,
) -> Result<DescentOutcome> {
    cfg.validate()?;
    let mut u = u0.clone();
    let mut e = energy.value(&u)?;
    let mut g = energy.grad(&u)?;
    let residual = |u: &Tensor| -> Result<Option<f64>> {
        match energy.residual_norm(u)? {
            Some(r) => Ok(Some(r)),
            None => cfg.stop.residual(u),
        }
    };
    let record =
        |k: usize, u: &Tensor, e: f64, g: &Tensor, tau, backtracks| -> Result<HistoryRecord> {
            Ok(HistoryRecord {
                iter: k,
                energy: e,
                grad_norm: g.norm(),
                residual_norm: residual(u)?,
                tau,
                backtracks,
                psnr: reference.map(|r| psnr(u, r, 1.0)).transpose()?,
            })
        };
    let mut history = IterateHistory {
        records: vec![record(0, &u, e, &g, None, None)?],
    };

    let mut k = 0;
    let stop_reason = loop {
        let gn = g.norm();
        if let Some(reason) = cfg.stop.triggered(&u, gn)? {
            break reason;
        }
        if gn == 0.0 {
            break StopReason::Stationary;
        }
        if k == cfg.max_outer_iters {
            break StopReason::MaxIters;
        }
        let d = oracle.direction(&u, &g)?;
        d.check_shape("direction", u.shape())?;
        d.ensure_finite("direction")?;
        let slope = d.dot(&g)?;
        let failure = |backtracks| Error::LineSearchFailure {
            iteration: k,
            backtracks,
            slope,
            d_norm: d.norm(),
            g_norm: gn,
        };
        if !(slope > 0.0) {
            return Err(failure(0));
        }
        let (next, e_next, tau, backtracks) = match cfg.step_mode {
            StepMode::Constant(tau) => {
                let next = u.axpy(-tau, &d)?;
                let e_next = energy.value(&next)?;
                (next, e_next, tau, 0)
            }
            StepMode::LineSearch => {
                let mut tau = 1.0;
                let mut backtracks = 0;
                loop {
                    let candidate = u.axpy(-tau, &d)?;
                    if candidate.is_finite() {
                        let e_cand = energy.value(&candidate)?;
                        if e_cand <= e - cfg.c * tau * slope {
                            break (candidate, e_cand, tau, backtracks);
                        }
                    }
                    if backtracks == cfg.max_backtracks {
                        return Err(failure(backtracks));
                    }
                    tau *= cfg.rho;
                    backtracks += 1;
                }
            }
        };
        if !e_next.is_finite() {
            return Err(Error::NonFinite(format!("energy at iteration {}", k + 1)));
        }
        u = next;
        e = e_next;
        g = energy.grad(&u)?;
        k += 1;
        history
            .records
            .push(record(k, &u, e, &g, Some(tau), Some(backtracks))?);
    };
    Ok(DescentOutcome {
        u,
        history,
        stop_reason,
    })
}

/// Constant step `ζ₁/(ζ₂² L)` admissible for the bounded cone.
pub fn constant_step_tau(cone: &ConeSpec, lipschitz: f64) -> Result<f64> {
    let ConeMode::Bounded { zeta1, zeta2 } = cone.mode else {
        return Err(Error::InvalidArgument(
            "constant step needs a bounded cone".into(),
        ));
    };
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "L must be positive, got {lipschitz}"
        )));
    }
    Ok(zeta1 / (zeta2 * zeta2 * lipschitz))
}

/// The in-cone direction with the widest admissible angle to `g`:
/// `d = ζ₁g + sqrt(ζ₂² − ζ₁²)‖g‖ ĝ⊥`, with `ĝ⊥` the unit part of
/// `reference` orthogonal to `g`.
#[derive(Clone, Debug)]
pub struct WorstCaseAdversary {
    zeta1: f64,
    zeta2: f64,
    reference: Tensor,
}

impl WorstCaseAdversary {
    pub fn new(cone: &ConeSpec, reference: Tensor) -> Result<Self> {
        let ConeMode::Bounded { zeta1, zeta2 } = cone.mode else {
            return Err(Error::InvalidArgument(
                "adversary needs a bounded cone".into(),
            ));
        };
        Ok(Self {
            zeta1,
            zeta2,
            reference,
        })
    }

    fn orthogonal_unit(&self, g: &Tensor) -> Result<Tensor> {
        let gn2 = g.norm_sq();
        let project_out = |v: &Tensor| -> Result<Tensor> { v.axpy(-v.dot(g)? / gn2, g) };
        let p = project_out(&self.reference)?;
        let pn = p.norm();
        if pn > 1e-8 * self.reference.norm() {
            return Ok(p.scale(1.0 / pn));
        }
        // Reference parallel to g: fall back to the axis least aligned with g.
        let i = g
            .data()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut e = Tensor::zeros(g.shape());
        e.data_mut()[i] = 1.0;
        let p = project_out(&e)?;
        let pn = p.norm();
        Ok(if pn > 0.0 { p.scale(1.0 / pn) } else { p })
    }
}

impl DirectionOracle for WorstCaseAdversary {
    fn direction(&self, _u: &Tensor, g: &Tensor) -> Result<Tensor> {
        let gn = g.norm();
        if gn == 0.0 {
            return Ok(g.clone());
        }
        let perp = self.orthogonal_unit(g)?;
        let side = (self.zeta2 * self.zeta2 - self.zeta1 * self.zeta1)
            .max(0.0)
            .sqrt()
            * gn;
        g.scale(self.zeta1).axpy(side, &perp)
    }
}

#[derive(Clone, Debug)]
pub struct RateReport {
    pub tau: f64,
    /// Per-step contraction `1 − γ²μ/L`.
    pub factor: f64,
    /// `E(u^k) − E*` for `k = 0..=steps`.
    pub gaps: Vec<f64>,
    /// `factor^k (E(u⁰) − E*)`.
    pub bounds: Vec<f64>,
    /// Largest `gap − bound`; at most the slack when the bound holds.
    pub max_excess: f64,
}

impl RateReport {
    pub fn holds(&self) -> bool {
        self.max_excess <= RATE_BOUND_SLACK
    }

    /// First `k` with `gap_k ≤ tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.gaps.iter().position(|&g| g <= tol)
    }
}

/// Run `steps` constant-step iterations with `oracle` and compare the energy
/// gap against `(1 − γ²μ/L)^k`.
pub fn verify_linear_rate(
    energy: &Energy,
    cone: &ConeSpec,
    oracle: &dyn DirectionOracle,
    u0: &Tensor,
    steps: usize,
) -> Result<RateReport> {
    let cert = energy
        .smoothness_certificate()?
        .ok_or_else(|| Error::MissingCertificate("energy has no (L, mu) certificate".into()))?;
    let mu = cert
        .pl_modulus
        .ok_or_else(|| Error::MissingCertificate("energy has no PL modulus".into()))?;
    let e_star = energy
        .minimum_value()?
        .ok_or_else(|| Error::MissingCertificate("minimum value unknown".into()))?;
    let gamma = cone
        .gamma()
        .ok_or_else(|| Error::InvalidArgument("rate verification needs a bounded cone".into()))?;
    let tau = constant_step_tau(cone, cert.lipschitz)?;
    let factor = 1.0 - gamma * gamma * mu / cert.lipschitz;

    let mut u = u0.clone();
    let mut gaps = vec![energy.value(&u)? - e_star];
    for _ in 0..steps {
        let g = energy.grad(&u)?;
        let d = oracle.direction(&u, &g)?;
        u.axpy_mut(-tau, &d)?;
        gaps.push(energy.value(&u)? - e_star);
    }
    let bounds: Vec<f64> = (0..gaps.len())
        .map(|k| factor.powi(k as i32) * gaps[0])
        .collect();
    let max_excess = gaps
        .iter()
        .zip(&bounds)
        .map(|(g, b)| g - b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RateReport {
        tau,
        factor,
        gaps,
        bounds,
        max_excess,
    })
}
