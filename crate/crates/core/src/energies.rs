//! Differentiable energies and their smoothness certificates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feasibility::FeasibilityEnergy;
use crate::operators::LinearOperator;
use crate::tensor::Tensor;

/// Largest input dimension for which certificates and minima are computed by
/// dense eigendecomposition.
pub const DENSE_ANALYSIS_LIMIT: usize = 400;

pub const DEFAULT_TV_EPS: f64 = 0.01;
pub const DEFAULT_TV_ALPHA: f64 = 0.8;

/// Constants of the L-smoothness and PL inequalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothness {
    /// Lipschitz constant of the gradient.
    pub lipschitz: f64,
    /// Polyak-Łojasiewicz modulus, when known.
    pub pl_modulus: Option<f64>,
}

/// `½‖A u − f‖²`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    op: Arc<LinearOperator>,
    data: Tensor,
}

impl LeastSquares {
    pub fn new(op: Arc<LinearOperator>, data: Tensor) -> Result<Self> {
        data.check_shape("least_squares data", &op.output_shape())?;
        Ok(Self { op, data })
    }

    pub fn operator(&self) -> &Arc<LinearOperator> {
        &self.op
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn residual(&self, u: &Tensor) -> Result<Tensor> {
        self.op.apply(u)?.sub(&self.data)
    }

    fn value(&self, u: &Tensor) -> Result<f64> {
        Ok(0.5 * self.residual(u)?.norm_sq())
    }

    fn grad(&self, u: &Tensor) -> Result<Tensor> {
        self.op.adjoint(&self.residual(u)?)
    }

    fn normal_matrix(&self) -> Result<Option<DMatrix<f64>>> {
        let n = self.op.input_len();
        if n > DENSE_ANALYSIS_LIMIT {
            return Ok(None);
        }
        let a = DMatrix::from_row_slice(self.op.output_len(), n, &self.op.to_dense()?);
        Ok(Some(a.transpose() * a))
    }

    /// `L = λmax(AᵀA)` and `μ` = smallest nonzero eigenvalue of `AᵀA`.
    pub fn certificate(&self) -> Result<Option<Smoothness>> {
        match self.op.as_ref() {
            LinearOperator::Identity { .. } => {
                return Ok(Some(Smoothness {
                    lipschitz: 1.0,
                    pl_modulus: Some(1.0),
                }))
            }
            // A Aᵀ = I / k², so the nonzero spectrum of AᵀA is {1/k²}.
            LinearOperator::AvgPool { factor, .. } => {
                let v = 1.0 / (factor * factor) as f64;
                return Ok(Some(Smoothness {
                    lipschitz: v,
                    pl_modulus: Some(v),
                }));
            }
            _ => {}
        }
        if let Some(ata) = self.normal_matrix()? {
            let eig = ata.symmetric_eigen().eigenvalues;
            let lmax = eig.iter().copied().fold(0.0, f64::max);
            let cutoff = 1e-10 * lmax.max(f64::MIN_POSITIVE);
            let mu = eig
                .iter()
                .copied()
                .filter(|&e| e > cutoff)
                .fold(f64::INFINITY, f64::min);
            return Ok(Some(Smoothness {
                lipschitz: lmax,
                pl_modulus: mu.is_finite().then_some(mu),
            }));
        }
        Ok(Some(Smoothness {
            lipschitz: self.op.norm_sq_upper_bound(),
            pl_modulus: None,
        }))
    }

    /// `min_u ½‖Au − f‖² = ½‖(I − A A⁺) f‖²`, by direct dense solve.
    pub fn minimum_value(&self) -> Result<Option<f64>> {
        let n = self.op.input_len();
        if n > DENSE_ANALYSIS_LIMIT {
            return Ok(None);
        }
        let a = DMatrix::from_row_slice(self.op.output_len(), n, &self.op.to_dense()?);
        let f = DVector::from_column_slice(self.data.data());
        let svd = a.clone().svd(true, true);
        let x = svd
            .solve(&f, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("least-squares solve: {e}")))?;
        let r = &a * x - f;
        Ok(Some(0.5 * r.norm_squared()))
    }
}

/// Charbonnier total variation `Σ sqrt((Dₓu)² + (Dᵧu)² + ε²)` on an `[H, W]`
/// image, forward differences with replicate boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharbonnierTv {
    pub eps: f64,
    pub shape: [usize; 2],
}

impl CharbonnierTv {
    pub fn new(eps: f64, shape: [usize; 2]) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "TV epsilon must be positive, got {eps}"
            )));
        }
        Ok(Self { eps, shape })
    }

    fn diffs(&self, u: &[f64], i: usize, j: usize) -> (f64, f64) {
        let [h, w] = self.shape;
        let c = u[i * w + j];
        let dx = if j + 1 < w { u[i * w + j + 1] - c } else { 0.0 };
        let dy = if i + 1 < h {
            u[(i + 1) * w + j] - c
        } else {
            0.0
        };
        (dx, dy)
    }

    fn value(&self, u: &Tensor) -> f64 {
        let [h, w] = self.shape;
        let e2 = self.eps * self.eps;
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                let (dx, dy) = self.diffs(u.data(), i, j);
                total += (dx * dx + dy * dy + e2).sqrt();
            }
        }
        total
    }

    fn grad(&self, u: &Tensor) -> Tensor {
        let [h, w] = self.shape;
        let e2 = self.eps * self.eps;
        let mut g = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (dx, dy) = self.diffs(u.data(), i, j);
                let s = (dx * dx + dy * dy + e2).sqrt();
                let p = i * w + j;
                if j + 1 < w {
                    g[p] -= dx / s;
                    g[p + 1] += dx / s;
                }
                if i + 1 < h {
                    g[p] -= dy / s;
                    g[p + w] += dy / s;
                }
            }
        }
        Tensor::new(vec![h, w], g).expect("shape from self")
    }

    /// `‖D‖² / ε ≤ 8 / ε`.
    pub fn lipschitz(&self) -> f64 {
        8.0 / self.eps
    }
}

#[derive(Clone, Debug)]
pub enum Energy {
    LeastSquares(LeastSquares),
    CharbonnierTv(CharbonnierTv),
    /// Weighted sum `Σ wᵢ Eᵢ`.
    Composite(Vec<(f64, Energy)>),
    Feasibility(FeasibilityEnergy),
    /// Any energy with a user-supplied certificate.
    Certified {
        inner: Box<Energy>,
        certificate: Smoothness,
    },
}

impl Energy {
    pub fn least_squares(op: Arc<LinearOperator>, data: Tensor) -> Result<Self> {
        Ok(Energy::LeastSquares(LeastSquares::new(op, data)?))
    }

    pub fn charbonnier_tv(eps: f64, shape: [usize; 2]) -> Result<Self> {
        Ok(Energy::CharbonnierTv(CharbonnierTv::new(eps, shape)?))
    }

    /// `½‖Au − f‖² + α TVε(u)`; plain least squares when `α = 0`.
    pub fn regularized(
        op: Arc<LinearOperator>,
        data: Tensor,
        alpha: f64,
        eps: f64,
    ) -> Result<Self> {
        let shape = op.input_shape();
        let fidelity = Self::least_squares(op, data)?;
        if alpha == 0.0 {
            return Ok(fidelity);
        }
        let [h, w] = shape[..] else {
            return Err(Error::InvalidArgument(format!(
                "TV regularization needs a 2D image domain, got {shape:?}"
            )));
        };
        Ok(Energy::Composite(vec![
            (1.0, fidelity),
            (alpha, Self::charbonnier_tv(eps, [h, w])?),
        ]))
    }

    pub fn with_certificate(self, certificate: Smoothness) -> Self {
        Energy::Certified {
            inner: Box::new(self),
            certificate,
        }
    }

    pub fn domain_shape(&self) -> Vec<usize> {
        match self {
            Energy::LeastSquares(ls) => ls.op.input_shape(),
            Energy::CharbonnierTv(tv) => tv.shape.to_vec(),
            Energy::Composite(parts) => parts
                .first()
                .map(|(_, e)| e.domain_shape())
                .unwrap_or_default(),
            Energy::Feasibility(f) => f.shape().to_vec(),
            Energy::Certified { inner, .. } => inner.domain_shape(),
        }
    }

    fn check_input(&self, u: &Tensor) -> Result<()> {
        u.check_shape("energy", &self.domain_shape())?;
        u.ensure_finite("energy input")
    }

    pub fn value(&self, u: &Tensor) -> Result<f64> {
        self.check_input(u)?;
        self.value_unchecked(u)
    }

    fn value_unchecked(&self, u: &Tensor) -> Result<f64> {
        match self {
            Energy::LeastSquares(ls) => ls.value(u),
            Energy::CharbonnierTv(tv) => Ok(tv.value(u)),
            Energy::Composite(parts) => parts
                .iter()
                .map(|(w, e)| Ok(w * e.value_unchecked(u)?))
                .sum(),
            Energy::Feasibility(f) => f.value(u),
            Energy::Certified { inner, .. } => inner.value_unchecked(u),
        }
    }

    pub fn grad(&self, u: &Tensor) -> Result<Tensor> {
        self.check_input(u)?;
        self.grad_unchecked(u)
    }

    fn grad_unchecked(&self, u: &Tensor) -> Result<Tensor> {
        match self {
            Energy::LeastSquares(ls) => ls.grad(u),
            Energy::CharbonnierTv(tv) => Ok(tv.grad(u)),
            Energy::Composite(parts) => {
                let mut g = Tensor::zeros(u.shape());
                for (w, e) in parts {
                    g.axpy_mut(*w, &e.grad_unchecked(u)?)?;
                }
                Ok(g)
            }
            Energy::Feasibility(f) => f.grad(u),
            Energy::Certified { inner, .. } => inner.grad_unchecked(u),
        }
    }

    /// `(L, μ)` when it can be certified; `None` means unknown.
    pub fn smoothness_certificate(&self) -> Result<Option<Smoothness>> {
        Ok(match self {
            Energy::LeastSquares(ls) => ls.certificate()?,
            Energy::CharbonnierTv(tv) => Some(Smoothness {
                lipschitz: tv.lipschitz(),
                pl_modulus: None,
            }),
            Energy::Composite(parts) => {
                let mut total = 0.0;
                for (w, e) in parts {
                    match e.smoothness_certificate()? {
                        Some(s) => total += w.abs() * s.lipschitz,
                        None => return Ok(None),
                    }
                }
                Some(Smoothness {
                    lipschitz: total,
                    pl_modulus: None,
                })
            }
            Energy::Feasibility(_) => Some(Smoothness {
                lipschitz: 1.0,
                pl_modulus: None,
            }),
            Energy::Certified { certificate, .. } => Some(*certificate),
        })
    }

    /// The data-fidelity term, if this energy has one.
    pub fn fidelity(&self) -> Option<&LeastSquares> {
        match self {
            Energy::LeastSquares(ls) => Some(ls),
            Energy::Composite(parts) => parts.iter().find_map(|(_, e)| e.fidelity()),
            Energy::Certified { inner, .. } => inner.fidelity(),
            _ => None,
        }
    }

    /// `‖Au − f‖` of the fidelity term.
    pub fn residual_norm(&self, u: &Tensor) -> Result<Option<f64>> {
        self.fidelity()
            .map(|ls| Ok(ls.residual(u)?.norm()))
            .transpose()
    }

    /// Global minimum `E*` when it can be computed exactly.
    pub fn minimum_value(&self) -> Result<Option<f64>> {
        match self {
            Energy::LeastSquares(ls) => ls.minimum_value(),
            Energy::Certified { inner, .. } => inner.minimum_value(),
            _ => Ok(None),
        }
    }
}
