//! Descent-cone constraint sets and the layers that map arbitrary vectors
//! into them.
//!
//! With `g = ∇E(u)` and the update `u⁺ = u − τ d`, a direction `d` is a descent
//! direction when `⟨d, g⟩ > 0`. Three sets are supported:
//!
//! * half-space, absolute: `⟨d, g⟩ ≥ ζ‖g‖`, enforced by Euclidean projection;
//! * half-space, relative: `⟨d, g⟩ ≥ ζ‖g‖²`, same projection with `ζ‖g‖`;
//! * bounded: `⟨d, g⟩ ≥ ζ₁‖g‖²` and `‖d‖ ≤ ζ₂‖g‖`, enforced by a surjective
//!   parametrization that is the identity on members of the set.
//!
//! Every division by `‖g‖` uses `max(‖g‖, grad_floor)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GRAD_FLOOR: f64 = 1e-6;

/// Relative tolerance used by the post-hoc membership assertion.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConeMode {
    HalfSpaceAbsolute { zeta: f64 },
    HalfSpaceRelative { zeta: f64 },
    Bounded { zeta1: f64, zeta2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConeRepr", into = "ConeRepr")]
pub struct ConeSpec {
    pub mode: ConeMode,
    pub grad_floor: f64,
}

/// Flat JSON form: `{"mode": "...", "zeta": ..}` or `{"mode": "bounded", "zeta1": .., "zeta2": ..}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeRepr {
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zeta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zeta2: Option<f64>,
    #[serde(default = "default_grad_floor")]
    grad_floor: f64,
}

fn default_grad_floor() -> f64 {
    DEFAULT_GRAD_FLOOR
}

impl TryFrom<ConeRepr> for ConeSpec {
    type Error = Error;

    fn try_from(r: ConeRepr) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                Error::InvalidArgument(format!("cone mode `{}` needs `{name}`", r.mode))
            })
        };
        let mode = match r.mode.as_str() {
            "half_space_absolute" if r.zeta1.is_none() && r.zeta2.is_none() => {
                ConeMode::HalfSpaceAbsolute {
                    zeta: need(r.zeta, "zeta")?,
                }
            }
            "half_space_relative" if r.zeta1.is_none() && r.zeta2.is_none() => {
                ConeMode::HalfSpaceRelative {
                    zeta: need(r.zeta, "zeta")?,
                }
            }
            "bounded" if r.zeta.is_none() => ConeMode::Bounded {
                zeta1: need(r.zeta1, "zeta1")?,
                zeta2: need(r.zeta2, "zeta2")?,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown cone mode `{other}` or mismatched parameters"
                )))
            }
        };
        ConeSpec::new(mode, r.grad_floor)
    }
}

impl From<ConeSpec> for ConeRepr {
    fn from(c: ConeSpec) -> Self {
        let (mode, zeta, zeta1, zeta2) = match c.mode {
            ConeMode::HalfSpaceAbsolute { zeta } => ("half_space_absolute", Some(zeta), None, None),
            ConeMode::HalfSpaceRelative { zeta } => ("half_space_relative", Some(zeta), None, None),
            ConeMode::Bounded { zeta1, zeta2 } => ("bounded", None, Some(zeta1), Some(zeta2)),
        };
        ConeRepr {
            mode: mode.to_string(),
            zeta,
            zeta1,
            zeta2,
            grad_floor: c.grad_floor,
        }
    }
}

impl ConeSpec {
    pub fn half_space(zeta: f64) -> Result<Self> {
        Self::new(ConeMode::HalfSpaceAbsolute { zeta }, DEFAULT_GRAD_FLOOR)
    }

    pub fn half_space_relative(zeta: f64) -> Result<Self> {
        Self::new(ConeMode::HalfSpaceRelative { zeta }, DEFAULT_GRAD_FLOOR)
    }

    pub fn bounded(zeta1: f64, zeta2: f64) -> Result<Self> {
        Self::new(ConeMode::Bounded { zeta1, zeta2 }, DEFAULT_GRAD_FLOOR)
    }

    pub fn new(mode: ConeMode, grad_floor: f64) -> Result<Self> {
        let spec = Self { mode, grad_floor };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks `ζ > 0`, `0 < ζ₁ ≤ ζ₂` and `grad_floor > 0`. Specs with
    /// `ζ₁ > ζ₂` are rejected rather than swapped.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.grad_floor > 0.0 && self.grad_floor.is_finite()) {
            return bad(format!(
                "grad_floor must be positive, got {}",
                self.grad_floor
            ));
        }
        match self.mode {
            ConeMode::HalfSpaceAbsolute { zeta } | ConeMode::HalfSpaceRelative { zeta } => {
                if !(zeta > 0.0 && zeta.is_finite()) {
                    return bad(format!("zeta must be positive, got {zeta}"));
                }
            }
            ConeMode::Bounded { zeta1, zeta2 } => {
                if !(zeta1 > 0.0 && zeta1.is_finite() && zeta2.is_finite()) {
                    return bad(format!("zeta1 must be positive, got {zeta1}"));
                }
                if zeta1 > zeta2 {
                    return bad(format!(
                        "bounded cone needs zeta1 <= zeta2, got {zeta1} > {zeta2}"
                    ));
                }
            }
        }
        Ok(())
    }

    fn floored_norm(&self, g: &Tensor) -> f64 {
        g.norm().max(self.grad_floor)
    }

    /// Map `z` into the set defined by `g`.
    pub fn enforce(&self, z: &Tensor, g: &Tensor) -> Result<Tensor> {
        check_inputs(z, g)?;
        let gn = self.floored_norm(g);
        let d = match self.mode {
            ConeMode::HalfSpaceAbsolute { zeta } => half_space(z, g, gn, zeta)?,
            ConeMode::HalfSpaceRelative { zeta } => half_space(z, g, gn, zeta * gn)?,
            ConeMode::Bounded { zeta1, zeta2 } => bounded(z, g, gn, zeta1, zeta2)?.d,
        };
        if g.norm() >= self.grad_floor {
            self.check_membership(&d, g)?;
        }
        Ok(d)
    }

    /// Jacobian-transpose product `(∂ enforce / ∂z)ᵀ seed`. `g` is treated as
    /// a constant input.
    pub fn enforce_backward(&self, z: &Tensor, g: &Tensor, seed: &Tensor) -> Result<Tensor> {
        check_inputs(z, g)?;
        seed.check_shape("enforce_backward", z.shape())?;
        let gn = self.floored_norm(g);
        match self.mode {
            ConeMode::HalfSpaceAbsolute { zeta } => half_space_vjp(z, g, gn, zeta, seed),
            ConeMode::HalfSpaceRelative { zeta } => half_space_vjp(z, g, gn, zeta * gn, seed),
            ConeMode::Bounded { zeta1, zeta2 } => bounded_vjp(z, g, gn, zeta1, zeta2, seed),
        }
    }

    /// Signed slack of the defining inequalities, scaled to be dimensionless.
    /// Non-negative means `d` lies in the set; the first entry is the inner
    /// product condition, the second the norm bound (bounded mode only).
    pub fn slack(&self, d: &Tensor, g: &Tensor) -> Result<(f64, Option<f64>)> {
        let gn = g.norm();
        let dg = d.dot(g)?;
        let scale = 1.0f64.max(d.norm() * gn);
        Ok(match self.mode {
            ConeMode::HalfSpaceAbsolute { zeta } => ((dg - zeta * gn) / scale, None),
            ConeMode::HalfSpaceRelative { zeta } => ((dg - zeta * gn * gn) / scale, None),
            ConeMode::Bounded { zeta1, zeta2 } => {
                let bound = zeta2 * gn;
                (
                    (dg - zeta1 * gn * gn) / scale,
                    Some((bound - d.norm()) / 1.0f64.max(bound)),
                )
            }
        })
    }

    pub fn contains(&self, d: &Tensor, g: &Tensor, tol: f64) -> Result<bool> {
        let (a, b) = self.slack(d, g)?;
        Ok(a >= -tol && b.is_none_or(|b| b >= -tol))
    }

    pub fn check_membership(&self, d: &Tensor, g: &Tensor) -> Result<()> {
        if self.contains(d, g, MEMBERSHIP_TOL)? {
            Ok(())
        } else {
            let (a, b) = self.slack(d, g)?;
            Err(Error::ConeViolation(format!(
                "{:?}: slack {a:e}, norm slack {b:?}",
                self.mode
            )))
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.mode, ConeMode::Bounded { .. })
    }

    /// `ζ₁/ζ₂` for bounded cones.
    pub fn gamma(&self) -> Option<f64> {
        match self.mode {
            ConeMode::Bounded { zeta1, zeta2 } => Some(zeta1 / zeta2),
            _ => None,
        }
    }
}

fn check_inputs(z: &Tensor, g: &Tensor) -> Result<()> {
    z.check_shape("enforce", g.shape())?;
    z.ensure_finite("enforce input z")?;
    g.ensure_finite("enforce input g")
}

fn half_space(z: &Tensor, g: &Tensor, gn: f64, level: f64) -> Result<Tensor> {
    let n = g.scale(1.0 / gn);
    let t = level - z.dot(&n)?;
    if t > 0.0 {
        z.axpy(t, &n)
    } else {
        Ok(z.clone())
    }
}

fn half_space_vjp(z: &Tensor, g: &Tensor, gn: f64, level: f64, seed: &Tensor) -> Result<Tensor> {
    let n = g.scale(1.0 / gn);
    // Kink (t == 0) takes the projected branch.
    if level - z.dot(&n)? >= 0.0 {
        seed.axpy(-seed.dot(&n)?, &n)
    } else {
        Ok(seed.clone())
    }
}

/// Intermediate quantities of the bounded parametrization
/// `z ↦ η̂ g + Π_B(z − η g)`.
pub struct BoundedParts {
    pub d: Tensor,
    /// `η = ⟨z, g⟩ / ‖g‖²`.
    pub eta: f64,
    /// `η` clamped to `[ζ₁, ζ₂]`.
    pub eta_hat: f64,
    /// `z − η g`, orthogonal to `g`.
    pub residual: Tensor,
    /// Radius of the ball `B`.
    pub radius: f64,
}

pub fn bounded_parts(
    z: &Tensor,
    g: &Tensor,
    gn: f64,
    zeta1: f64,
    zeta2: f64,
) -> Result<BoundedParts> {
    let g2 = gn * gn;
    let eta = z.dot(g)? / g2;
    let eta_hat = eta.clamp(zeta1, zeta2);
    let residual = z.axpy(-eta, g)?;
    let radius = (zeta2 * zeta2 - eta_hat * eta_hat).max(0.0).sqrt() * gn;
    let rn = residual.norm();
    let projected = if rn <= radius {
        residual.clone()
    } else {
        residual.scale(radius / rn)
    };
    let d = projected.axpy(eta_hat, g)?;
    Ok(BoundedParts {
        d,
        eta,
        eta_hat,
        residual,
        radius,
    })
}

fn bounded(z: &Tensor, g: &Tensor, gn: f64, zeta1: f64, zeta2: f64) -> Result<BoundedParts> {
    bounded_parts(z, g, gn, zeta1, zeta2)
}

fn bounded_vjp(
    z: &Tensor,
    g: &Tensor,
    gn: f64,
    zeta1: f64,
    zeta2: f64,
    seed: &Tensor,
) -> Result<Tensor> {
    let parts = bounded_parts(z, g, gn, zeta1, zeta2)?;
    let g2 = gn * gn;
    // Clamp endpoints take the clamped branch.
    let eta_free = parts.eta > zeta1 && parts.eta < zeta2;
    let rn = parts.residual.norm();
    let inside = rn < parts.radius || rn == 0.0;

    // Adjoint of the orthogonal residual map r = (I − g gᵀ/‖g‖²) z.
    let residual_adj = |v: &Tensor| -> Result<Tensor> { v.axpy(-v.dot(g)? / g2, g) };

    let mut out = Tensor::zeros(z.shape());
    // d = η̂ g + p, the η̂ term first.
    let mut coeff_eta = if eta_free { seed.dot(g)? } else { 0.0 };

    if inside {
        out.axpy_mut(1.0, &residual_adj(seed)?)?;
    } else {
        let rhat = parts.residual.scale(1.0 / rn);
        let s_r = seed.dot(&rhat)?;
        let tangential = seed.axpy(-s_r, &rhat)?.scale(parts.radius / rn);
        out.axpy_mut(1.0, &residual_adj(&tangential)?)?;
        if eta_free {
            // radius = sqrt(ζ₂² − η̂²)‖g‖, so dR/dη̂ = −η̂‖g‖ / sqrt(ζ₂² − η̂²).
            let root = (zeta2 * zeta2 - parts.eta_hat * parts.eta_hat).sqrt();
            coeff_eta += s_r * (-parts.eta_hat * gn / root);
        }
    }
    if coeff_eta != 0.0 {
        out.axpy_mut(coeff_eta / g2, g)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn half_space_projects_onto_boundary() {
        let c = ConeSpec::half_space(2.0).unwrap();
        let d = c.enforce(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(d.data(), &[2.0, 0.0]);
        assert_eq!(d.dot(&v(&[1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn half_space_keeps_feasible_points() {
        let c = ConeSpec::half_space(2.0).unwrap();
        let d = c.enforce(&v(&[3.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(d.data(), &[3.0, 1.0]);
    }

    #[test]
    fn bounded_projects_onto_ball() {
        let c = ConeSpec::bounded(1.0, 2.0).unwrap();
        let d = c.enforce(&v(&[1.5, 10.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((d.data()[0] - 1.5).abs() < 1e-15);
        assert!((d.data()[1] - 1.75f64.sqrt()).abs() < 1e-15);
        assert!((d.norm_sq() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bounded_clamps_eta() {
        let c = ConeSpec::bounded(1.0, 2.0).unwrap();
        let d = c.enforce(&v(&[0.5, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0]);
    }

    #[test]
    fn reversed_bounds_rejected() {
        assert!(ConeSpec::bounded(2.0, 1.0).is_err());
        assert!(ConeSpec::half_space(0.0).is_err());
        assert!(ConeSpec::new(ConeMode::HalfSpaceAbsolute { zeta: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn relative_mode_scales_with_gradient() {
        let c = ConeSpec::half_space_relative(0.5).unwrap();
        let g = v(&[4.0, 0.0]);
        let d = c.enforce(&v(&[0.0, 1.0]), &g).unwrap();
        // ⟨d, g⟩ = ζ‖g‖² = 8
        assert!((d.dot(&g).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn half_space_jacobians() {
        let c = ConeSpec::half_space(2.0).unwrap();
        let g = v(&[1.0, 0.0]);
        let s = v(&[0.3, -0.7]);
        // inactive: identity
        let back = c.enforce_backward(&v(&[3.0, 1.0]), &g, &s).unwrap();
        assert_eq!(back, s);
        // active: I − n nᵀ
        let back = c.enforce_backward(&v(&[0.0, 1.0]), &g, &s).unwrap();
        assert_eq!(back.data(), &[0.0, -0.7]);
    }

    #[test]
    fn non_finite_rejected() {
        let c = ConeSpec::half_space(1.0).unwrap();
        assert!(matches!(
            c.enforce(&v(&[f64::NAN, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn serde_shape() {
        let c = ConeSpec::bounded(25.0, 10000.0).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(
            s,
            r#"{"mode":"bounded","zeta1":25.0,"zeta2":10000.0,"grad_floor":1e-6}"#
        );
        let back: ConeSpec =
            serde_json::from_str(r#"{"mode":"half_space_absolute","zeta":1.0}"#).unwrap();
        assert_eq!(back, ConeSpec::half_space(1.0).unwrap());
        assert!(
            serde_json::from_str::<ConeSpec>(r#"{"mode":"bounded","zeta1":2.0,"zeta2":1.0}"#)
                .is_err()
        );
        assert!(serde_json::from_str::<ConeSpec>(
            r#"{"mode":"bounded","zeta1":1.0,"zeta2":2.0,"x":1}"#
        )
        .is_err());
    }
}
