//! Policy-parameter and Lagrange-multiplier updates: box projections,
//! multi-timescale step-size schedules, first-order and Newton actor steps,
//! dual ascent on the variance constraint, and Sharpe-ratio directions.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::perturb::{PerturbKind, PerturbationDraw};

/// Variance floor for Sharpe-ratio denominators.
pub const EPS_VAR: f64 = 1e-8;

/// One power-law step rule ζ(n) = c·n^{−p}.
#[derive(Clone, Copy, Debug)]
pub struct PowerRule {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerRule {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("step scale must be positive, got {scale}")));
        }
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::Config(format!(
                "step exponent must lie in (0.5, 1] for square-summability, got {exponent}"
            )));
        }
        Ok(PowerRule { scale, exponent })
    }

    #[inline]
    pub fn at(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        self.scale * libm::pow(n as f64, -self.exponent)
    }
}

/// The four coupled schedules: λ on ζ₁ (slowest), θ on ζ₂, the Hessian
/// estimate on ζ₂′, the critic on ζ₃ (fastest), plus ζ₄ = k·ζ₃ for the
/// average-reward running means. Exponent ordering p₁ > p₂ > p₂′ > p₃
/// enforces the timescale separation.
#[derive(Clone, Copy, Debug)]
pub struct StepSchedules {
    pub zeta1: PowerRule,
    pub zeta2: PowerRule,
    pub zeta2p: PowerRule,
    pub zeta3: PowerRule,
    pub k: f64,
}

impl StepSchedules {
    pub fn new(
        zeta1: PowerRule,
        zeta2: PowerRule,
        zeta2p: PowerRule,
        zeta3: PowerRule,
        k: f64,
    ) -> Result<Self> {
        if !(zeta1.exponent > zeta2.exponent
            && zeta2.exponent > zeta2p.exponent
            && zeta2p.exponent > zeta3.exponent)
        {
            return Err(Error::Config(format!(
                "timescale ordering requires p1 > p2 > p2' > p3, got ({}, {}, {}, {})",
                zeta1.exponent, zeta2.exponent, zeta2p.exponent, zeta3.exponent
            )));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Config(format!("k must be positive, got {k}")));
        }
        Ok(StepSchedules { zeta1, zeta2, zeta2p, zeta3, k })
    }

    /// Exponents (1, 0.75, 0.7, 0.66) with unit scales and k = 1.
    pub fn standard() -> Self {
        StepSchedules::new(
            PowerRule::new(1.0, 1.0).unwrap(),
            PowerRule::new(1.0, 0.75).unwrap(),
            PowerRule::new(1.0, 0.7).unwrap(),
            PowerRule::new(1.0, 0.66).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[inline]
    pub fn zeta1(&self, n: usize) -> f64 {
        self.zeta1.at(n)
    }

    #[inline]
    pub fn zeta2(&self, n: usize) -> f64 {
        self.zeta2.at(n)
    }

    #[inline]
    pub fn zeta2p(&self, n: usize) -> f64 {
        self.zeta2p.at(n)
    }

    #[inline]
    pub fn zeta3(&self, n: usize) -> f64 {
        self.zeta3.at(n)
    }

    #[inline]
    pub fn zeta4(&self, n: usize) -> f64 {
        self.k * self.zeta3.at(n)
    }
}

/// Per-coordinate box for θ.
#[derive(Clone, Debug)]
pub struct ThetaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Config(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Config(format!("invalid box coordinate [{l}, {h}]")));
            }
        }
        Ok(ThetaBox { lo, hi })
    }

    /// The same interval [lo, hi] in every coordinate.
    pub fn uniform(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        ThetaBox::new(alloc::vec![lo; dim], alloc::vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lo.len()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| *t >= *l && *t <= *h)
    }
}

/// Coordinate-wise clamp of θ into the box.
pub fn project_theta(theta: &[f64], b: &ThetaBox) -> Vec<f64> {
    theta
        .iter()
        .zip(b.lo.iter().zip(&b.hi))
        .map(|(t, (l, h))| t.max(*l).min(*h))
        .collect()
}

/// Policy parameters, their box, and the Lagrange multiplier state.
#[derive(Clone, Debug)]
pub struct ActorState {
    pub theta: Vec<f64>,
    pub theta_box: ThetaBox,
    pub lambda: f64,
    pub lambda_max: f64,
    /// Variance bound α of the constraint Λ ≤ α.
    pub alpha: f64,
}

impl ActorState {
    /// Start at the box midpoint with λ = 0 (risk-neutral until the
    /// constraint is observed violated).
    pub fn new(theta_box: ThetaBox, lambda_max: f64, alpha: f64) -> Result<Self> {
        if !(lambda_max > 0.0) {
            return Err(Error::Config(format!("lambda_max must be positive, got {lambda_max}")));
        }
        let theta = theta_box.midpoint();
        Ok(ActorState { theta, theta_box, lambda: 0.0, lambda_max, alpha })
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta_box.dim() {
            return Err(Error::Config(format!(
                "theta has length {}, box has dimension {}",
                theta.len(),
                self.theta_box.dim()
            )));
        }
        self.theta = project_theta(&theta, &self.theta_box);
        Ok(self)
    }
}

/// θ ← Γ(θ + ζ₂·direction). `direction` is the ascent direction produced
/// by the estimator modules.
pub fn first_order_step(actor: &mut ActorState, direction: &[f64], zeta2: f64) {
    debug_assert_eq!(direction.len(), actor.theta.len());
    for (t, d) in actor.theta.iter_mut().zip(direction) {
        *t += zeta2 * d;
    }
    actor.theta = project_theta(&actor.theta, &actor.theta_box);
}

/// θ ← Γ(θ + ζ₂·M·direction) with M the projected inverse Hessian.
pub fn newton_step(
    actor: &mut ActorState,
    m: &DMatrix<f64>,
    direction: &[f64],
    zeta2: f64,
) -> Result<()> {
    let k = actor.theta.len();
    if m.nrows() != k || m.ncols() != k || direction.len() != k {
        return Err(Error::Config(format!(
            "newton step dimension mismatch: theta {k}, M {}x{}, direction {}",
            m.nrows(),
            m.ncols(),
            direction.len()
        )));
    }
    let scaled = m * DVector::from_column_slice(direction);
    for (t, d) in actor.theta.iter_mut().zip(scaled.iter()) {
        *t += zeta2 * d;
    }
    actor.theta = project_theta(&actor.theta, &actor.theta_box);
    Ok(())
}

/// λ ← Γ_λ(λ + ζ₁·(variance estimate − α)), clamped to [0, λ_max].
pub fn lambda_step(actor: &mut ActorState, lambda_hat_variance: f64, zeta1: f64) {
    let raw = actor.lambda + zeta1 * (lambda_hat_variance - actor.alpha);
    actor.lambda = raw.max(0.0).min(actor.lambda_max);
}

/// Average-reward ascent direction (1 + 2λρ̂)·δψ − λ·εψ; with λ = 0 this is
/// the plain compatible-feature actor-critic direction δψ.
pub fn average_actor_direction(
    delta: f64,
    epsilon: f64,
    psi: &[f64],
    rho_hat: f64,
    lambda: f64,
) -> Vec<f64> {
    let scale = (1.0 + 2.0 * lambda * rho_hat) * delta - lambda * epsilon;
    psi.iter().map(|p| scale * p).collect()
}

/// Sharpe-ratio ascent direction for the discounted setting. The bracket
/// dV − v(x⁰)·(dU − 2 v(x⁰) dV)/(2Λ̂) with Λ̂ = u(x⁰) − v(x⁰)² is divided by
/// √Λ̂ and mapped through the perturbation like the plain gradient
/// estimators: SPSA divides by βΔ⁽ⁱ⁾, SF multiplies by Δ⁽ⁱ⁾/β.
pub fn sharpe_direction_discounted(
    dv: f64,
    du: f64,
    v_x0: f64,
    u_x0: f64,
    draw: &PerturbationDraw,
) -> Result<Vec<f64>> {
    let var = u_x0 - v_x0 * v_x0;
    if var <= EPS_VAR {
        return Err(Error::DegenerateVariance(format!(
            "estimated variance {var:.3e} at x0 is below {EPS_VAR:.0e}"
        )));
    }
    let sd = libm::sqrt(var);
    let bracket = (dv - v_x0 * (du - 2.0 * v_x0 * dv) / (2.0 * var)) / sd;
    let out = match draw.kind {
        PerturbKind::Rademacher => draw
            .delta
            .iter()
            .map(|d| bracket / (draw.beta * d))
            .collect(),
        PerturbKind::Gaussian => draw.delta.iter().map(|d| d / draw.beta * bracket).collect(),
    };
    Ok(out)
}

/// Sharpe-ratio ascent direction for the average setting:
/// (1/√Λ̂)·(δψ − ρ̂(εψ − 2ρ̂δψ)/(2Λ̂)) with Λ̂ = η̂ − ρ̂².
pub fn sharpe_direction_average(
    delta: f64,
    epsilon: f64,
    psi: &[f64],
    rho_hat: f64,
    eta_hat: f64,
) -> Result<Vec<f64>> {
    let var = eta_hat - rho_hat * rho_hat;
    if var <= EPS_VAR {
        return Err(Error::DegenerateVariance(format!(
            "estimated long-run variance {var:.3e} is below {EPS_VAR:.0e}"
        )));
    }
    let scale = (delta - rho_hat * (epsilon - 2.0 * rho_hat * delta) / (2.0 * var)) / libm::sqrt(var);
    Ok(psi.iter().map(|p| scale * p).collect())
}
