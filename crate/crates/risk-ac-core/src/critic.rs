//! Temporal-difference evaluation with linear function approximation for
//! the value function V and the square-value function U, in trajectory-based
//! discounted form and online average-reward form.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::Transition;

/// Residual threshold below which the all-ones vector counts as
/// representable by the feature span.
pub const ONES_RESIDUAL_TOL: f64 = 1e-8;

/// Feature matrices Φ_v (|X|×κ₂) and Φ_u (|X|×κ₃) for the two critics.
///
/// Both must have full column rank. The span must not contain the all-ones
/// vector (least-squares residual of fitting 1 must exceed 1e-8) unless the
/// instance is built with `ones_exempt`; tabular identity features need the
/// exemption because e is trivially representable there, which is harmless
/// for discounted TD but weakens the average-reward identifiability story.
#[derive(Clone, Debug)]
pub struct CriticFeatures {
    pub num_states: usize,
    pub dim_v: usize,
    pub dim_u: usize,
    phi_v: Vec<f64>,
    phi_u: Vec<f64>,
    pub ones_exempt: bool,
}

fn validate_block(name: &str, num_states: usize, dim: usize, phi: &[f64], ones_exempt: bool) -> Result<()> {
    if dim == 0 || dim > num_states {
        return Err(Error::Config(format!(
            "{name}: feature dimension {dim} must lie in 1..={num_states}"
        )));
    }
    if phi.len() != num_states * dim {
        return Err(Error::Config(format!(
            "{name}: got {} entries, expected {}",
            phi.len(),
            num_states * dim
        )));
    }
    if phi.iter().any(|f| !f.is_finite()) {
        return Err(Error::Config(format!("{name}: entries must be finite")));
    }
    let m = DMatrix::from_row_slice(num_states, dim, phi);
    let gram = m.transpose() * &m;
    let (eigs, _) = linalg::symmetric_eigen(&gram);
    let max = eigs.last().copied().unwrap_or(0.0);
    let min = eigs.first().copied().unwrap_or(0.0);
    if max <= 0.0 || min < 1e-10 * max.max(1.0) {
        return Err(Error::RankDeficient(format!(
            "{name}: Gram spectrum [{min:.3e}, {max:.3e}] indicates rank deficiency"
        )));
    }
    if !ones_exempt {
        let ones = DVector::from_element(num_states, 1.0);
        let rhs = m.transpose() * &ones;
        let coeff = linalg::lu_solve(&gram, &rhs)?;
        let residual = (&m * coeff - ones).norm();
        if residual <= ONES_RESIDUAL_TOL {
            return Err(Error::ConstantInSpan(format!(
                "{name}: all-ones fit residual {residual:.3e} <= {ONES_RESIDUAL_TOL:.0e}"
            )));
        }
    }
    Ok(())
}

impl CriticFeatures {
    pub fn new(
        num_states: usize,
        dim_v: usize,
        phi_v: Vec<f64>,
        dim_u: usize,
        phi_u: Vec<f64>,
        ones_exempt: bool,
    ) -> Result<Self> {
        validate_block("phi_v", num_states, dim_v, &phi_v, ones_exempt)?;
        validate_block("phi_u", num_states, dim_u, &phi_u, ones_exempt)?;
        Ok(CriticFeatures { num_states, dim_v, dim_u, phi_v, phi_u, ones_exempt })
    }

    /// Identity features for both critics (κ₂ = κ₃ = |X|), with the
    /// documented all-ones exemption.
    pub fn tabular(num_states: usize) -> Self {
        let mut eye = vec![0.0; num_states * num_states];
        for i in 0..num_states {
            eye[i * num_states + i] = 1.0;
        }
        CriticFeatures {
            num_states,
            dim_v: num_states,
            dim_u: num_states,
            phi_v: eye.clone(),
            phi_u: eye,
            ones_exempt: true,
        }
    }

    #[inline]
    pub fn phi_v(&self, x: usize) -> &[f64] {
        &self.phi_v[x * self.dim_v..][..self.dim_v]
    }

    #[inline]
    pub fn phi_u(&self, x: usize) -> &[f64] {
        &self.phi_u[x * self.dim_u..][..self.dim_u]
    }

    pub fn mat_v(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.dim_v, &self.phi_v)
    }

    pub fn mat_u(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.dim_u, &self.phi_u)
    }
}

/// Discounted critic weights: v approximates V, u approximates U.
#[derive(Clone, Debug)]
pub struct DiscountedCriticState {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    /// Number of TD updates applied.
    pub step: usize,
}

impl DiscountedCriticState {
    pub fn zeros(features: &CriticFeatures) -> Self {
        DiscountedCriticState { v: vec![0.0; features.dim_v], u: vec![0.0; features.dim_u], step: 0 }
    }

    pub fn value_at(&self, features: &CriticFeatures, x: usize) -> f64 {
        linalg::dot(&self.v, features.phi_v(x))
    }

    pub fn square_value_at(&self, features: &CriticFeatures, x: usize) -> f64 {
        linalg::dot(&self.u, features.phi_u(x))
    }
}

/// One discounted TD update on raw weight and feature slices. Both TD
/// errors use the pre-update v (simultaneous form):
///   δ = R + γ vᵀφ_v(x') − vᵀφ_v(x)
///   ε = R² + 2γR vᵀφ_v(x') + γ² uᵀφ_u(x') − uᵀφ_u(x)
/// then v += ζ₃ δ φ_v(x), u += ζ₃ ε φ_u(x). Returns (δ, ε).
#[allow(clippy::too_many_arguments)]
pub fn td_update_discounted(
    v: &mut [f64],
    u: &mut [f64],
    phi_v_x: &[f64],
    phi_v_next: &[f64],
    phi_u_x: &[f64],
    phi_u_next: &[f64],
    reward: f64,
    gamma: f64,
    zeta3: f64,
) -> (f64, f64) {
    let v_x = linalg::dot(v, phi_v_x);
    let v_next = linalg::dot(v, phi_v_next);
    let u_x = linalg::dot(u, phi_u_x);
    let u_next = linalg::dot(u, phi_u_next);

    let delta = reward + gamma * v_next - v_x;
    let eps = reward * reward + 2.0 * gamma * reward * v_next + gamma * gamma * u_next - u_x;

    for (w, phi) in v.iter_mut().zip(phi_v_x) {
        *w += zeta3 * delta * phi;
    }
    for (w, phi) in u.iter_mut().zip(phi_u_x) {
        *w += zeta3 * eps * phi;
    }
    (delta, eps)
}

/// Tabular wrapper over `td_update_discounted`.
pub fn td_step_discounted(
    state: &mut DiscountedCriticState,
    t: &Transition,
    features: &CriticFeatures,
    gamma: f64,
    zeta3: f64,
) -> (f64, f64) {
    let out = td_update_discounted(
        &mut state.v,
        &mut state.u,
        features.phi_v(t.state),
        features.phi_v(t.next_state),
        features.phi_u(t.state),
        features.phi_u(t.next_state),
        t.reward,
        gamma,
        zeta3,
    );
    state.step += 1;
    out
}

/// Average-reward critic: weights plus running averages ρ̂ (reward) and
/// η̂ (squared reward).
#[derive(Clone, Debug)]
pub struct AverageCriticState {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub rho_hat: f64,
    pub eta_hat: f64,
    pub step: usize,
}

impl AverageCriticState {
    pub fn zeros(features: &CriticFeatures) -> Self {
        AverageCriticState {
            v: vec![0.0; features.dim_v],
            u: vec![0.0; features.dim_u],
            rho_hat: 0.0,
            eta_hat: 0.0,
            step: 0,
        }
    }

    /// Running long-run variance estimate η̂ − ρ̂².
    pub fn variance_hat(&self) -> f64 {
        self.eta_hat - self.rho_hat * self.rho_hat
    }
}

/// One online average-reward update on raw feature slices. The running
/// averages move first and the TD errors use the post-update ρ̂, η̂:
///   ρ̂ ← (1−ζ₄)ρ̂ + ζ₄R,   η̂ ← (1−ζ₄)η̂ + ζ₄R²
///   δ = R − ρ̂ + vᵀφ_v(x') − vᵀφ_v(x)
///   ε = R² − η̂ + uᵀφ_u(x') − uᵀφ_u(x)
/// then v += ζ₃ δ φ_v(x), u += ζ₃ ε φ_u(x). Returns (δ, ε).
#[allow(clippy::too_many_arguments)]
pub fn td_update_average(
    state: &mut AverageCriticState,
    phi_v_x: &[f64],
    phi_v_next: &[f64],
    phi_u_x: &[f64],
    phi_u_next: &[f64],
    reward: f64,
    zeta3: f64,
    zeta4: f64,
) -> (f64, f64) {
    let r = reward;
    state.rho_hat = (1.0 - zeta4) * state.rho_hat + zeta4 * r;
    state.eta_hat = (1.0 - zeta4) * state.eta_hat + zeta4 * r * r;

    let delta = r - state.rho_hat + linalg::dot(&state.v, phi_v_next) - linalg::dot(&state.v, phi_v_x);
    let eps =
        r * r - state.eta_hat + linalg::dot(&state.u, phi_u_next) - linalg::dot(&state.u, phi_u_x);

    for (w, phi) in state.v.iter_mut().zip(phi_v_x) {
        *w += zeta3 * delta * phi;
    }
    for (w, phi) in state.u.iter_mut().zip(phi_u_x) {
        *w += zeta3 * eps * phi;
    }
    state.step += 1;
    (delta, eps)
}

/// Tabular wrapper over `td_update_average`.
pub fn td_step_average(
    state: &mut AverageCriticState,
    t: &Transition,
    features: &CriticFeatures,
    zeta3: f64,
    zeta4: f64,
) -> (f64, f64) {
    let (phi_v_x, phi_v_next) = (features.phi_v(t.state), features.phi_v(t.next_state));
    let (phi_u_x, phi_u_next) = (features.phi_u(t.state), features.phi_u(t.next_state));
    td_update_average(state, phi_v_x, phi_v_next, phi_u_x, phi_u_next, t.reward, zeta3, zeta4)
}

/// Iterate the deterministic mean ODE of the discounted TD recursion,
/// w ← w + ζ(Mw + ξ), starting from `w0` (stacked (v;u)). Converges
/// linearly to −M⁻¹ξ for ζ small enough that I + ζM is a contraction.
pub fn deterministic_expected_td(
    features: &CriticFeatures,
    mdp: &crate::mdp::TabularMdp,
    policy: &crate::mdp::BoltzmannPolicy,
    theta: &[f64],
    w0: &[f64],
    steps: usize,
    zeta: f64,
) -> Result<Vec<f64>> {
    let (m, xi, _) = crate::oracle::td_mean_system(mdp, policy, theta, features)?;
    let dim = features.dim_v + features.dim_u;
    if w0.len() != dim {
        return Err(Error::Config(format!("w0 has length {}, expected {dim}", w0.len())));
    }
    let mut w = DVector::from_column_slice(w0);
    for i in 0..steps {
        w += zeta * (&m * &w + &xi);
        if linalg::norm_inf(w.as_slice()) > 1e12 {
            return Err(Error::Diverged(format!(
                "expected-TD iterate exceeded 1e12 at step {i} (step size {zeta} too large)"
            )));
        }
    }
    Ok(w.as_slice().to_vec())
}
