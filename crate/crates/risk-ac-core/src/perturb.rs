//! Simultaneous-perturbation machinery: perturbation sampling, one-sided
//! SPSA and smoothed-functional gradient estimators, their Hessian
//! estimators, and the SPD projection used by the Newton variants.
//!
//! Estimators take precomputed scalar differences (dV, dU, dL) rather than
//! critic states, so they can be unit-tested against synthetic objectives.
//! They return the ascent direction exactly as it appears inside the
//! projection in the actor updates; the actor adds it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SplitRng;

/// Eigenvalue floor for the SPD projection; keeps the projected inverse
/// bounded in norm.
pub const EPS_H: f64 = 1e-4;

/// Perturbation law: Rademacher (SPSA family) or standard Gaussian
/// (smoothed-functional family).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbKind {
    Rademacher,
    Gaussian,
}

/// One perturbation draw: Δ, the smoothing constant β, and for
/// second-order SPSA an independent second vector Δ̂.
#[derive(Clone, Debug)]
pub struct PerturbationDraw {
    pub delta: Vec<f64>,
    pub delta_hat: Option<Vec<f64>>,
    pub beta: f64,
    pub kind: PerturbKind,
}

impl PerturbationDraw {
    /// The parameter offset p = βΔ (+ βΔ̂ when present).
    pub fn offset(&self) -> Vec<f64> {
        match &self.delta_hat {
            None => self.delta.iter().map(|d| self.beta * d).collect(),
            Some(hat) => self
                .delta
                .iter()
                .zip(hat)
                .map(|(d, h)| self.beta * (d + h))
                .collect(),
        }
    }
}

/// Draw Δ (and Δ̂ for second-order SPSA) with i.i.d. entries of the stated
/// law. Δ̂ is only meaningful for the Rademacher kind; the Gaussian
/// second-order estimator reuses the single Δ.
pub fn draw_perturbation(
    kind: PerturbKind,
    kappa1: usize,
    second_order: bool,
    beta: f64,
    rng: &mut SplitRng,
) -> PerturbationDraw {
    let fill = |rng: &mut SplitRng| match kind {
        PerturbKind::Rademacher => rng.fill_rademacher(kappa1),
        PerturbKind::Gaussian => rng.fill_gaussian(kappa1),
    };
    let delta = fill(rng);
    let delta_hat = if second_order && kind == PerturbKind::Rademacher {
        Some(fill(rng))
    } else {
        None
    };
    PerturbationDraw { delta, delta_hat, beta, kind }
}

#[inline]
fn lagrangian_bracket(dv: f64, du: f64, v_x0: f64, lambda: f64) -> f64 {
    (1.0 + 2.0 * lambda * v_x0) * dv - lambda * du
}

/// SPSA ascent direction: component i is
/// [(1 + 2λ v(x⁰))·dV − λ·dU] / (β Δ⁽ⁱ⁾), with dV, dU the one-sided
/// differences of the two critics at x⁰.
pub fn spsa_gradient(dv: f64, du: f64, v_x0: f64, lambda: f64, draw: &PerturbationDraw) -> Vec<f64> {
    debug_assert_eq!(draw.kind, PerturbKind::Rademacher);
    let bracket = lagrangian_bracket(dv, du, v_x0, lambda);
    draw.delta.iter().map(|d| bracket / (draw.beta * d)).collect()
}

/// Smoothed-functional ascent direction: component i is
/// (Δ⁽ⁱ⁾/β)·[(1 + 2λ v(x⁰))·dV − λ·dU].
pub fn sf_gradient(dv: f64, du: f64, v_x0: f64, lambda: f64, draw: &PerturbationDraw) -> Vec<f64> {
    debug_assert_eq!(draw.kind, PerturbKind::Gaussian);
    let bracket = lagrangian_bracket(dv, du, v_x0, lambda);
    draw.delta.iter().map(|d| d / draw.beta * bracket).collect()
}

/// Running Hessian estimate, kept exactly symmetric by mirrored writes.
#[derive(Clone, Debug)]
pub struct HessianAccumulator {
    h: Vec<f64>,
    pub dim: usize,
    pub step_index: usize,
}

impl HessianAccumulator {
    /// Start from the identity: early Newton steps behave like first-order
    /// steps.
    pub fn identity(dim: usize) -> Self {
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            h[i * dim + i] = 1.0;
        }
        HessianAccumulator { h, dim, step_index: 0 }
    }

    pub fn zeros(dim: usize) -> Self {
        HessianAccumulator { h: vec![0.0; dim * dim], dim, step_index: 0 }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.dim + j]
    }

    #[inline]
    fn set_mirrored(&mut self, i: usize, j: usize, value: f64) {
        self.h[i * self.dim + j] = value;
        self.h[j * self.dim + i] = value;
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.h)
    }
}

/// Second-order SPSA Hessian update: for i ≤ j,
/// H⁽ⁱʲ⁾ ← H⁽ⁱʲ⁾ + ζ₂′·(dL/(β² Δ⁽ⁱ⁾ Δ̂⁽ʲ⁾) − H⁽ⁱʲ⁾), mirrored to (j,i).
/// dL is the sampled Lagrangian difference bracket computed by the caller.
pub fn spsa_hessian_step(
    acc: &mut HessianAccumulator,
    dl: f64,
    draw: &PerturbationDraw,
    zeta2p: f64,
) {
    let hat = draw
        .delta_hat
        .as_ref()
        .expect("second-order SPSA draw must carry delta_hat");
    let b2 = draw.beta * draw.beta;
    for i in 0..acc.dim {
        for j in i..acc.dim {
            let sample = dl / (b2 * draw.delta[i] * hat[j]);
            let new = acc.get(i, j) + zeta2p * (sample - acc.get(i, j));
            acc.set_mirrored(i, j, new);
        }
    }
    acc.step_index += 1;
}

/// Smoothed-functional Hessian update:
/// diagonal H⁽ⁱⁱ⁾ ← H⁽ⁱⁱ⁾ + ζ₂′·((Δ⁽ⁱ⁾²−1)·dL/β² − H⁽ⁱⁱ⁾),
/// off-diagonal (j<k) H⁽ʲᵏ⁾ ← H⁽ʲᵏ⁾ + ζ₂′·(Δ⁽ʲ⁾Δ⁽ᵏ⁾·dL/β² − H⁽ʲᵏ⁾),
/// mirrored.
pub fn sf_hessian_step(acc: &mut HessianAccumulator, dl: f64, draw: &PerturbationDraw, zeta2p: f64) {
    let b2 = draw.beta * draw.beta;
    for i in 0..acc.dim {
        for j in i..acc.dim {
            let sample = if i == j {
                (draw.delta[i] * draw.delta[i] - 1.0) * dl / b2
            } else {
                draw.delta[i] * draw.delta[j] * dl / b2
            };
            let new = acc.get(i, j) + zeta2p * (sample - acc.get(i, j));
            acc.set_mirrored(i, j, new);
        }
    }
    acc.step_index += 1;
}

/// Project a symmetric matrix onto the SPD cone by clamping its eigenvalues
/// to the floor `EPS_H`, and return both the projection and its inverse.
pub fn spd_project(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym_err = linalg::norm_inf_mat(&(h - h.transpose()));
    if !(sym_err <= 1e-8) {
        return Err(Error::SymmetryViolation(format!(
            "Hessian asymmetry {sym_err:.3e} exceeds 1e-8"
        )));
    }
    let (eigs, vecs) = linalg::symmetric_eigen(h);
    let n = h.nrows();
    let mut lam = DMatrix::zeros(n, n);
    let mut lam_inv = DMatrix::zeros(n, n);
    for (i, e) in eigs.iter().enumerate() {
        let clamped = e.max(EPS_H);
        lam[(i, i)] = clamped;
        lam_inv[(i, i)] = 1.0 / clamped;
    }
    let h_spd = &vecs * lam * vecs.transpose();
    let m = &vecs * lam_inv * vecs.transpose();
    let eye = DMatrix::identity(n, n);
    let resid = linalg::norm_inf_mat(&(&h_spd * &m - eye));
    if !(resid < 1e-8) {
        return Err(Error::Verification(format!(
            "SPD projection self-check failed: ||H_spd*M - I||_inf = {resid:.3e}"
        )));
    }
    Ok((h_spd, m))
}
