//! Exact solutions on tabular models: value and square-value functions,
//! their policy gradients, average-reward differential quantities, and the
//! linear-TD fixed point. Everything here is closed-form linear algebra and
//! serves as the reference the sampled estimators are checked against.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::critic::CriticFeatures;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{BoltzmannPolicy, TabularMdp};

/// Policy-induced quantities of a tabular model under softmax parameters θ:
/// action probabilities, the state chain P^θ, mean reward r^θ, mean squared
/// reward r2^θ, and the reward-weighted chain G^θ(x,y) = Σ_a μ r(x,a) P(y|x,a).
pub(crate) struct Induced {
    pub mu: Vec<f64>,
    pub p: DMatrix<f64>,
    pub r: DVector<f64>,
    pub r2: DVector<f64>,
    pub g: DMatrix<f64>,
}

pub(crate) fn induced(mdp: &TabularMdp, policy: &BoltzmannPolicy, theta: &[f64]) -> Induced {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let mut mu = vec![0.0; n * na];
    let mut p = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    let mut r2 = DVector::zeros(n);
    for x in 0..n {
        let probs = policy.policy_probs(theta, x);
        for a in 0..na {
            let w = probs[a];
            mu[x * na + a] = w;
            r[x] += w * mdp.r(x, a);
            r2[x] += w * mdp.r2(x, a);
            let row = mdp.transition_row(x, a);
            for y in 0..n {
                p[(x, y)] += w * row[y];
                g[(x, y)] += w * mdp.r(x, a) * row[y];
            }
        }
    }
    Induced { mu, p, r, r2, g }
}

/// Exact discounted solution for a fixed policy.
#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    /// V(x), length |X|.
    pub v: Vec<f64>,
    /// U(x) = E[D² | x], length |X|.
    pub u: Vec<f64>,
    /// Q(x,a), row-major |X|×|A|.
    pub q: Vec<f64>,
    /// W(x,a), row-major |X|×|A|.
    pub w: Vec<f64>,
    /// Per-state return variance Λ(x) = U(x) − V(x)².
    pub lambda: Vec<f64>,
    /// γ-discounted state occupation d_γ(x | x⁰), sums to 1.
    pub d_gamma: Vec<f64>,
    /// γ²-discounted state occupation.
    pub d_gamma2: Vec<f64>,
    /// 1-norm condition estimates of the two resolvent systems.
    pub cond_v: f64,
    pub cond_u: f64,
}

impl DiscountedSolution {
    pub fn v_x0(&self, mdp: &TabularMdp) -> f64 {
        self.v[mdp.initial_state]
    }

    pub fn u_x0(&self, mdp: &TabularMdp) -> f64 {
        self.u[mdp.initial_state]
    }

    pub fn variance_x0(&self, mdp: &TabularMdp) -> f64 {
        self.lambda[mdp.initial_state]
    }
}

/// Solve the coupled Bellman systems
///   V = r^θ + γ P^θ V
///   U = r2^θ + 2γ G^θ V + γ² P^θ U
/// exactly, along with Q, W, Λ and the discounted occupations used by the
/// gradient identities.
pub fn solve_discounted(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
) -> Result<DiscountedSolution> {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let gamma = mdp.gamma;
    let ind = induced(mdp, policy, theta);

    let eye = DMatrix::identity(n, n);
    let a_v = &eye - gamma * &ind.p;
    let a_u = &eye - gamma * gamma * &ind.p;
    let cond_v = linalg::condition_1(&a_v);
    let cond_u = linalg::condition_1(&a_u);

    let v = linalg::lu_solve(&a_v, &ind.r)?;
    let rhs_u = &ind.r2 + 2.0 * gamma * (&ind.g * &v);
    let u = linalg::lu_solve(&a_u, &rhs_u)?;

    let mut q = vec![0.0; n * na];
    let mut w = vec![0.0; n * na];
    for x in 0..n {
        for a in 0..na {
            let row = mdp.transition_row(x, a);
            let pv: f64 = row.iter().zip(v.iter()).map(|(p, vy)| p * vy).sum();
            let pu: f64 = row.iter().zip(u.iter()).map(|(p, uy)| p * uy).sum();
            q[x * na + a] = mdp.r(x, a) + gamma * pv;
            w[x * na + a] = mdp.r2(x, a) + 2.0 * gamma * mdp.r(x, a) * pv + gamma * gamma * pu;
        }
    }

    let lambda: Vec<f64> = (0..n).map(|x| u[x] - v[x] * v[x]).collect();

    // d_κ = (1−κ) (I − κ (P^θ)ᵀ)⁻¹ e_{x0} for κ ∈ {γ, γ²}.
    let mut e0 = DVector::zeros(n);
    e0[mdp.initial_state] = 1.0;
    let occ = |kappa: f64| -> Result<Vec<f64>> {
        let a = &eye - kappa * ind.p.transpose();
        let d = linalg::lu_solve(&a, &e0)?;
        Ok(d.iter().map(|x| (1.0 - kappa) * x).collect())
    };
    let d_gamma = occ(gamma)?;
    let d_gamma2 = occ(gamma * gamma)?;

    Ok(DiscountedSolution {
        v: v.as_slice().to_vec(),
        u: u.as_slice().to_vec(),
        q,
        w,
        lambda,
        d_gamma,
        d_gamma2,
        cond_v,
        cond_u,
    })
}

/// Exact policy gradients of the discounted objective pieces at x⁰.
#[derive(Clone, Debug)]
pub struct GradDiscounted {
    pub grad_v: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub v_x0: f64,
    pub u_x0: f64,
}

impl GradDiscounted {
    /// ∇Λ(x⁰) = ∇U − 2V(x⁰)∇V.
    pub fn grad_variance(&self) -> Vec<f64> {
        self.grad_u
            .iter()
            .zip(&self.grad_v)
            .map(|(gu, gv)| gu - 2.0 * self.v_x0 * gv)
            .collect()
    }

    /// ∇L = −∇V + λ ∇Λ for the penalty multiplier λ.
    pub fn grad_lagrangian(&self, lambda: f64) -> Vec<f64> {
        let gvar = self.grad_variance();
        self.grad_v
            .iter()
            .zip(&gvar)
            .map(|(gv, gl)| -gv + lambda * gl)
            .collect()
    }
}

/// Exact ∇V(x⁰) and ∇U(x⁰) via the likelihood-ratio identities
///   (1−γ) ∇V(x⁰) = Σ_x d_γ(x) Σ_a μ ψ Q
///   (1−γ²)∇U(x⁰) = Σ_x d_γ²(x) [ Σ_a μ ψ W + 2γ Σ_a μ r Σ_y P ∇V(y) ]
/// where the full ∇V field solves (I − γP^θ) ∇V = Σ_a μ ψ Q row-wise.
pub fn grad_discounted(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
) -> Result<GradDiscounted> {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let k1 = policy.dim;
    let gamma = mdp.gamma;
    let sol = solve_discounted(mdp, policy, theta)?;
    let ind = induced(mdp, policy, theta);

    // h_v(x, ·) = Σ_a μ ψ Q and the analogous score-weighted W sum.
    let mut h_v: DMatrix<f64> = DMatrix::zeros(n, k1);
    let mut h_w: DMatrix<f64> = DMatrix::zeros(n, k1);
    for x in 0..n {
        for a in 0..na {
            let w_mu = ind.mu[x * na + a];
            if w_mu == 0.0 {
                continue;
            }
            let psi = policy.log_policy_gradient(theta, x, a);
            let qxa = sol.q[x * na + a];
            let wxa = sol.w[x * na + a];
            for i in 0..k1 {
                h_v[(x, i)] += w_mu * psi[i] * qxa;
                h_w[(x, i)] += w_mu * psi[i] * wxa;
            }
        }
    }

    let grad_v: Vec<f64> = (0..k1)
        .map(|i| {
            (0..n).map(|x| sol.d_gamma[x] * h_v[(x, i)]).sum::<f64>() / (1.0 - gamma)
        })
        .collect();

    // ∇V at every state, one linear system with k1 right-hand sides.
    let eye = DMatrix::identity(n, n);
    let a_v = &eye - gamma * &ind.p;
    let grad_v_field = linalg::lu_solve_mat(&a_v, &h_v)?;

    let gcross = &ind.g * &grad_v_field; // (x,i) ↦ Σ_a μ r Σ_y P ∇V(y)_i
    let grad_u: Vec<f64> = (0..k1)
        .map(|i| {
            (0..n)
                .map(|x| sol.d_gamma2[x] * (h_w[(x, i)] + 2.0 * gamma * gcross[(x, i)]))
                .sum::<f64>()
                / (1.0 - gamma * gamma)
        })
        .collect();

    Ok(GradDiscounted {
        grad_v,
        grad_u,
        v_x0: sol.v[mdp.initial_state],
        u_x0: sol.u[mdp.initial_state],
    })
}

/// Stationary distribution of a row-stochastic chain, by replacing the last
/// balance equation with the normalization constraint. For a chain with a
/// single recurrent class the replaced system is nonsingular; two or more
/// recurrent classes make it exactly singular, which surfaces as an
/// irreducibility error.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for y in 0..n {
        a[(n - 1, y)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = linalg::lu_solve(&a, &b)
        .map_err(|_| Error::IrreducibilityViolation("stationary system is singular: chain has multiple recurrent classes or is periodic-degenerate".to_string()))?;
    // Guard against a nearly singular solve slipping through LU.
    let resid = linalg::norm_inf((p.transpose() * &d - &d).as_slice());
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = d.iter().sum();
    if !resid.is_finite() || resid > 1e-8 || min < -1e-9 || (sum - 1.0).abs() > 1e-8 {
        return Err(Error::IrreducibilityViolation(format!(
            "stationary solve unreliable: residual {resid:.3e}, min entry {min:.3e}"
        )));
    }
    Ok(d.iter().map(|x| x.max(0.0)).collect())
}

/// Exact average-reward solution for a fixed policy.
#[derive(Clone, Debug)]
pub struct AverageSolution {
    /// Stationary distribution over states.
    pub d_stat: Vec<f64>,
    /// Long-run average reward ρ.
    pub rho: f64,
    /// Long-run average squared reward η.
    pub eta: f64,
    /// Long-run reward variance Λ = η − ρ².
    pub lambda: f64,
    /// Differential value function, dᵀV = 0.
    pub v_diff: Vec<f64>,
    /// Differential square-value function, dᵀU = 0.
    pub u_diff: Vec<f64>,
    /// Differential action values, row-major |X|×|A|.
    pub q_diff: Vec<f64>,
    /// Differential square action values, row-major |X|×|A|.
    pub w_diff: Vec<f64>,
    /// 1-norm condition estimate of the Poisson system.
    pub cond: f64,
}

/// Solve the average-reward Poisson equations
///   V + ρe = r^θ + P^θ V,   U + ηe = r2^θ + P^θ U
/// with the dᵀV = dᵀU = 0 normalization, via the nonsingular system
/// (I − P^θ + e dᵀ) V = r^θ − ρe.
pub fn solve_average(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
) -> Result<AverageSolution> {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let ind = induced(mdp, policy, theta);
    let d_stat = stationary_distribution(&ind.p)?;
    let d = DVector::from_column_slice(&d_stat);

    let rho: f64 = d.dot(&ind.r);
    let eta: f64 = d.dot(&ind.r2);

    let ones = DVector::from_element(n, 1.0);
    let a = DMatrix::identity(n, n) - &ind.p + &ones * d.transpose();
    let cond = linalg::condition_1(&a);
    let v_diff = linalg::lu_solve(&a, &(&ind.r - rho * &ones))?;
    let u_diff = linalg::lu_solve(&a, &(&ind.r2 - eta * &ones))?;

    let mut q_diff = vec![0.0; n * na];
    let mut w_diff = vec![0.0; n * na];
    for x in 0..n {
        for a in 0..na {
            let row = mdp.transition_row(x, a);
            let pv: f64 = row.iter().zip(v_diff.iter()).map(|(p, vy)| p * vy).sum();
            let pu: f64 = row.iter().zip(u_diff.iter()).map(|(p, uy)| p * uy).sum();
            q_diff[x * na + a] = mdp.r(x, a) - rho + pv;
            w_diff[x * na + a] = mdp.r2(x, a) - eta + pu;
        }
    }

    Ok(AverageSolution {
        d_stat,
        rho,
        eta,
        lambda: eta - rho * rho,
        v_diff: v_diff.as_slice().to_vec(),
        u_diff: u_diff.as_slice().to_vec(),
        q_diff,
        w_diff,
        cond,
    })
}

/// Exact gradients of the long-run average reward and squared reward.
#[derive(Clone, Debug)]
pub struct GradAverage {
    pub grad_rho: Vec<f64>,
    pub grad_eta: Vec<f64>,
    pub rho: f64,
    pub eta: f64,
}

impl GradAverage {
    /// ∇Λ = ∇η − 2ρ∇ρ.
    pub fn grad_variance(&self) -> Vec<f64> {
        self.grad_eta
            .iter()
            .zip(&self.grad_rho)
            .map(|(ge, gr)| ge - 2.0 * self.rho * gr)
            .collect()
    }

    /// ∇L = −∇ρ + λ ∇Λ.
    pub fn grad_lagrangian(&self, lambda: f64) -> Vec<f64> {
        let gvar = self.grad_variance();
        self.grad_rho
            .iter()
            .zip(&gvar)
            .map(|(gr, gl)| -gr + lambda * gl)
            .collect()
    }
}

/// Exact ∇ρ = Σ_x d Σ_a μ ψ Q_diff and ∇η = Σ_x d Σ_a μ ψ W_diff.
pub fn grad_average(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
) -> Result<GradAverage> {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let k1 = policy.dim;
    let sol = solve_average(mdp, policy, theta)?;
    let ind = induced(mdp, policy, theta);

    let mut grad_rho = vec![0.0; k1];
    let mut grad_eta = vec![0.0; k1];
    for x in 0..n {
        if sol.d_stat[x] == 0.0 {
            continue;
        }
        for a in 0..na {
            let w_mu = ind.mu[x * na + a];
            if w_mu == 0.0 {
                continue;
            }
            let psi = policy.log_policy_gradient(theta, x, a);
            let scale = sol.d_stat[x] * w_mu;
            for i in 0..k1 {
                grad_rho[i] += scale * psi[i] * sol.q_diff[x * na + a];
                grad_eta[i] += scale * psi[i] * sol.w_diff[x * na + a];
            }
        }
    }

    Ok(GradAverage { grad_rho, grad_eta, rho: sol.rho, eta: sol.eta })
}

/// Mean-field system of the discounted TD recursion under the stationary
/// distribution of P^θ: the update direction of the stacked weights w=(v;u)
/// averages to Mw + ξ with
///   M = [ Φ_vᵀD(γP−I)Φ_v          0            ]
///       [ 2γ Φ_uᵀD G Φ_v   Φ_uᵀD(γ²P−I)Φ_u ]
///   ξ = ( Φ_vᵀD r^θ ; Φ_uᵀD r2^θ ).
pub fn td_mean_system(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
    features: &CriticFeatures,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<f64>)> {
    if features.num_states != mdp.num_states {
        return Err(Error::Config(format!(
            "feature table covers {} states, model has {}",
            features.num_states, mdp.num_states
        )));
    }
    let n = mdp.num_states;
    let gamma = mdp.gamma;
    let ind = induced(mdp, policy, theta);
    let d_stat = stationary_distribution(&ind.p)?;
    let dmat = DMatrix::from_diagonal(&DVector::from_column_slice(&d_stat));

    let phi_v = features.mat_v();
    let phi_u = features.mat_u();
    let eye = DMatrix::identity(n, n);

    let m_vv = phi_v.transpose() * &dmat * (gamma * &ind.p - &eye) * &phi_v;
    let m_uv = 2.0 * gamma * phi_u.transpose() * &dmat * &ind.g * &phi_v;
    let m_uu = phi_u.transpose() * &dmat * (gamma * gamma * &ind.p - &eye) * &phi_u;

    let kv = features.dim_v;
    let ku = features.dim_u;
    let mut m = DMatrix::zeros(kv + ku, kv + ku);
    m.view_mut((0, 0), (kv, kv)).copy_from(&m_vv);
    m.view_mut((kv, 0), (ku, kv)).copy_from(&m_uv);
    m.view_mut((kv, kv), (ku, ku)).copy_from(&m_uu);

    let xi_v = phi_v.transpose() * &dmat * &ind.r;
    let xi_u = phi_u.transpose() * &dmat * &ind.r2;
    let mut xi = DVector::zeros(kv + ku);
    xi.view_mut((0, 0), (kv, 1)).copy_from(&xi_v);
    xi.view_mut((kv, 0), (ku, 1)).copy_from(&xi_u);

    Ok((m, xi, d_stat))
}

/// The TD fixed point w̄ = −M⁻¹ξ together with the symmetric-part spectrum
/// that certifies stability of the mean dynamics.
#[derive(Clone, Debug)]
pub struct TdFixedPoint {
    pub v_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    /// Eigenvalues of (M + Mᵀ)/2, ascending.
    pub sym_spectrum: Vec<f64>,
    /// All symmetric-part eigenvalues strictly negative.
    pub negative_definite: bool,
    /// 1-norm condition estimate of M.
    pub cond_m: f64,
    /// Stationary distribution the projection weights come from.
    pub d_stat: Vec<f64>,
}

pub fn td_fixed_point(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
    features: &CriticFeatures,
) -> Result<TdFixedPoint> {
    let (m, xi, d_stat) = td_mean_system(mdp, policy, theta, features)?;
    let cond_m = linalg::condition_1(&m);
    let w = linalg::lu_solve(&m, &(-&xi)).map_err(|_| {
        Error::RankDeficient("TD mean matrix M is singular: features are not identifiable under the stationary distribution".to_string())
    })?;
    let sym = 0.5 * (&m + m.transpose());
    let (sym_spectrum, _) = linalg::symmetric_eigen(&sym);
    let negative_definite = sym_spectrum.last().map(|l| *l < 0.0).unwrap_or(false);
    let kv = features.dim_v;
    Ok(TdFixedPoint {
        v_bar: w.as_slice()[..kv].to_vec(),
        u_bar: w.as_slice()[kv..].to_vec(),
        sym_spectrum,
        negative_definite,
        cond_m,
        d_stat,
    })
}
