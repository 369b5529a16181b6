//! Finite tabular MDP, Boltzmann (soft-max) policy over state-action
//! features, and seeded trajectory simulation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Transition-probability row tolerance.
pub const PROB_TOL: f64 = 1e-12;

/// Reward-noise specification. Magnitudes are per state-action pair;
/// `scalar` constructors broadcast one magnitude to every pair.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardNoise {
    None,
    /// Uniform on [−w, w] with per-(x,a) half-width w.
    Uniform(Vec<f64>),
    /// Zero-mean normal with per-(x,a) standard deviation.
    Normal(Vec<f64>),
}

impl RewardNoise {
    /// Excess second moment E[noise²] for pair index `i`.
    fn second_moment(&self, i: usize) -> f64 {
        match self {
            RewardNoise::None => 0.0,
            RewardNoise::Uniform(w) => w[i] * w[i] / 3.0,
            RewardNoise::Normal(s) => s[i] * s[i],
        }
    }

    fn sample(&self, i: usize, rng: &mut SplitRng) -> f64 {
        match self {
            RewardNoise::None => 0.0,
            RewardNoise::Uniform(w) => rng.uniform(-w[i], w[i]),
            RewardNoise::Normal(s) => s[i] * rng.gaussian(),
        }
    }
}

/// One sampled step of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Finite MDP with dense transition tensor P[x][a][x'], mean rewards
/// r[x][a], optional reward noise, discount factor, and a fixed start state.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    transition: Vec<f64>,
    reward_mean: Vec<f64>,
    reward_noise: RewardNoise,
    pub gamma: f64,
    pub initial_state: usize,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_noise: RewardNoise,
        gamma: f64,
        initial_state: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Config("num_states and num_actions must be positive".into()));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::Config(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward_mean.len() != num_states * num_actions {
            return Err(Error::Config(format!(
                "reward_mean has {} entries, expected {}",
                reward_mean.len(),
                num_states * num_actions
            )));
        }
        match &reward_noise {
            RewardNoise::None => {}
            RewardNoise::Uniform(m) | RewardNoise::Normal(m) => {
                if m.len() != num_states * num_actions {
                    return Err(Error::Config("reward_noise magnitude tensor has wrong shape".into()));
                }
                if m.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::Config("reward_noise magnitudes must be finite and >= 0".into()));
                }
            }
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if initial_state >= num_states {
            return Err(Error::Config(format!(
                "initial_state {initial_state} out of range for {num_states} states"
            )));
        }
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("reward_mean entries must be finite".into()));
        }
        for x in 0..num_states {
            for a in 0..num_actions {
                let row = &transition[(x * num_actions + a) * num_states..][..num_states];
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Config(format!("P[{x}][{a}] has a negative or non-finite entry")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > PROB_TOL {
                    return Err(Error::Config(format!("P[{x}][{a}] sums to {s}, not 1")));
                }
            }
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            reward_mean,
            reward_noise,
            gamma,
            initial_state,
        })
    }

    #[inline]
    pub fn p(&self, x: usize, a: usize, y: usize) -> f64 {
        self.transition[(x * self.num_actions + a) * self.num_states + y]
    }

    #[inline]
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        &self.transition[(x * self.num_actions + a) * self.num_states..][..self.num_states]
    }

    /// Mean reward r(x,a).
    #[inline]
    pub fn r(&self, x: usize, a: usize) -> f64 {
        self.reward_mean[x * self.num_actions + a]
    }

    /// Exact second moment E[R(x,a)²] = r(x,a)² + noise second moment.
    #[inline]
    pub fn r2(&self, x: usize, a: usize) -> f64 {
        let r = self.r(x, a);
        r * r + self.reward_noise.second_moment(x * self.num_actions + a)
    }

    pub fn reward_noise(&self) -> &RewardNoise {
        &self.reward_noise
    }

    pub fn sample_reward(&self, x: usize, a: usize, rng: &mut SplitRng) -> f64 {
        self.r(x, a) + self.reward_noise.sample(x * self.num_actions + a, rng)
    }
}

/// Soft-max policy μ(a|x;θ) ∝ exp(θᵀφ[x][a]) over per-pair features
/// φ[x][a] ∈ R^{κ₁}. θ is supplied per call; the policy owns only the
/// feature tensor, so perturbing θ never copies features.
#[derive(Clone, Debug)]
pub struct BoltzmannPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    /// Parameter dimension κ₁.
    pub dim: usize,
    features: Vec<f64>,
}

impl BoltzmannPolicy {
    pub fn new(num_states: usize, num_actions: usize, dim: usize, features: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("policy feature dimension must be positive".into()));
        }
        if features.len() != num_states * num_actions * dim {
            return Err(Error::Config(format!(
                "policy feature tensor has {} entries, expected {}",
                features.len(),
                num_states * num_actions * dim
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("policy features must be finite".into()));
        }
        Ok(BoltzmannPolicy { num_states, num_actions, dim, features })
    }

    /// One-hot feature per (x,a) pair; κ₁ = |X|·|A|.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        let dim = num_states * num_actions;
        let mut features = alloc::vec![0.0; dim * dim];
        for i in 0..dim {
            features[i * dim + i] = 1.0;
        }
        BoltzmannPolicy { num_states, num_actions, dim, features }
    }

    #[inline]
    pub fn feature(&self, x: usize, a: usize) -> &[f64] {
        &self.features[(x * self.num_actions + a) * self.dim..][..self.dim]
    }

    /// μ(·|x;θ) via max-subtracted soft-max; strictly positive, sums to 1.
    pub fn policy_probs(&self, theta: &[f64], x: usize) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim);
        let mut scores: Vec<f64> = (0..self.num_actions)
            .map(|a| crate::linalg::dot(theta, self.feature(x, a)))
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = libm::exp(*s - max);
            z += *s;
        }
        for s in scores.iter_mut() {
            *s /= z;
        }
        scores
    }

    /// Compatible feature ψ(x,a) = ∇_θ log μ(a|x;θ)
    ///                           = φ[x][a] − Σ_{a'} μ(a'|x;θ) φ[x][a'].
    pub fn log_policy_gradient(&self, theta: &[f64], x: usize, a: usize) -> Vec<f64> {
        let probs = self.policy_probs(theta, x);
        let mut psi = self.feature(x, a).to_vec();
        for (ap, &p) in probs.iter().enumerate() {
            let phi = self.feature(x, ap);
            for k in 0..self.dim {
                psi[k] -= p * phi[k];
            }
        }
        psi
    }
}

/// Simulate `length` steps from the MDP's initial state under μ(·|·;θ).
/// The same seed yields a bit-identical trajectory.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
    length: usize,
    rng: &mut SplitRng,
) -> Vec<Transition> {
    let mut out = Vec::with_capacity(length);
    let mut x = mdp.initial_state;
    for _ in 0..length {
        let probs = policy.policy_probs(theta, x);
        let a = rng.categorical(&probs);
        let reward = mdp.sample_reward(x, a, rng);
        let next = rng.categorical(mdp.transition_row(x, a));
        out.push(Transition { state: x, action: a, reward, next_state: next });
        x = next;
    }
    out
}

/// Σ_n γⁿ r_n over the transition list.
pub fn discounted_return(transitions: &[Transition], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut w = 1.0;
    for t in transitions {
        total += w * t.reward;
        w *= gamma;
    }
    total
}
