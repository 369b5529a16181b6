//! Shared builders for randomized verification instances, plus an
//! independent (test-side) construction of the policy-induced chain.
#![allow(dead_code)]

use risk_ac_core::mdp::{BoltzmannPolicy, RewardNoise, TabularMdp};
use risk_ac_core::rng::SplitRng;

/// Random MDP with every transition probability bounded away from zero, so
/// the induced chain is irreducible and aperiodic under any policy.
pub fn random_mdp(
    seed: u64,
    max_states: usize,
    max_actions: usize,
    reward_scale: f64,
) -> (TabularMdp, BoltzmannPolicy, Vec<f64>) {
    let mut rng = SplitRng::new(seed ^ 0x5EED_0001);
    let n = 2 + (rng.next_u64() as usize) % (max_states - 1);
    let na = 1 + (rng.next_u64() as usize) % max_actions;
    build_mdp(&mut rng, n, na, reward_scale)
}

/// Random MDP with exact dimensions.
pub fn random_mdp_sized(
    seed: u64,
    n: usize,
    na: usize,
    reward_scale: f64,
) -> (TabularMdp, BoltzmannPolicy, Vec<f64>) {
    let mut rng = SplitRng::new(seed ^ 0x5EED_0002);
    build_mdp(&mut rng, n, na, reward_scale)
}

fn build_mdp(
    rng: &mut SplitRng,
    n: usize,
    na: usize,
    reward_scale: f64,
) -> (TabularMdp, BoltzmannPolicy, Vec<f64>) {
    let mut transition = Vec::with_capacity(n * na * n);
    for _ in 0..n * na {
        let mut row: Vec<f64> = (0..n).map(|_| rng.uniform(0.05, 1.0)).collect();
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
        // Rounding guard: renormalize the largest entry so the row sums to
        // 1 exactly enough for the validator.
        let resid: f64 = 1.0 - row.iter().sum::<f64>();
        row[0] += resid;
        transition.extend_from_slice(&row);
    }
    let reward_mean: Vec<f64> = (0..n * na)
        .map(|_| rng.uniform(-reward_scale, reward_scale))
        .collect();
    let noise = match rng.next_u64() % 3 {
        0 => RewardNoise::None,
        1 => RewardNoise::Uniform(
            (0..n * na).map(|_| rng.uniform(0.0, reward_scale * 0.5)).collect(),
        ),
        _ => RewardNoise::Normal(
            (0..n * na).map(|_| rng.uniform(0.0, reward_scale * 0.3)).collect(),
        ),
    };
    let gamma = rng.uniform(0.6, 0.95);
    let initial_state = (rng.next_u64() as usize) % n;
    let mdp = TabularMdp::new(n, na, transition, reward_mean, noise, gamma, initial_state)
        .expect("random instance must validate");
    let policy = BoltzmannPolicy::tabular(n, na);
    let theta: Vec<f64> = (0..n * na).map(|_| rng.uniform(-1.0, 1.0)).collect();
    (mdp, policy, theta)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Policy-induced chain quantities, recomputed here from first principles
/// (plain soft-max over the feature scores) so library results are checked
/// against an independent construction. All matrices are row-major.
pub struct InducedModel {
    /// μ(a|x), |X|×|A|.
    pub mu: Vec<f64>,
    /// P^θ(y|x) = Σ_a μ P, |X|×|X|.
    pub p: Vec<f64>,
    /// r^θ(x) = Σ_a μ r.
    pub r: Vec<f64>,
    /// r2^θ(x) = Σ_a μ E[R²].
    pub r2: Vec<f64>,
    /// G^θ(x,y) = Σ_a μ r(x,a) P(y|x,a), |X|×|X|.
    pub g: Vec<f64>,
}

pub fn induced_model(mdp: &TabularMdp, policy: &BoltzmannPolicy, theta: &[f64]) -> InducedModel {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let mut mu = vec![0.0; n * na];
    for x in 0..n {
        let scores: Vec<f64> = (0..na).map(|a| dot(theta, policy.feature(x, a))).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for a in 0..na {
            mu[x * na + a] = (scores[a] - max).exp() / z;
        }
    }
    let mut p = vec![0.0; n * n];
    let mut g = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for x in 0..n {
        for a in 0..na {
            let w = mu[x * na + a];
            r[x] += w * mdp.r(x, a);
            r2[x] += w * mdp.r2(x, a);
            for y in 0..n {
                p[x * n + y] += w * mdp.p(x, a, y);
                g[x * n + y] += w * mdp.r(x, a) * mdp.p(x, a, y);
            }
        }
    }
    InducedModel { mu, p, r, r2, g }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
