//! Critic convergence: the constructed mean system is stable (symmetric
//! part negative definite on the designed instance), the deterministic mean
//! iteration contracts to the fixed point, and the stochastic recursion
//! tracks it at the stated sample budget.

mod common;

use risk_ac_core::critic::{
    deterministic_expected_td, td_update_discounted, CriticFeatures,
};
use risk_ac_core::linalg;
use risk_ac_core::mdp::{BoltzmannPolicy, RewardNoise, TabularMdp};
use risk_ac_core::oracle::{solve_discounted, td_fixed_point, td_mean_system};
use risk_ac_core::rng::SplitRng;

/// Designed critic-check instance: 5 states, 2 actions, positive rewards an
/// order of magnitude below 1 so the TD coupling block cannot overpower the
/// negative-definite diagonal blocks.
fn critic_instance() -> (TabularMdp, BoltzmannPolicy, Vec<f64>) {
    let n = 5;
    let na = 2;
    let mut rng = SplitRng::new(0xC81);
    let mut transition = Vec::with_capacity(n * na * n);
    for _ in 0..n * na {
        let mut row: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 1.0)).collect();
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
        let resid: f64 = 1.0 - row.iter().sum::<f64>();
        row[0] += resid;
        transition.extend_from_slice(&row);
    }
    let reward_mean: Vec<f64> = (0..n * na).map(|_| rng.uniform(0.02, 0.10)).collect();
    let noise = RewardNoise::Uniform(vec![0.02; n * na]);
    let mdp = TabularMdp::new(n, na, transition, reward_mean, noise, 0.8, 0).unwrap();
    let policy = BoltzmannPolicy::tabular(n, na);
    let theta: Vec<f64> = (0..n * na).map(|_| rng.uniform(-0.5, 0.5)).collect();
    (mdp, policy, theta)
}

#[test]
fn designed_instance_mean_system_is_stable() {
    let (mdp, policy, theta) = critic_instance();
    let features = CriticFeatures::tabular(mdp.num_states);
    let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();
    assert!(
        fp.negative_definite,
        "symmetric-part spectrum not all negative: {:?}",
        fp.sym_spectrum
    );
    // Tabular features make the fixed point the exact value functions.
    let sol = solve_discounted(&mdp, &policy, &theta).unwrap();
    assert!(common::max_abs_diff(&fp.v_bar, &sol.v) < 1e-8);
    assert!(common::max_abs_diff(&fp.u_bar, &sol.u) < 1e-8);
}

#[test]
fn deterministic_mean_iteration_contracts() {
    let (mdp, policy, theta) = critic_instance();
    let features = CriticFeatures::tabular(mdp.num_states);
    let (m, _, _) = td_mean_system(&mdp, &policy, &theta, &features).unwrap();
    let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();

    // Step size from the contraction bound ζ < 2|λ_max(S)|/σ_max(M)²,
    // with S the symmetric part.
    let lam_s = fp.sym_spectrum.last().copied().unwrap().abs();
    let (sq_eigs, _) = linalg::symmetric_eigen(&(m.transpose() * &m));
    let sigma_max = sq_eigs.last().copied().unwrap().sqrt();
    let zeta = 0.9 * 2.0 * lam_s / (sigma_max * sigma_max);

    let dim = features.dim_v + features.dim_u;
    let mut rng = SplitRng::new(7);
    let w0: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let w = deterministic_expected_td(&features, &mdp, &policy, &theta, &w0, 200_000, zeta).unwrap();
    let mut wbar = fp.v_bar.clone();
    wbar.extend_from_slice(&fp.u_bar);
    let err = common::max_abs_diff(&w, &wbar);
    assert!(err < 1e-8, "mean iteration ended {err:.3e} from the fixed point");

    // Starting exactly at the fixed point stays there.
    let w = deterministic_expected_td(&features, &mdp, &policy, &theta, &wbar, 100, zeta).unwrap();
    assert!(common::max_abs_diff(&w, &wbar) < 1e-10);
}

#[test]
fn stochastic_td_tracks_fixed_point_within_budget() {
    let (mdp, policy, theta) = critic_instance();
    let features = CriticFeatures::tabular(mdp.num_states);
    let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();

    let mut v = vec![0.0; features.dim_v];
    let mut u = vec![0.0; features.dim_u];
    let mut rng = SplitRng::new(99);
    let mut x = mdp.initial_state;
    for m in 1..=200_000usize {
        let probs = policy.policy_probs(&theta, x);
        let a = rng.categorical(&probs);
        let r = mdp.sample_reward(x, a, &mut rng);
        let next = rng.categorical(mdp.transition_row(x, a));
        let zeta3 = (m as f64).powf(-0.66);
        td_update_discounted(
            &mut v,
            &mut u,
            features.phi_v(x),
            features.phi_v(next),
            features.phi_u(x),
            features.phi_u(next),
            r,
            mdp.gamma,
            zeta3,
        );
        x = next;
    }

    let rel = |got: &[f64], want: &[f64]| -> f64 {
        let num: f64 = got
            .iter()
            .zip(want)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        num / linalg::norm_2(want)
    };
    let rel_v = rel(&v, &fp.v_bar);
    let rel_u = rel(&u, &fp.u_bar);
    assert!(rel_v < 0.05, "v relative error {rel_v:.4} after 2e5 samples");
    assert!(rel_u < 0.05, "u relative error {rel_u:.4} after 2e5 samples");
}

#[test]
fn compact_features_share_the_same_guarantees() {
    let (mdp, policy, theta) = critic_instance();
    let n = mdp.num_states;
    // Dense 3-dimensional features for both critics, resampled until they
    // pass the rank and constant-span validators and give a stable M.
    let features = (0..)
        .find_map(|attempt| {
            let mut rng = SplitRng::new(0xFEA7 + attempt);
            let phi_v = rng.fill_gaussian(n * 3);
            let phi_u = rng.fill_gaussian(n * 3);
            let f = CriticFeatures::new(n, 3, phi_v, 3, phi_u, false).ok()?;
            let fp = td_fixed_point(&mdp, &policy, &theta, &f).ok()?;
            fp.negative_definite.then_some(f)
        })
        .unwrap();
    let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();

    let mut v = vec![0.0; 3];
    let mut u = vec![0.0; 3];
    let mut rng = SplitRng::new(100);
    let mut x = mdp.initial_state;
    for m in 1..=200_000usize {
        let probs = policy.policy_probs(&theta, x);
        let a = rng.categorical(&probs);
        let r = mdp.sample_reward(x, a, &mut rng);
        let next = rng.categorical(mdp.transition_row(x, a));
        let zeta3 = (m as f64).powf(-0.66);
        td_update_discounted(
            &mut v,
            &mut u,
            features.phi_v(x),
            features.phi_v(next),
            features.phi_u(x),
            features.phi_u(next),
            r,
            mdp.gamma,
            zeta3,
        );
        x = next;
    }
    let rel = |got: &[f64], want: &[f64]| -> f64 {
        let num: f64 = got
            .iter()
            .zip(want)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        num / linalg::norm_2(want)
    };
    assert!(rel(&v, &fp.v_bar) < 0.05, "compact v error {:.4}", rel(&v, &fp.v_bar));
    assert!(rel(&u, &fp.u_bar) < 0.05, "compact u error {:.4}", rel(&u, &fp.u_bar));
}

#[test]
fn one_state_fixed_point_hand_value() {
    // Single state, reward 1, γ = 0.5: V = 2 and U = (1 + 2γV)/(1−γ²) = 4.
    let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], RewardNoise::None, 0.5, 0).unwrap();
    let policy = BoltzmannPolicy::tabular(1, 1);
    let features = CriticFeatures::tabular(1);
    let fp = td_fixed_point(&mdp, &policy, &[0.0], &features).unwrap();
    assert!((fp.v_bar[0] - 2.0).abs() < 1e-12);
    assert!((fp.u_bar[0] - 4.0).abs() < 1e-12);

    let w = deterministic_expected_td(&features, &mdp, &policy, &[0.0], &[0.0, 0.0], 2_000, 0.5)
        .unwrap();
    assert!((w[0] - 2.0).abs() < 1e-8 && (w[1] - 4.0).abs() < 1e-8);
}
