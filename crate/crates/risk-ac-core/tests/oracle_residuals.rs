//! Exact-solver verification on randomized instances: Bellman and Poisson
//! residuals, finite-difference gradient checks, relabeling invariance,
//! occupation identities, and projected fixed-point equations.

mod common;

use common::{induced_model, max_abs_diff, random_mdp, random_mdp_sized};
use nalgebra::DMatrix;
use risk_ac_core::critic::CriticFeatures;
use risk_ac_core::linalg;
use risk_ac_core::mdp::{BoltzmannPolicy, RewardNoise, TabularMdp};
use risk_ac_core::oracle::{
    grad_average, grad_discounted, solve_average, solve_discounted, stationary_distribution,
    td_fixed_point, td_mean_system,
};
use risk_ac_core::rng::SplitRng;

const RESIDUAL_TOL: f64 = 1e-10;

#[test]
fn fifty_random_mdps_satisfy_bellman_identities() {
    for seed in 0..50u64 {
        let (mdp, policy, theta) = random_mdp(seed, 8, 4, 1.0);
        let n = mdp.num_states;
        let na = mdp.num_actions;
        let ind = induced_model(&mdp, &policy, &theta);
        let sol = solve_discounted(&mdp, &policy, &theta).unwrap();
        let gamma = mdp.gamma;

        for x in 0..n {
            let pv: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.v[y]).sum();
            let gv: f64 = (0..n).map(|y| ind.g[x * n + y] * sol.v[y]).sum();
            let pu: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.u[y]).sum();
            let res_v = sol.v[x] - (ind.r[x] + gamma * pv);
            let res_u = sol.u[x] - (ind.r2[x] + 2.0 * gamma * gv + gamma * gamma * pu);
            assert!(res_v.abs() < RESIDUAL_TOL, "seed {seed}: V residual {res_v:.3e} at {x}");
            assert!(res_u.abs() < RESIDUAL_TOL, "seed {seed}: U residual {res_u:.3e} at {x}");

            // Per-pair identities and the μ-weighted consistency sums.
            let mut v_sum = 0.0;
            let mut u_sum = 0.0;
            for a in 0..na {
                let row = mdp.transition_row(x, a);
                let pva: f64 = row.iter().zip(&sol.v).map(|(p, v)| p * v).sum();
                let pua: f64 = row.iter().zip(&sol.u).map(|(p, u)| p * u).sum();
                let q = mdp.r(x, a) + gamma * pva;
                let w = mdp.r2(x, a) + 2.0 * gamma * mdp.r(x, a) * pva + gamma * gamma * pua;
                assert!((sol.q[x * na + a] - q).abs() < RESIDUAL_TOL);
                assert!((sol.w[x * na + a] - w).abs() < RESIDUAL_TOL);
                v_sum += ind.mu[x * na + a] * q;
                u_sum += ind.mu[x * na + a] * w;
            }
            assert!((sol.v[x] - v_sum).abs() < RESIDUAL_TOL, "V(x) != sum mu Q at {x}");
            assert!((sol.u[x] - u_sum).abs() < RESIDUAL_TOL, "U(x) != sum mu W at {x}");

            // The per-state variance is stored as exactly U − V².
            assert_eq!(sol.lambda[x], sol.u[x] - sol.v[x] * sol.v[x]);
            assert!(sol.lambda[x] > -1e-9, "negative return variance {:.3e}", sol.lambda[x]);
        }

        for d in [&sol.d_gamma, &sol.d_gamma2] {
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!(d.iter().all(|p| *p > -1e-12));
        }
    }
}

#[test]
fn fifty_random_mdps_satisfy_poisson_identities() {
    for seed in 0..50u64 {
        let (mdp, policy, theta) = random_mdp(seed.wrapping_add(1000), 8, 4, 1.0);
        let n = mdp.num_states;
        let ind = induced_model(&mdp, &policy, &theta);
        let sol = solve_average(&mdp, &policy, &theta).unwrap();

        // d is stationary for P^θ and ρ, η are its reward averages.
        let mut d_next = vec![0.0; n];
        for x in 0..n {
            for y in 0..n {
                d_next[y] += sol.d_stat[x] * ind.p[x * n + y];
            }
        }
        assert!(max_abs_diff(&d_next, &sol.d_stat) < 1e-10, "seed {seed}: d not stationary");
        let rho: f64 = (0..n).map(|x| sol.d_stat[x] * ind.r[x]).sum();
        let eta: f64 = (0..n).map(|x| sol.d_stat[x] * ind.r2[x]).sum();
        assert!((sol.rho - rho).abs() < 1e-12);
        assert!((sol.eta - eta).abs() < 1e-12);
        assert!(sol.lambda > -1e-12, "long-run variance must be nonnegative");

        // Poisson residuals and the dᵀ· = 0 normalization.
        let mut dv = 0.0;
        let mut du = 0.0;
        for x in 0..n {
            let pv: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.v_diff[y]).sum();
            let pu: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.u_diff[y]).sum();
            let res_v = sol.v_diff[x] + sol.rho - ind.r[x] - pv;
            let res_u = sol.u_diff[x] + sol.eta - ind.r2[x] - pu;
            assert!(res_v.abs() < RESIDUAL_TOL, "seed {seed}: Poisson V residual {res_v:.3e}");
            assert!(res_u.abs() < RESIDUAL_TOL, "seed {seed}: Poisson U residual {res_u:.3e}");
            dv += sol.d_stat[x] * sol.v_diff[x];
            du += sol.d_stat[x] * sol.u_diff[x];
        }
        assert!(dv.abs() < 1e-10 && du.abs() < 1e-10, "normalization violated");
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let h = 1e-5;
    for seed in 100..120u64 {
        let (mdp, policy, theta) = random_mdp(seed, 6, 3, 1.0);
        let k1 = policy.dim;

        let g = grad_discounted(&mdp, &policy, &theta).unwrap();
        let ga = grad_average(&mdp, &policy, &theta).unwrap();
        let mut fd_v = vec![0.0; k1];
        let mut fd_u = vec![0.0; k1];
        let mut fd_rho = vec![0.0; k1];
        let mut fd_eta = vec![0.0; k1];
        for i in 0..k1 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let sp = solve_discounted(&mdp, &policy, &tp).unwrap();
            let sm = solve_discounted(&mdp, &policy, &tm).unwrap();
            fd_v[i] = (sp.v_x0(&mdp) - sm.v_x0(&mdp)) / (2.0 * h);
            fd_u[i] = (sp.u_x0(&mdp) - sm.u_x0(&mdp)) / (2.0 * h);
            let ap = solve_average(&mdp, &policy, &tp).unwrap();
            let am = solve_average(&mdp, &policy, &tm).unwrap();
            fd_rho[i] = (ap.rho - am.rho) / (2.0 * h);
            fd_eta[i] = (ap.eta - am.eta) / (2.0 * h);
        }

        let rel = |fd: &[f64], an: &[f64]| -> f64 {
            max_abs_diff(fd, an) / linalg::norm_inf(an).max(1.0)
        };
        assert!(rel(&fd_v, &g.grad_v) < 1e-5, "seed {seed}: grad V mismatch {:.3e}", rel(&fd_v, &g.grad_v));
        assert!(rel(&fd_u, &g.grad_u) < 1e-5, "seed {seed}: grad U mismatch {:.3e}", rel(&fd_u, &g.grad_u));
        assert!(rel(&fd_rho, &ga.grad_rho) < 1e-5, "seed {seed}: grad rho mismatch");
        assert!(rel(&fd_eta, &ga.grad_eta) < 1e-5, "seed {seed}: grad eta mismatch");
    }
}

#[test]
fn values_invariant_under_state_relabeling() {
    for seed in 200..210u64 {
        let (mdp, _, theta) = random_mdp_sized(seed, 5, 3, 1.0);
        let n = 5;
        let na = 3;
        // Fixed permutation sigma(x) = (x + 2) mod 5.
        let sigma = |x: usize| (x + 2) % n;
        let mut pt = vec![0.0; n * na * n];
        let mut rt = vec![0.0; n * na];
        let noise_mag = match mdp.reward_noise() {
            RewardNoise::Uniform(m) => Some(m.clone()),
            RewardNoise::Normal(m) => Some(m.clone()),
            RewardNoise::None => None,
        };
        let mut nt = noise_mag.clone().unwrap_or_default();
        for x in 0..n {
            for a in 0..na {
                rt[sigma(x) * na + a] = mdp.r(x, a);
                if let Some(m) = &noise_mag {
                    nt[sigma(x) * na + a] = m[x * na + a];
                }
                for y in 0..n {
                    pt[(sigma(x) * na + a) * n + sigma(y)] = mdp.p(x, a, y);
                }
            }
        }
        let noise = match mdp.reward_noise() {
            RewardNoise::None => RewardNoise::None,
            RewardNoise::Uniform(_) => RewardNoise::Uniform(nt.clone()),
            RewardNoise::Normal(_) => RewardNoise::Normal(nt.clone()),
        };
        let permuted =
            TabularMdp::new(n, na, pt, rt, noise, mdp.gamma, sigma(mdp.initial_state)).unwrap();

        let policy = BoltzmannPolicy::tabular(n, na);
        let mut theta_p = vec![0.0; n * na];
        for x in 0..n {
            for a in 0..na {
                theta_p[sigma(x) * na + a] = theta[x * na + a];
            }
        }

        let a = solve_discounted(&mdp, &policy, &theta).unwrap();
        let b = solve_discounted(&permuted, &policy, &theta_p).unwrap();
        assert!((a.v_x0(&mdp) - b.v_x0(&permuted)).abs() < 1e-10);
        assert!((a.variance_x0(&mdp) - b.variance_x0(&permuted)).abs() < 1e-10);

        let aa = solve_average(&mdp, &policy, &theta).unwrap();
        let ab = solve_average(&permuted, &policy, &theta_p).unwrap();
        assert!((aa.rho - ab.rho).abs() < 1e-10);
        assert!((aa.lambda - ab.lambda).abs() < 1e-10);
    }
}

#[test]
fn discounted_occupation_matches_truncated_power_series() {
    for seed in 300..310u64 {
        let (mdp, policy, theta) = random_mdp(seed, 7, 3, 1.0);
        let n = mdp.num_states;
        let ind = induced_model(&mdp, &policy, &theta);
        let sol = solve_discounted(&mdp, &policy, &theta).unwrap();
        for (kappa, d_ref) in [(mdp.gamma, &sol.d_gamma), (mdp.gamma * mdp.gamma, &sol.d_gamma2)] {
            // (1−κ) Σ_t κᵗ (P^θᵀ)ᵗ e_{x0}, truncated once κᵗ < 1e-14.
            let mut cur = vec![0.0; n];
            cur[mdp.initial_state] = 1.0;
            let mut acc = vec![0.0; n];
            let mut wt = 1.0;
            while wt > 1e-14 {
                for x in 0..n {
                    acc[x] += wt * cur[x];
                }
                let mut next = vec![0.0; n];
                for x in 0..n {
                    for y in 0..n {
                        next[y] += cur[x] * ind.p[x * n + y];
                    }
                }
                cur = next;
                wt *= kappa;
            }
            let series: Vec<f64> = acc.iter().map(|a| (1.0 - kappa) * a).collect();
            assert!(max_abs_diff(&series, d_ref) < 1e-9, "seed {seed}: occupation mismatch");
        }
    }
}

#[test]
fn stationary_distribution_matches_power_iteration() {
    for seed in 400..420u64 {
        let (mdp, policy, theta) = random_mdp(seed, 8, 4, 1.0);
        let n = mdp.num_states;
        let ind = induced_model(&mdp, &policy, &theta);
        let p = DMatrix::from_row_slice(n, n, &ind.p);
        let d = stationary_distribution(&p).unwrap();

        let mut cur = vec![1.0 / n as f64; n];
        for _ in 0..20_000 {
            let mut next = vec![0.0; n];
            for x in 0..n {
                for y in 0..n {
                    next[y] += cur[x] * ind.p[x * n + y];
                }
            }
            cur = next;
        }
        assert!(max_abs_diff(&cur, &d) < 1e-9, "seed {seed}: stationary mismatch");
    }
}

#[test]
fn td_fixed_point_solves_projected_bellman_equations() {
    for seed in 500..510u64 {
        let (mdp, policy, theta) = random_mdp_sized(seed, 6, 2, 0.2);
        let n = mdp.num_states;
        let kv = n - 2;
        let ku = n - 2;
        // Random dense features; resample until the validator accepts them.
        let features = (0..)
            .find_map(|attempt| {
                let mut rng = SplitRng::new(seed * 131 + attempt);
                let phi_v = rng.fill_gaussian(n * kv);
                let phi_u = rng.fill_gaussian(n * ku);
                CriticFeatures::new(n, kv, phi_v, ku, phi_u, false).ok()
            })
            .unwrap();

        let (m, xi, d_stat) = td_mean_system(&mdp, &policy, &theta, &features).unwrap();
        let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();

        // M w̄ + ξ = 0 for the stacked fixed point.
        let mut wbar = fp.v_bar.clone();
        wbar.extend_from_slice(&fp.u_bar);
        let resid = &m * nalgebra::DVector::from_column_slice(&wbar) + &xi;
        assert!(linalg::norm_inf(resid.as_slice()) < 1e-10, "seed {seed}: mean system residual");

        // Projected Bellman equations with the explicit projector
        // Π = Φ (ΦᵀDΦ)⁻¹ ΦᵀD for each feature block.
        let ind = induced_model(&mdp, &policy, &theta);
        let p = DMatrix::from_row_slice(n, n, &ind.p);
        let g = DMatrix::from_row_slice(n, n, &ind.g);
        let r = nalgebra::DVector::from_column_slice(&ind.r);
        let r2 = nalgebra::DVector::from_column_slice(&ind.r2);
        let dmat = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d_stat));
        let projector = |phi: &DMatrix<f64>| -> DMatrix<f64> {
            let gram = phi.transpose() * &dmat * phi;
            phi * linalg::inverse(&gram).unwrap() * phi.transpose() * &dmat
        };
        let phi_v = features.mat_v();
        let phi_u = features.mat_u();
        let pi_v = projector(&phi_v);
        let pi_u = projector(&phi_u);

        let v_fit = &phi_v * nalgebra::DVector::from_column_slice(&fp.v_bar);
        let u_fit = &phi_u * nalgebra::DVector::from_column_slice(&fp.u_bar);
        let gamma = mdp.gamma;
        let bell_v = &pi_v * (&r + gamma * &p * &v_fit);
        let bell_u = &pi_u * (&r2 + 2.0 * gamma * &g * &v_fit + gamma * gamma * &p * &u_fit);
        assert!(
            linalg::norm_inf((&v_fit - bell_v).as_slice()) < 1e-8,
            "seed {seed}: projected V equation violated"
        );
        assert!(
            linalg::norm_inf((&u_fit - bell_u).as_slice()) < 1e-8,
            "seed {seed}: projected U equation violated"
        );
    }
}

#[test]
fn tabular_td_fixed_point_reproduces_exact_values() {
    for seed in 600..610u64 {
        let (mdp, policy, theta) = random_mdp(seed, 6, 3, 0.2);
        let features = CriticFeatures::tabular(mdp.num_states);
        let fp = td_fixed_point(&mdp, &policy, &theta, &features).unwrap();
        let sol = solve_discounted(&mdp, &policy, &theta).unwrap();
        assert!(max_abs_diff(&fp.v_bar, &sol.v) < 1e-8, "seed {seed}: tabular v mismatch");
        assert!(max_abs_diff(&fp.u_bar, &sol.u) < 1e-8, "seed {seed}: tabular u mismatch");
    }
}
