//! Subcommand implementations. Each returns a library `Result`; the binary
//! maps the error family onto the exit code (2 config, 3 numeric, 4
//! verification).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use risk_ac_core::driver::{run, RunParams, RunTrace, TabularEnv};
use risk_ac_core::error::{Error, Result};
use risk_ac_core::linalg;
use risk_ac_core::mdp::{BoltzmannPolicy, TabularMdp};
use risk_ac_core::critic::deterministic_expected_td;
use risk_ac_core::oracle::{
    grad_average, grad_discounted, solve_average, solve_discounted, td_fixed_point, td_mean_system,
};
use risk_ac_core::perturb::{draw_perturbation, sf_gradient, spsa_gradient, PerturbKind};
use risk_ac_core::rng::SplitRng;

use crate::config::{load_run_config, load_sweep_config, BuiltEnv, RunConfig};
use crate::output::{
    atomic_write, median, write_checkpoints, write_json, write_sweep_aggregate, write_sweep_runs,
    write_test, write_trace, Checkpoint, Format, RunSummary, SweepAggRow, SweepRunRow,
};

/// Exact-solver diagnostics are emitted only when the state space is this
/// small; the linear solves are then negligible next to the run itself.
const ORACLE_STATE_LIMIT: usize = 64;

const RESIDUAL_TOL: f64 = 1e-10;

fn out_dir(out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Mean objective and variance of policy θ under the exact solver:
/// (V(x0), return variance) in the discounted regime, (average reward,
/// long-run variance) in the average regime.
fn oracle_eval(env: &TabularEnv, average: bool, theta: &[f64]) -> Result<(f64, f64)> {
    if average {
        let sol = solve_average(&env.mdp, &env.policy, theta)?;
        Ok((sol.rho, sol.lambda))
    } else {
        let sol = solve_discounted(&env.mdp, &env.policy, theta)?;
        Ok((sol.v_x0(&env.mdp), sol.variance_x0(&env.mdp)))
    }
}

fn run_built(env: &BuiltEnv, params: &RunParams) -> Result<RunTrace> {
    match env {
        BuiltEnv::Tabular(e) => run(e, params),
        BuiltEnv::Traffic(e) => run(e, params),
    }
}

pub fn cmd_run(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
    format: Format,
) -> Result<()> {
    let mut cfg = load_run_config(config_path)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let env = cfg.build_env()?;
    let params = cfg.build_params(env.policy_dim())?;
    let average = params.algorithm.is_average();
    log::info!(
        "run: algorithm={} seed={} outer_iterations={} policy_dim={}",
        params.algorithm.name(),
        params.seed,
        params.outer_iterations,
        env.policy_dim()
    );

    let trace = run_built(&env, &params)?;
    let dir = out_dir(out);
    let ext = format.extension();
    write_trace(&dir.join(format!("trace.{ext}")), &trace, format)?;
    write_test(&dir.join(format!("test.{ext}")), &trace, format)?;

    let mut oracle_value = None;
    let mut oracle_variance = None;
    if let Some(tab) = env.tabular() {
        if tab.mdp.num_states <= ORACLE_STATE_LIMIT {
            let stride = (params.outer_iterations / 32).max(1);
            let mut rows = Vec::new();
            for r in &trace.records {
                if r.n == 1 || r.n % stride == 0 || r.n == params.outer_iterations {
                    match oracle_eval(tab, average, &r.theta) {
                        Ok((value, variance)) => rows.push(Checkpoint { n: r.n, value, variance }),
                        Err(e) => log::warn!("oracle checkpoint at n={} skipped: {e}", r.n),
                    }
                }
            }
            write_checkpoints(&dir.join(format!("oracle_checkpoints.{ext}")), &rows, format)?;
            match oracle_eval(tab, average, &trace.final_theta) {
                Ok((value, variance)) => {
                    oracle_value = Some(value);
                    oracle_variance = Some(variance);
                }
                Err(e) => log::warn!("oracle evaluation of the final policy skipped: {e}"),
            }
        }
    }

    let summary = RunSummary {
        algorithm: params.algorithm.name().to_string(),
        seed: params.seed,
        outer_iterations: params.outer_iterations,
        final_lambda: trace.final_lambda,
        test_episodes: trace.test.len(),
        test_mean: trace.test_mean(),
        test_variance: trace.test_variance(),
        oracle_value_final: oracle_value,
        oracle_variance_final: oracle_variance,
        final_theta: trace.final_theta.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let mut line = format!(
        "run complete: algorithm={} seed={} test_mean={:.6} test_variance={:.6} final_lambda={:.6}",
        summary.algorithm, summary.seed, summary.test_mean, summary.test_variance,
        summary.final_lambda
    );
    if let Some(v) = oracle_variance {
        line.push_str(&format!(" oracle_variance_final={v:.6}"));
    }
    println!("{line}");
    Ok(())
}

/// Policy-induced chain tables: action mix, transition matrix, first and
/// second reward moments, and the reward-weighted transition kernel.
struct Induced {
    p: Vec<f64>,
    r: Vec<f64>,
    r2: Vec<f64>,
    g: Vec<f64>,
}

fn induced(mdp: &TabularMdp, policy: &BoltzmannPolicy, theta: &[f64]) -> Induced {
    let n = mdp.num_states;
    let na = mdp.num_actions;
    let mut p = vec![0.0; n * n];
    let mut g = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for x in 0..n {
        let mu = policy.policy_probs(theta, x);
        for a in 0..na {
            let w = mu[a];
            r[x] += w * mdp.r(x, a);
            r2[x] += w * mdp.r2(x, a);
            for y in 0..n {
                p[x * n + y] += w * mdp.p(x, a, y);
                g[x * n + y] += w * mdp.r(x, a) * mdp.p(x, a, y);
            }
        }
    }
    Induced { p, r, r2, g }
}

#[derive(Serialize)]
struct DiscountedReport {
    gamma: f64,
    v: Vec<f64>,
    u: Vec<f64>,
    q: Vec<f64>,
    w: Vec<f64>,
    variance: Vec<f64>,
    v_x0: f64,
    u_x0: f64,
    variance_x0: f64,
    d_gamma: Vec<f64>,
    d_gamma2: Vec<f64>,
    cond_v: f64,
    cond_u: f64,
    max_residual_v: f64,
    max_residual_u: f64,
    max_residual_q: f64,
    max_residual_w: f64,
    max_variance_identity_gap: f64,
}

#[derive(Serialize)]
struct AverageReport {
    rho: f64,
    eta: f64,
    variance: f64,
    d_stat: Vec<f64>,
    v_diff: Vec<f64>,
    u_diff: Vec<f64>,
    q_diff: Vec<f64>,
    w_diff: Vec<f64>,
    cond: f64,
    max_poisson_residual_v: f64,
    max_poisson_residual_u: f64,
    stationarity_gap: f64,
    normalization_gap: f64,
}

#[derive(Serialize)]
struct OracleReport {
    theta: Vec<f64>,
    discounted: DiscountedReport,
    average: AverageReport,
}

/// Solve the configured tabular instance exactly in both regimes, print
/// every solution field as JSON, and verify all residuals.
pub fn cmd_oracle(config_path: &Path, out: Option<&Path>, _format: Format) -> Result<()> {
    let cfg = load_run_config(config_path)?;
    let env = cfg.build_env()?;
    let tab = env.tabular().ok_or_else(|| {
        Error::Config("the oracle command needs a tabular environment".into())
    })?;
    let mdp = &tab.mdp;
    let policy = &tab.policy;
    let dim = policy.dim;
    let theta = match &cfg.theta_init {
        Some(t) => {
            if t.len() != dim {
                return Err(Error::Config(format!(
                    "theta_init has length {}, policy has {dim}",
                    t.len()
                )));
            }
            t.clone()
        }
        None => cfg.theta_box.build(dim)?.midpoint(),
    };

    let n = mdp.num_states;
    let na = mdp.num_actions;
    let gamma = mdp.gamma;
    let ind = induced(mdp, policy, &theta);
    let sol = solve_discounted(mdp, policy, &theta)?;
    let avg = solve_average(mdp, policy, &theta)?;

    // Fixed-point residuals of the discounted system, recomputed from the
    // model tables rather than trusted from the solver.
    let mut res_v: f64 = 0.0;
    let mut res_u: f64 = 0.0;
    let mut res_q: f64 = 0.0;
    let mut res_w: f64 = 0.0;
    let mut identity_gap: f64 = 0.0;
    for x in 0..n {
        let pv: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.v[y]).sum();
        let gv: f64 = (0..n).map(|y| ind.g[x * n + y] * sol.v[y]).sum();
        let pu: f64 = (0..n).map(|y| ind.p[x * n + y] * sol.u[y]).sum();
        res_v = res_v.max((sol.v[x] - (ind.r[x] + gamma * pv)).abs());
        res_u = res_u.max((sol.u[x] - (ind.r2[x] + 2.0 * gamma * gv + gamma * gamma * pu)).abs());
        identity_gap = identity_gap.max((sol.lambda[x] - (sol.u[x] - sol.v[x] * sol.v[x])).abs());
        for a in 0..na {
            let row = mdp.transition_row(x, a);
            let pva: f64 = row.iter().zip(&sol.v).map(|(p, v)| p * v).sum();
            let pua: f64 = row.iter().zip(&sol.u).map(|(p, u)| p * u).sum();
            let q = mdp.r(x, a) + gamma * pva;
            let w = mdp.r2(x, a) + 2.0 * gamma * mdp.r(x, a) * pva + gamma * gamma * pua;
            res_q = res_q.max((sol.q[x * na + a] - q).abs());
            res_w = res_w.max((sol.w[x * na + a] - w).abs());
        }
    }

    // Poisson residuals, stationarity, and the d-weighted normalization of
    // the differential values.
    let mut pres_v: f64 = 0.0;
    let mut pres_u: f64 = 0.0;
    let mut d_next = vec![0.0; n];
    let mut dv = 0.0;
    let mut du = 0.0;
    for x in 0..n {
        let pv: f64 = (0..n).map(|y| ind.p[x * n + y] * avg.v_diff[y]).sum();
        let pu: f64 = (0..n).map(|y| ind.p[x * n + y] * avg.u_diff[y]).sum();
        pres_v = pres_v.max((avg.v_diff[x] + avg.rho - ind.r[x] - pv).abs());
        pres_u = pres_u.max((avg.u_diff[x] + avg.eta - ind.r2[x] - pu).abs());
        for y in 0..n {
            d_next[y] += avg.d_stat[x] * ind.p[x * n + y];
        }
        dv += avg.d_stat[x] * avg.v_diff[x];
        du += avg.d_stat[x] * avg.u_diff[x];
    }
    let stationarity_gap = d_next
        .iter()
        .zip(&avg.d_stat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let normalization_gap = dv.abs().max(du.abs());

    let report = OracleReport {
        theta: theta.clone(),
        discounted: DiscountedReport {
            gamma,
            v: sol.v.clone(),
            u: sol.u.clone(),
            q: sol.q.clone(),
            w: sol.w.clone(),
            variance: sol.lambda.clone(),
            v_x0: sol.v_x0(mdp),
            u_x0: sol.u_x0(mdp),
            variance_x0: sol.variance_x0(mdp),
            d_gamma: sol.d_gamma.clone(),
            d_gamma2: sol.d_gamma2.clone(),
            cond_v: sol.cond_v,
            cond_u: sol.cond_u,
            max_residual_v: res_v,
            max_residual_u: res_u,
            max_residual_q: res_q,
            max_residual_w: res_w,
            max_variance_identity_gap: identity_gap,
        },
        average: AverageReport {
            rho: avg.rho,
            eta: avg.eta,
            variance: avg.lambda,
            d_stat: avg.d_stat.clone(),
            v_diff: avg.v_diff.clone(),
            u_diff: avg.u_diff.clone(),
            q_diff: avg.q_diff.clone(),
            w_diff: avg.w_diff.clone(),
            cond: avg.cond,
            max_poisson_residual_v: pres_v,
            max_poisson_residual_u: pres_u,
            stationarity_gap,
            normalization_gap,
        },
    };

    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("cannot serialize oracle report: {e}")))?;
    println!("{text}");
    if let Some(dir) = out {
        write_json(&dir.join("oracle.json"), &report)?;
    }

    let checks = [
        ("V fixed point", res_v),
        ("U fixed point", res_u),
        ("Q fixed point", res_q),
        ("W fixed point", res_w),
        ("variance identity", identity_gap),
        ("Poisson V", pres_v),
        ("Poisson U", pres_u),
        ("stationarity", stationarity_gap),
        ("normalization", normalization_gap),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, r)| !(*r < RESIDUAL_TOL))
        .map(|(name, r)| format!("{name} residual {r:.3e}"))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Verification(format!(
            "oracle residuals exceed {RESIDUAL_TOL:.0e}: {}",
            bad.join(", ")
        )));
    }
    Ok(())
}

struct CheckLine {
    name: String,
    value: f64,
    threshold: f64,
    passed: bool,
}

fn check(lines: &mut Vec<CheckLine>, name: impl Into<String>, value: f64, threshold: f64) {
    let passed = value < threshold;
    lines.push(CheckLine { name: name.into(), value, threshold, passed });
}

fn print_checks(lines: &[CheckLine]) -> usize {
    let mut failed = 0;
    for l in lines {
        println!(
            "{}: {:.3e} (threshold {:.1e}) {}",
            l.name,
            l.value,
            l.threshold,
            if l.passed { "pass" } else { "FAIL" }
        );
        if !l.passed {
            failed += 1;
        }
    }
    failed
}

#[derive(Serialize)]
struct CheckRow {
    name: String,
    value: f64,
    threshold: f64,
    passed: bool,
}

fn write_check_report(path: &Path, lines: &[CheckLine]) -> Result<()> {
    let rows: Vec<CheckRow> = lines
        .iter()
        .map(|l| CheckRow {
            name: l.name.clone(),
            value: l.value,
            threshold: l.threshold,
            passed: l.passed,
        })
        .collect();
    write_json(path, &rows)
}

fn perturbed(theta: &[f64], offset: &[f64]) -> Vec<f64> {
    theta.iter().zip(offset).map(|(t, o)| t + o).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative gap between an approximation and an analytic vector, guarded
/// against tiny denominators.
fn rel_err(approx: &[f64], analytic: &[f64]) -> f64 {
    max_abs_diff(approx, analytic) / linalg::norm_inf(analytic).max(1.0)
}

/// Averaged perturbation-gradient bias against the analytic ascent
/// direction, using exact solver values in place of critics.
fn stochastic_bias(
    mdp: &TabularMdp,
    policy: &BoltzmannPolicy,
    theta: &[f64],
    lambda: f64,
    kind: PerturbKind,
    beta: f64,
    draws: usize,
    rng: &mut SplitRng,
) -> Result<f64> {
    let g = grad_discounted(mdp, policy, theta)?;
    let target: Vec<f64> = g.grad_lagrangian(lambda).iter().map(|t| -t).collect();
    let base = solve_discounted(mdp, policy, theta)?;
    let v0 = base.v_x0(mdp);
    let u0 = base.u_x0(mdp);

    let dim = policy.dim;
    let mut mean = vec![0.0; dim];
    for _ in 0..draws {
        let draw = draw_perturbation(kind, dim, false, beta, rng);
        let sol = solve_discounted(mdp, policy, &perturbed(theta, &draw.offset()))?;
        let dv = sol.v_x0(mdp) - v0;
        let du = sol.u_x0(mdp) - u0;
        let est = match kind {
            PerturbKind::Rademacher => spsa_gradient(dv, du, v0, lambda, &draw),
            PerturbKind::Gaussian => sf_gradient(dv, du, v0, lambda, &draw),
        };
        for (m, e) in mean.iter_mut().zip(&est) {
            *m += e;
        }
    }
    for m in mean.iter_mut() {
        *m /= draws as f64;
    }
    Ok(max_abs_diff(&mean, &target))
}

/// Analytic-gradient and estimator-bias verification on the configured
/// tabular instance.
pub fn cmd_gradcheck(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
    _format: Format,
) -> Result<()> {
    let mut cfg = load_run_config(config_path)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let env = cfg.build_env()?;
    let tab = env.tabular().ok_or_else(|| {
        Error::Config("the gradcheck command needs a tabular environment".into())
    })?;
    let mdp = &tab.mdp;
    let policy = &tab.policy;
    let dim = policy.dim;
    let theta_box = cfg.theta_box.build(dim)?;
    let mut rng = SplitRng::new(cfg.seed);
    let mut lines = Vec::new();

    // (a) Analytic gradients against central finite differences at
    // sampled parameters.
    let h = 1e-5;
    let mut worst = [0.0f64; 4];
    for _ in 0..3 {
        let theta: Vec<f64> = (0..dim)
            .map(|i| rng.uniform(theta_box.lo[i], theta_box.hi[i]))
            .collect();
        let g = grad_discounted(mdp, policy, &theta)?;
        let ga = grad_average(mdp, policy, &theta)?;
        let mut fd_v = vec![0.0; dim];
        let mut fd_u = vec![0.0; dim];
        let mut fd_rho = vec![0.0; dim];
        let mut fd_eta = vec![0.0; dim];
        for i in 0..dim {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let sp = solve_discounted(mdp, policy, &tp)?;
            let sm = solve_discounted(mdp, policy, &tm)?;
            fd_v[i] = (sp.v_x0(mdp) - sm.v_x0(mdp)) / (2.0 * h);
            fd_u[i] = (sp.u_x0(mdp) - sm.u_x0(mdp)) / (2.0 * h);
            let ap = solve_average(mdp, policy, &tp)?;
            let am = solve_average(mdp, policy, &tm)?;
            fd_rho[i] = (ap.rho - am.rho) / (2.0 * h);
            fd_eta[i] = (ap.eta - am.eta) / (2.0 * h);
        }
        worst[0] = worst[0].max(rel_err(&fd_v, &g.grad_v));
        worst[1] = worst[1].max(rel_err(&fd_u, &g.grad_u));
        worst[2] = worst[2].max(rel_err(&fd_rho, &ga.grad_rho));
        worst[3] = worst[3].max(rel_err(&fd_eta, &ga.grad_eta));
    }
    check(&mut lines, "analytic grad V vs central differences", worst[0], 1e-5);
    check(&mut lines, "analytic grad U vs central differences", worst[1], 1e-5);
    check(&mut lines, "analytic grad rho vs central differences", worst[2], 1e-5);
    check(&mut lines, "analytic grad eta vs central differences", worst[3], 1e-5);

    // With a zero multiplier the ascent direction must reduce to the value
    // gradient with no residue from the variance term.
    let theta0 = theta_box.midpoint();
    let g0 = grad_discounted(mdp, policy, &theta0)?;
    let l0 = g0.grad_lagrangian(0.0);
    let gap = g0
        .grad_v
        .iter()
        .zip(&l0)
        .map(|(gv, gl)| (gv + gl).abs())
        .fold(0.0f64, f64::max);
    check(&mut lines, "zero-multiplier direction equals grad V", gap, f64::MIN_POSITIVE);

    // (b) Averaged SPSA and SF estimates against the analytic direction,
    // then again at half the smoothing constant.
    let draws = 20_000;
    let beta = cfg.beta;
    let lambda = 0.5;
    let tol = (10.0 * beta).max(5e-2);
    let theta_s: Vec<f64> = (0..dim)
        .map(|i| rng.uniform(theta_box.lo[i], theta_box.hi[i]))
        .collect();
    for (kind, label) in [(PerturbKind::Rademacher, "spsa"), (PerturbKind::Gaussian, "sf")] {
        let mut rng_full = rng.split(0xB1A5 ^ kind as u64);
        let mut rng_half = rng.split(0xB1A6 ^ kind as u64);
        let err_full =
            stochastic_bias(mdp, policy, &theta_s, lambda, kind, beta, draws, &mut rng_full)?;
        // Per-draw estimator variance scales as 1/beta^2, so the half-beta
        // pass takes four times the draws; both errors then carry the same
        // Monte-Carlo noise and the ratio isolates the systematic bias.
        let err_half = stochastic_bias(
            mdp,
            policy,
            &theta_s,
            lambda,
            kind,
            0.5 * beta,
            4 * draws,
            &mut rng_half,
        )?;
        check(&mut lines, format!("{label} bias at beta={beta}"), err_full, tol);
        // Halving beta must not inflate the bias beyond estimation noise.
        check(
            &mut lines,
            format!("{label} bias growth when beta is halved"),
            err_half,
            1.5 * err_full + 1e-3,
        );
    }

    let failed = print_checks(&lines);
    if let Some(dir) = out {
        write_check_report(&dir.join("gradcheck.json"), &lines)?;
    }
    if failed > 0 {
        return Err(Error::Verification(format!("gradcheck: {failed} checks failed")));
    }
    Ok(())
}

/// Critic verification on the configured tabular instance: fixed point vs
/// exact values, mean-dynamics spectrum, stochastic convergence within the
/// sample budget, and the deterministic mean-path curve.
pub fn cmd_tdcheck(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
    samples: usize,
    format: Format,
) -> Result<()> {
    let mut cfg = load_run_config(config_path)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    let env = cfg.build_env()?;
    let tab = env.tabular().ok_or_else(|| {
        Error::Config("the tdcheck command needs a tabular environment".into())
    })?;
    let mdp = &tab.mdp;
    let policy = &tab.policy;
    let features = &tab.features;
    let dim = policy.dim;
    let theta = match &cfg.theta_init {
        Some(t) => t.clone(),
        None => cfg.theta_box.build(dim)?.midpoint(),
    };
    let schedules = cfg.schedules.build()?;
    let mut lines = Vec::new();

    let fp = td_fixed_point(mdp, policy, &theta, features)?;
    let top = fp.sym_spectrum.last().copied().unwrap_or(f64::NAN);
    println!(
        "mean-dynamics symmetric spectrum: [{}]",
        fp.sym_spectrum
            .iter()
            .map(|e| format!("{e:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    check(&mut lines, "largest symmetric-part eigenvalue (must be < 0)", top, 0.0);

    // Stochastic TD pass along one simulated trajectory.
    let mut v = vec![0.0; features.dim_v];
    let mut u = vec![0.0; features.dim_u];
    let mut rng = SplitRng::new(cfg.seed);
    let mut x = mdp.initial_state;
    for m in 1..=samples {
        let probs = policy.policy_probs(&theta, x);
        let a = rng.categorical(&probs);
        let r = mdp.sample_reward(x, a, &mut rng);
        let next = rng.categorical(mdp.transition_row(x, a));
        risk_ac_core::critic::td_update_discounted(
            &mut v,
            &mut u,
            features.phi_v(x),
            features.phi_v(next),
            features.phi_u(x),
            features.phi_u(next),
            r,
            mdp.gamma,
            schedules.zeta3(m),
        );
        x = next;
    }
    let rel = |got: &[f64], want: &[f64]| -> f64 {
        let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        num / linalg::norm_2(want)
    };
    check(
        &mut lines,
        format!("stochastic TD relative error in v after {samples} samples"),
        rel(&v, &fp.v_bar),
        0.05,
    );
    check(
        &mut lines,
        format!("stochastic TD relative error in u after {samples} samples"),
        rel(&u, &fp.u_bar),
        0.05,
    );

    // Deterministic mean-path iteration from zero weights, with the step
    // size set by the contraction bound 2|λ_max(S)| / σ_max(M)².
    let (m_mat, _, _) = td_mean_system(mdp, policy, &theta, features)?;
    let lam_s = top.abs();
    let (sq_eigs, _) = linalg::symmetric_eigen(&(m_mat.transpose() * &m_mat));
    let sigma_max = sq_eigs.last().copied().unwrap_or(0.0).sqrt();
    let zeta = 0.9 * 2.0 * lam_s / (sigma_max * sigma_max);
    let wdim = features.dim_v + features.dim_u;
    let w0 = vec![0.0; wdim];
    let mut wbar = fp.v_bar.clone();
    wbar.extend_from_slice(&fp.u_bar);
    let mut curve = Vec::new();
    let mut iters = 1usize;
    let det_budget = 200_000usize;
    while iters <= det_budget {
        let w = deterministic_expected_td(features, mdp, policy, &theta, &w0, iters, zeta)?;
        let resid: f64 =
            w.iter().zip(&wbar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        curve.push((iters, resid));
        iters *= 2;
    }
    let first = curve.first().copied().unwrap_or((0, f64::NAN));
    let last = curve.last().copied().unwrap_or((0, f64::NAN));
    println!(
        "deterministic mean-path residual: {:.3e} at {} iterations -> {:.3e} at {} iterations",
        first.1, first.0, last.1, last.0
    );
    check(
        &mut lines,
        format!("deterministic mean-path residual after {} iterations", last.0),
        last.1,
        (1e-8f64).max(first.1 * 1e-6),
    );

    let failed = print_checks(&lines);
    if let Some(dir) = out {
        write_check_report(&dir.join("tdcheck.json"), &lines)?;
        let mut text = String::from("iterations,residual\n");
        for (it, r) in &curve {
            text.push_str(&format!("{it},{r}\n"));
        }
        let ext = format.extension();
        if format == Format::Csv {
            atomic_write(&dir.join(format!("td_curve.{ext}")), text.as_bytes())?;
        } else {
            #[derive(Serialize)]
            struct CurveRow {
                iterations: usize,
                residual: f64,
            }
            let rows: Vec<CurveRow> =
                curve.iter().map(|(i, r)| CurveRow { iterations: *i, residual: *r }).collect();
            write_json(&dir.join(format!("td_curve.{ext}")), &rows)?;
        }
    }
    if failed > 0 {
        return Err(Error::Verification(format!("tdcheck: {failed} checks failed")));
    }
    Ok(())
}

struct SweepOutcome {
    algorithm: String,
    seed: u64,
    result: Result<RunTrace>,
}

/// Run every (algorithm, seed) pair of the sweep, write per-run artifacts,
/// and reduce the test-phase statistics per algorithm.
pub fn cmd_sweep(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
    workers: usize,
    format: Format,
) -> Result<()> {
    let sweep = load_sweep_config(config_path)?;
    let dir = out_dir(out);
    let ext = format.extension();

    // Sorted run identifiers make the reduce deterministic regardless of
    // which worker finishes first.
    let mut algorithms = sweep.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let mut seeds = match seed_override {
        Some(s) => vec![s],
        None => sweep.seeds.clone(),
    };
    seeds.sort_unstable();
    seeds.dedup();
    let jobs: Vec<(String, u64)> = algorithms
        .iter()
        .flat_map(|a| seeds.iter().map(move |s| (a.clone(), *s)))
        .collect();
    log::info!("sweep: {} algorithms x {} seeds, {} workers", algorithms.len(), seeds.len(), workers.max(1));

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<SweepOutcome>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let base = &sweep.base;
    let dir_ref = &dir;
    let jobs_ref = &jobs;
    let outcomes_ref = &outcomes;

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= jobs_ref.len() {
                    break;
                }
                let (algorithm, seed) = &jobs_ref[idx];
                let result = (|| -> Result<RunTrace> {
                    let mut cfg: RunConfig = base.clone();
                    cfg.algorithm = algorithm.clone();
                    cfg.seed = *seed;
                    let env = cfg.build_env()?;
                    let params = cfg.build_params(env.policy_dim())?;
                    let trace = run_built(&env, &params)?;
                    let stem = format!("{algorithm}_seed{seed}");
                    write_trace(&dir_ref.join(format!("{stem}_trace.{ext}")), &trace, format)?;
                    write_test(&dir_ref.join(format!("{stem}_test.{ext}")), &trace, format)?;
                    Ok(trace)
                })();
                if let Err(e) = &result {
                    log::error!("sweep run {algorithm} seed {seed} failed: {e}");
                }
                outcomes_ref.lock().unwrap()[idx] = Some(SweepOutcome {
                    algorithm: algorithm.clone(),
                    seed: *seed,
                    result,
                });
            });
        }
    });

    let outcomes = outcomes.into_inner().unwrap();
    let mut run_rows = Vec::new();
    let mut pooled: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut per_run: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut failures = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o.result {
            Ok(trace) => {
                run_rows.push(SweepRunRow {
                    algorithm: o.algorithm.clone(),
                    seed: o.seed,
                    test_mean: trace.test_mean(),
                    test_variance: trace.test_variance(),
                    final_lambda: trace.final_lambda,
                });
                let pool = pooled.entry(o.algorithm.clone()).or_default();
                pool.extend(trace.test.iter().map(|t| t.value));
                let (means, vars) = per_run.entry(o.algorithm).or_default();
                means.push(trace.test_mean());
                vars.push(trace.test_variance());
            }
            Err(e) => failures.push((o.algorithm, o.seed, e)),
        }
    }

    let agg_rows: Vec<SweepAggRow> = pooled
        .iter()
        .map(|(algorithm, values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let (means, vars) = &per_run[algorithm];
            SweepAggRow {
                algorithm: algorithm.clone(),
                runs: means.len(),
                mean_return: mean,
                variance_return: var,
                median_test_mean: median(means),
                median_test_variance: median(vars),
            }
        })
        .collect();

    write_sweep_runs(&dir.join(format!("runs.{ext}")), &run_rows, format)?;
    write_sweep_aggregate(&dir.join(format!("aggregate.{ext}")), &agg_rows, format)?;

    for row in &agg_rows {
        println!(
            "{}: runs={} mean_return={:.6} variance_return={:.6} median_test_mean={:.6} median_test_variance={:.6}",
            row.algorithm,
            row.runs,
            row.mean_return,
            row.variance_return,
            row.median_test_mean,
            row.median_test_variance
        );
    }
    if !failures.is_empty() {
        for (a, s, e) in &failures {
            eprintln!("failed: {a} seed {s}: {e}");
        }
        let (_, _, first) = failures.swap_remove(0);
        return Err(first);
    }
    Ok(())
}

/// Render the artifacts in a directory (a sweep's tables, or a single
/// run's summary) as an aligned text table on stdout.
pub fn cmd_report(dir: &Path, _format: Format) -> Result<()> {
    let agg = ["csv", "json"]
        .iter()
        .map(|ext| dir.join(format!("aggregate.{ext}")))
        .find(|p| p.exists());
    if let Some(path) = agg {
        let runs = ["csv", "json"]
            .iter()
            .map(|ext| dir.join(format!("runs.{ext}")))
            .find(|p| p.exists());
        print_table_file(&path)?;
        if let Some(runs) = runs {
            println!();
            print_table_file(&runs)?;
        }
        return Ok(());
    }
    let summary = dir.join("summary.json");
    if summary.exists() {
        let text = std::fs::read_to_string(&summary)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", summary.display())))?;
        println!("{text}");
        return Ok(());
    }
    Err(Error::Config(format!(
        "nothing to report in {} (no aggregate table or summary)",
        dir.display()
    )))
}

/// Load a CSV or JSON table (array of flat objects) and print it aligned.
fn print_table_file(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let arr = value
            .as_array()
            .ok_or_else(|| Error::Config(format!("{}: expected a JSON array", path.display())))?;
        if let Some(first) = arr.first().and_then(|v| v.as_object()) {
            let header: Vec<String> = first.keys().cloned().collect();
            rows.push(header.clone());
            for item in arr {
                let obj = item.as_object().ok_or_else(|| {
                    Error::Config(format!("{}: expected objects in array", path.display()))
                })?;
                rows.push(
                    header
                        .iter()
                        .map(|k| obj.get(k).map_or(String::new(), |v| v.to_string()))
                        .collect(),
                );
            }
        }
    } else {
        for line in text.lines() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    if rows.is_empty() {
        return Ok(());
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    println!("{}:", path.display());
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:width$}", width = widths[i]))
            .collect();
        println!("  {}", line.join("  "));
    }
    Ok(())
}

/// Error family to process exit code: 2 for configuration problems, 4 for
/// failed verification, 3 for runtime numeric failures.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_config() {
        2
    } else if matches!(err, Error::Verification(_)) {
        4
    } else {
        3
    }
}
