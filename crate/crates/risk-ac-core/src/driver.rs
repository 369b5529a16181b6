//! Full learning runs: the two-trajectory discounted algorithms and the
//! online average-reward algorithm, over any environment exposing softmax
//! policy features and critic features. Produces a deterministic trace per
//! run given the seed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::actor::{
    average_actor_direction, first_order_step, lambda_step, newton_step,
    sharpe_direction_average, sharpe_direction_discounted, ActorState, StepSchedules, ThetaBox,
};
use crate::critic::{td_update_average, td_update_discounted, AverageCriticState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{BoltzmannPolicy, TabularMdp};
use crate::perturb::{
    draw_perturbation, sf_gradient, sf_hessian_step, spd_project, spsa_gradient,
    spsa_hessian_step, HessianAccumulator, PerturbKind,
};
use crate::rng::SplitRng;
use crate::traffic::{self, TrafficSpec, TrafficState};

/// Environment interface the drivers run against: sampled transitions,
/// per-(state, action) policy features for a softmax policy, and per-state
/// critic features for the two value estimators.
pub trait Env {
    type State: Clone;

    fn initial_state(&self) -> Self::State;
    fn num_actions(&self) -> usize;
    /// Sample one transition; returns (reward, next state).
    fn step(&self, s: &Self::State, a: usize, rng: &mut SplitRng) -> (f64, Self::State);

    fn policy_dim(&self) -> usize;
    fn policy_features(&self, s: &Self::State, a: usize, out: &mut [f64]);

    fn v_dim(&self) -> usize;
    fn v_features(&self, s: &Self::State, out: &mut [f64]);
    fn u_dim(&self) -> usize;
    fn u_features(&self, s: &Self::State, out: &mut [f64]);
}

/// Tabular model + policy parameterization + critic features as one
/// environment.
pub struct TabularEnv {
    pub mdp: TabularMdp,
    pub policy: BoltzmannPolicy,
    pub features: crate::critic::CriticFeatures,
}

impl TabularEnv {
    pub fn new(
        mdp: TabularMdp,
        policy: BoltzmannPolicy,
        features: crate::critic::CriticFeatures,
    ) -> Result<Self> {
        if policy.num_states != mdp.num_states || policy.num_actions != mdp.num_actions {
            return Err(Error::Config(String::from(
                "policy feature table does not match the model's state/action counts",
            )));
        }
        if features.num_states != mdp.num_states {
            return Err(Error::Config(String::from(
                "critic feature table does not match the model's state count",
            )));
        }
        Ok(TabularEnv { mdp, policy, features })
    }
}

impl Env for TabularEnv {
    type State = usize;

    fn initial_state(&self) -> usize {
        self.mdp.initial_state
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }

    fn step(&self, s: &usize, a: usize, rng: &mut SplitRng) -> (f64, usize) {
        let next = rng.categorical(self.mdp.transition_row(*s, a));
        let reward = self.mdp.sample_reward(*s, a, rng);
        (reward, next)
    }

    fn policy_dim(&self) -> usize {
        self.policy.dim
    }

    fn policy_features(&self, s: &usize, a: usize, out: &mut [f64]) {
        out.copy_from_slice(self.policy.feature(*s, a));
    }

    fn v_dim(&self) -> usize {
        self.features.dim_v
    }

    fn v_features(&self, s: &usize, out: &mut [f64]) {
        out.copy_from_slice(self.features.phi_v(*s));
    }

    fn u_dim(&self) -> usize {
        self.features.dim_u
    }

    fn u_features(&self, s: &usize, out: &mut [f64]) {
        out.copy_from_slice(self.features.phi_u(*s));
    }
}

/// The traffic network as an environment; reward is the negated
/// single-stage cost, and both critics share the bucket features.
pub struct TrafficEnv {
    pub spec: TrafficSpec,
}

impl TrafficEnv {
    pub fn new(spec: TrafficSpec) -> Result<Self> {
        spec.validate()?;
        Ok(TrafficEnv { spec })
    }
}

impl Env for TrafficEnv {
    type State = TrafficState;

    fn initial_state(&self) -> TrafficState {
        TrafficState::empty(&self.spec)
    }

    fn num_actions(&self) -> usize {
        self.spec.num_configs()
    }

    fn step(&self, s: &TrafficState, a: usize, rng: &mut SplitRng) -> (f64, TrafficState) {
        let (next, cost) = traffic::traffic_step(s, a, &self.spec, rng);
        (-cost, next)
    }

    fn policy_dim(&self) -> usize {
        self.spec.policy_feature_dim()
    }

    fn policy_features(&self, s: &TrafficState, a: usize, out: &mut [f64]) {
        traffic::policy_features(s, a, &self.spec, out);
    }

    fn v_dim(&self) -> usize {
        self.spec.critic_feature_dim()
    }

    fn v_features(&self, s: &TrafficState, out: &mut [f64]) {
        traffic::critic_features(s, &self.spec, out);
    }

    fn u_dim(&self) -> usize {
        self.spec.critic_feature_dim()
    }

    fn u_features(&self, s: &TrafficState, out: &mut [f64]) {
        traffic::critic_features(s, &self.spec, out);
    }
}

/// Scratch buffers for softmax policy evaluation over an environment.
struct PolicyScratch {
    phi: Vec<f64>,
    scores: Vec<f64>,
    probs: Vec<f64>,
}

impl PolicyScratch {
    fn new<E: Env>(env: &E) -> Self {
        PolicyScratch {
            phi: vec![0.0; env.policy_dim()],
            scores: vec![0.0; env.num_actions()],
            probs: vec![0.0; env.num_actions()],
        }
    }

    /// Fill `probs` with the softmax of θᵀφ(s,·), max-subtracted.
    fn compute_probs<E: Env>(&mut self, env: &E, theta: &[f64], s: &E::State) {
        for a in 0..env.num_actions() {
            env.policy_features(s, a, &mut self.phi);
            self.scores[a] = linalg::dot(theta, &self.phi);
        }
        let max = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, sc) in self.probs.iter_mut().zip(&self.scores) {
            *p = libm::exp(sc - max);
            sum += *p;
        }
        for p in self.probs.iter_mut() {
            *p /= sum;
        }
    }

    fn sample_action(&mut self, rng: &mut SplitRng) -> usize {
        rng.categorical(&self.probs)
    }

    /// ψ(s,a) = φ(s,a) − Σ_b μ(b|s) φ(s,b), using the probs computed last.
    fn score_function<E: Env>(&mut self, env: &E, s: &E::State, a: usize, out: &mut [f64]) {
        env.policy_features(s, a, out);
        for b in 0..env.num_actions() {
            let w = self.probs[b];
            if w == 0.0 {
                continue;
            }
            env.policy_features(s, b, &mut self.phi);
            for (o, phi) in out.iter_mut().zip(&self.phi) {
                *o -= w * phi;
            }
        }
    }
}

/// The thirteen algorithm variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    RsSpsaG,
    RsSfG,
    RsSpsaN,
    RsSfN,
    SpsaG,
    SfG,
    SpsaN,
    SfN,
    RsAc,
    Ac,
    RsSpsaGSr,
    RsSfGSr,
    RsAcSr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 13] = [
        Algorithm::RsSpsaG,
        Algorithm::RsSfG,
        Algorithm::RsSpsaN,
        Algorithm::RsSfN,
        Algorithm::SpsaG,
        Algorithm::SfG,
        Algorithm::SpsaN,
        Algorithm::SfN,
        Algorithm::RsAc,
        Algorithm::Ac,
        Algorithm::RsSpsaGSr,
        Algorithm::RsSfGSr,
        Algorithm::RsAcSr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::RsSpsaG => "rs-spsa-g",
            Algorithm::RsSfG => "rs-sf-g",
            Algorithm::RsSpsaN => "rs-spsa-n",
            Algorithm::RsSfN => "rs-sf-n",
            Algorithm::SpsaG => "spsa-g",
            Algorithm::SfG => "sf-g",
            Algorithm::SpsaN => "spsa-n",
            Algorithm::SfN => "sf-n",
            Algorithm::RsAc => "rs-ac",
            Algorithm::Ac => "ac",
            Algorithm::RsSpsaGSr => "rs-spsa-g-sr",
            Algorithm::RsSfGSr => "rs-sf-g-sr",
            Algorithm::RsAcSr => "rs-ac-sr",
        }
    }

    pub fn parse(name: &str) -> Result<Algorithm> {
        Algorithm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == name)
            .ok_or_else(|| {
                Error::Config(alloc::format!("unknown algorithm '{name}'"))
            })
    }

    /// Online single-stream variant (otherwise two-trajectory discounted).
    pub fn is_average(&self) -> bool {
        matches!(self, Algorithm::RsAc | Algorithm::Ac | Algorithm::RsAcSr)
    }

    pub fn is_newton(&self) -> bool {
        matches!(
            self,
            Algorithm::RsSpsaN | Algorithm::RsSfN | Algorithm::SpsaN | Algorithm::SfN
        )
    }

    /// Carries the variance constraint and the λ recursion.
    pub fn is_risk_sensitive(&self) -> bool {
        matches!(
            self,
            Algorithm::RsSpsaG
                | Algorithm::RsSfG
                | Algorithm::RsSpsaN
                | Algorithm::RsSfN
                | Algorithm::RsAc
        )
    }

    pub fn is_sharpe(&self) -> bool {
        matches!(
            self,
            Algorithm::RsSpsaGSr | Algorithm::RsSfGSr | Algorithm::RsAcSr
        )
    }

    /// Perturbation law for the discounted variants.
    pub fn perturb_kind(&self) -> PerturbKind {
        match self {
            Algorithm::RsSpsaG
            | Algorithm::RsSpsaN
            | Algorithm::SpsaG
            | Algorithm::SpsaN
            | Algorithm::RsSpsaGSr => PerturbKind::Rademacher,
            _ => PerturbKind::Gaussian,
        }
    }
}

/// Inner trajectory length rule for the discounted algorithms.
#[derive(Clone, Copy, Debug)]
pub enum InnerLength {
    /// m_n = ⌈C/(1−γ)⌉ for all n.
    Constant(f64),
    /// m_n = ⌈scale·n^exponent⌉.
    Power { scale: f64, exponent: f64 },
}

impl InnerLength {
    pub fn at(&self, n: usize, gamma: f64) -> usize {
        let raw = match self {
            InnerLength::Constant(c) => c / (1.0 - gamma),
            InnerLength::Power { scale, exponent } => scale * libm::pow(n as f64, *exponent),
        };
        (libm::ceil(raw) as usize).max(1)
    }
}

/// Everything a run needs besides the environment.
#[derive(Clone, Debug)]
pub struct RunParams {
    pub algorithm: Algorithm,
    pub schedules: StepSchedules,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub theta_box: ThetaBox,
    pub theta_init: Option<Vec<f64>>,
    pub lambda_max: f64,
    pub outer_iterations: usize,
    pub inner_length: InnerLength,
    /// Cold-start the critics at every outer iteration instead of warm
    /// starting from the previous weights.
    pub critic_reset: bool,
    /// Iterations (discounted: outer iterations, average: steps) during
    /// which only the critics update; θ, λ and the Hessian estimate stay
    /// frozen. Lets the critics leave their cold-start transient before
    /// their values start steering the actor.
    pub burn_in: usize,
    pub test_episodes: usize,
    /// Episode length in the test phase; 0 selects ⌈ln(1e-9)/ln(γ)⌉ for
    /// discounted runs and 150 for average runs.
    pub test_horizon: usize,
    pub seed: u64,
}

impl RunParams {
    pub fn validate(&self, policy_dim: usize) -> Result<()> {
        if self.theta_box.dim() != policy_dim {
            return Err(Error::Config(alloc::format!(
                "theta box has dimension {}, policy has {policy_dim}",
                self.theta_box.dim()
            )));
        }
        if let Some(t) = &self.theta_init {
            if t.len() != policy_dim {
                return Err(Error::Config(alloc::format!(
                    "theta_init has length {}, policy has {policy_dim}",
                    t.len()
                )));
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(alloc::format!("beta must be positive, got {}", self.beta)));
        }
        if !self.algorithm.is_sharpe() && !(self.alpha > 0.0) {
            return Err(Error::Config(alloc::format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !self.algorithm.is_average() && !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(alloc::format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if self.outer_iterations == 0 {
            return Err(Error::Config(String::from("outer_iterations must be at least 1")));
        }
        if self.burn_in >= self.outer_iterations {
            return Err(Error::Config(alloc::format!(
                "burn_in ({}) must be smaller than outer_iterations ({})",
                self.burn_in, self.outer_iterations
            )));
        }
        if !(self.lambda_max > 0.0) {
            return Err(Error::Config(alloc::format!(
                "lambda_max must be positive, got {}",
                self.lambda_max
            )));
        }
        Ok(())
    }

    fn effective_test_horizon(&self) -> usize {
        if self.test_horizon > 0 {
            return self.test_horizon;
        }
        if self.algorithm.is_average() {
            150
        } else {
            // γ^T < 1e-9 truncation.
            (libm::ceil(libm::log(1e-9) / libm::log(self.gamma)) as usize).max(1)
        }
    }
}

/// One outer-iteration record.
#[derive(Clone, Debug)]
pub struct IterRecord {
    pub n: usize,
    pub theta: Vec<f64>,
    pub lambda: f64,
    /// vᵀφ_v(x⁰) of the unperturbed critic.
    pub v_x0: f64,
    /// uᵀφ_u(x⁰) of the unperturbed critic.
    pub u_x0: f64,
    /// Estimated variance: u_x0 − v_x0² (discounted), η̂ − ρ̂² (average).
    pub var_hat: f64,
    /// Running average-reward estimate; 0 for discounted runs.
    pub rho_hat: f64,
    /// Seed of the perturbation stream used this iteration; 0 when the
    /// algorithm draws no perturbations.
    pub perturbation_seed: u64,
}

/// Per-test-episode summary value: discounted return, or the episode's
/// average reward for average-mode runs.
#[derive(Clone, Debug)]
pub struct TestRecord {
    pub episode: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    pub test: Vec<TestRecord>,
    pub final_theta: Vec<f64>,
    pub final_lambda: f64,
}

impl RunTrace {
    pub fn test_mean(&self) -> f64 {
        if self.test.is_empty() {
            return 0.0;
        }
        self.test.iter().map(|t| t.value).sum::<f64>() / self.test.len() as f64
    }

    /// Unbiased sample variance of the test-phase values.
    pub fn test_variance(&self) -> f64 {
        let n = self.test.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.test_mean();
        self.test.iter().map(|t| (t.value - mean) * (t.value - mean)).sum::<f64>() / (n - 1) as f64
    }
}

// RNG stream labels under the run's root seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const SUB_TRAJ_BASE: u64 = 0;
const SUB_TRAJ_PERTURBED: u64 = 1;
const SUB_PERTURB: u64 = 2;

/// Run a two-trajectory discounted algorithm and its test phase.
pub fn run_discounted<E: Env>(env: &E, params: &RunParams) -> Result<RunTrace> {
    if params.algorithm.is_average() {
        return Err(Error::Config(alloc::format!(
            "{} is an average-reward algorithm; use run_average",
            params.algorithm.name()
        )));
    }
    let k1 = env.policy_dim();
    params.validate(k1)?;
    let alg = params.algorithm;
    let gamma = params.gamma;
    let schedules = &params.schedules;

    let mut actor = ActorState::new(params.theta_box.clone(), params.lambda_max, params.alpha)?;
    if let Some(t0) = &params.theta_init {
        actor = actor.with_theta(t0.clone())?;
    }
    let mut critic = (vec![0.0; env.v_dim()], vec![0.0; env.u_dim()]);
    let mut critic_p = critic.clone();
    let mut hessian = alg.is_newton().then(|| HessianAccumulator::identity(k1));

    let x0 = env.initial_state();
    let mut phi_v_x0 = vec![0.0; env.v_dim()];
    let mut phi_u_x0 = vec![0.0; env.u_dim()];
    env.v_features(&x0, &mut phi_v_x0);
    env.u_features(&x0, &mut phi_u_x0);

    let root = SplitRng::new(params.seed);
    let train_root = root.split(STREAM_TRAIN);
    let mut scratch = PolicyScratch::new(env);
    let mut theta_perturbed = vec![0.0; k1];
    let mut records = Vec::with_capacity(params.outer_iterations);

    // Reused per-step feature buffers.
    let mut fv_x = vec![0.0; env.v_dim()];
    let mut fv_n = vec![0.0; env.v_dim()];
    let mut fu_x = vec![0.0; env.u_dim()];
    let mut fu_n = vec![0.0; env.u_dim()];

    for n in 1..=params.outer_iterations {
        let iter_rng = train_root.split(n as u64);
        let mut pert_rng = iter_rng.split(SUB_PERTURB);
        let perturbation_seed = pert_rng.seed_value();
        let draw = draw_perturbation(
            alg.perturb_kind(),
            k1,
            matches!(alg, Algorithm::RsSpsaN | Algorithm::SpsaN),
            params.beta,
            &mut pert_rng,
        );
        let offset = draw.offset();
        for ((tp, t), p) in theta_perturbed.iter_mut().zip(&actor.theta).zip(&offset) {
            *tp = t + p;
        }

        if params.critic_reset {
            critic.0.fill(0.0);
            critic.1.fill(0.0);
            critic_p.0.fill(0.0);
            critic_p.1.fill(0.0);
        }

        let m_n = params.inner_length.at(n, gamma);
        for (theta, weights, sub) in [
            (&actor.theta, &mut critic, SUB_TRAJ_BASE),
            (&theta_perturbed, &mut critic_p, SUB_TRAJ_PERTURBED),
        ] {
            let mut traj_rng = iter_rng.split(sub);
            let mut s = x0.clone();
            env.v_features(&s, &mut fv_x);
            env.u_features(&s, &mut fu_x);
            for m in 1..=m_n {
                scratch.compute_probs(env, theta, &s);
                let a = scratch.sample_action(&mut traj_rng);
                let (reward, next) = env.step(&s, a, &mut traj_rng);
                env.v_features(&next, &mut fv_n);
                env.u_features(&next, &mut fu_n);
                td_update_discounted(
                    &mut weights.0,
                    &mut weights.1,
                    &fv_x,
                    &fv_n,
                    &fu_x,
                    &fu_n,
                    reward,
                    gamma,
                    schedules.zeta3(m),
                );
                s = next;
                core::mem::swap(&mut fv_x, &mut fv_n);
                core::mem::swap(&mut fu_x, &mut fu_n);
            }
        }

        let v_x0 = linalg::dot(&critic.0, &phi_v_x0);
        let u_x0 = linalg::dot(&critic.1, &phi_u_x0);
        let v_x0_p = linalg::dot(&critic_p.0, &phi_v_x0);
        let u_x0_p = linalg::dot(&critic_p.1, &phi_u_x0);
        let dv = v_x0_p - v_x0;
        let du = u_x0_p - u_x0;
        let lambda_eff = if alg.is_risk_sensitive() { actor.lambda } else { 0.0 };
        let var_hat = u_x0 - v_x0 * v_x0;

        if n > params.burn_in {
            if let Some(acc) = hessian.as_mut() {
                // Sampled second-difference bracket of the Lagrangian.
                let dl = (1.0 + lambda_eff * (v_x0 + v_x0_p)) * (v_x0 - v_x0_p) + lambda_eff * du;
                let z2p = schedules.zeta2p(n);
                match alg.perturb_kind() {
                    PerturbKind::Rademacher => spsa_hessian_step(acc, dl, &draw, z2p),
                    PerturbKind::Gaussian => sf_hessian_step(acc, dl, &draw, z2p),
                }
            }

            let direction = if alg.is_sharpe() {
                match sharpe_direction_discounted(dv, du, v_x0, u_x0, &draw) {
                    Ok(d) => d,
                    // Degenerate early variance: no reliable signal, skip the
                    // actor move this iteration.
                    Err(Error::DegenerateVariance(_)) => vec![0.0; k1],
                    Err(e) => return Err(e),
                }
            } else {
                match alg.perturb_kind() {
                    PerturbKind::Rademacher => spsa_gradient(dv, du, v_x0, lambda_eff, &draw),
                    PerturbKind::Gaussian => sf_gradient(dv, du, v_x0, lambda_eff, &draw),
                }
            };

            let z2 = schedules.zeta2(n);
            if let Some(acc) = hessian.as_ref() {
                let (_, m_inv) = spd_project(&acc.matrix())?;
                newton_step(&mut actor, &m_inv, &direction, z2)?;
            } else {
                first_order_step(&mut actor, &direction, z2);
            }

            if alg.is_risk_sensitive() {
                lambda_step(&mut actor, var_hat, schedules.zeta1(n));
            }
        }

        records.push(IterRecord {
            n,
            theta: actor.theta.clone(),
            lambda: actor.lambda,
            v_x0,
            u_x0,
            var_hat,
            rho_hat: 0.0,
            perturbation_seed,
        });
    }

    let test = policy_test(env, &actor.theta, params, &root);
    Ok(RunTrace {
        records,
        test,
        final_theta: actor.theta.clone(),
        final_lambda: actor.lambda,
    })
}

/// Run an online average-reward algorithm and its test phase.
pub fn run_average<E: Env>(env: &E, params: &RunParams) -> Result<RunTrace> {
    if !params.algorithm.is_average() {
        return Err(Error::Config(alloc::format!(
            "{} is a discounted algorithm; use run_discounted",
            params.algorithm.name()
        )));
    }
    let k1 = env.policy_dim();
    params.validate(k1)?;
    let alg = params.algorithm;
    let schedules = &params.schedules;

    let mut actor = ActorState::new(params.theta_box.clone(), params.lambda_max, params.alpha)?;
    if let Some(t0) = &params.theta_init {
        actor = actor.with_theta(t0.clone())?;
    }
    let mut critic = AverageCriticState {
        v: vec![0.0; env.v_dim()],
        u: vec![0.0; env.u_dim()],
        rho_hat: 0.0,
        eta_hat: 0.0,
        step: 0,
    };

    let x0 = env.initial_state();
    let mut phi_v_x0 = vec![0.0; env.v_dim()];
    let mut phi_u_x0 = vec![0.0; env.u_dim()];
    env.v_features(&x0, &mut phi_v_x0);
    env.u_features(&x0, &mut phi_u_x0);

    let root = SplitRng::new(params.seed);
    let mut env_rng = root.split(STREAM_TRAIN);
    let mut scratch = PolicyScratch::new(env);
    let mut psi = vec![0.0; k1];
    let mut records = Vec::with_capacity(params.outer_iterations);

    let mut fv_x = vec![0.0; env.v_dim()];
    let mut fv_n = vec![0.0; env.v_dim()];
    let mut fu_x = vec![0.0; env.u_dim()];
    let mut fu_n = vec![0.0; env.u_dim()];

    let mut s = x0.clone();
    env.v_features(&s, &mut fv_x);
    env.u_features(&s, &mut fu_x);

    for n in 1..=params.outer_iterations {
        scratch.compute_probs(env, &actor.theta, &s);
        let a = scratch.sample_action(&mut env_rng);
        let (reward, next) = env.step(&s, a, &mut env_rng);
        env.v_features(&next, &mut fv_n);
        env.u_features(&next, &mut fu_n);

        let (delta, eps) = td_update_average(
            &mut critic,
            &fv_x,
            &fv_n,
            &fu_x,
            &fu_n,
            reward,
            schedules.zeta3(n),
            schedules.zeta4(n),
        );

        let var_hat = critic.variance_hat();
        if n > params.burn_in {
            scratch.score_function(env, &s, a, &mut psi);
            let direction = match alg {
                Algorithm::Ac => average_actor_direction(delta, eps, &psi, critic.rho_hat, 0.0),
                Algorithm::RsAc => {
                    average_actor_direction(delta, eps, &psi, critic.rho_hat, actor.lambda)
                }
                Algorithm::RsAcSr => {
                    match sharpe_direction_average(delta, eps, &psi, critic.rho_hat, critic.eta_hat)
                    {
                        Ok(d) => d,
                        // No variance signal yet (e.g. the very first step):
                        // hold θ this step.
                        Err(Error::DegenerateVariance(_)) => vec![0.0; k1],
                        Err(e) => return Err(e),
                    }
                }
                _ => unreachable!(),
            };
            first_order_step(&mut actor, &direction, schedules.zeta2(n));

            if alg.is_risk_sensitive() {
                lambda_step(&mut actor, var_hat, schedules.zeta1(n));
            }
        }

        records.push(IterRecord {
            n,
            theta: actor.theta.clone(),
            lambda: actor.lambda,
            v_x0: linalg::dot(&critic.v, &phi_v_x0),
            u_x0: linalg::dot(&critic.u, &phi_u_x0),
            var_hat,
            rho_hat: critic.rho_hat,
            perturbation_seed: 0,
        });

        s = next;
        core::mem::swap(&mut fv_x, &mut fv_n);
        core::mem::swap(&mut fu_x, &mut fu_n);
    }

    let test = policy_test(env, &actor.theta, params, &root);
    Ok(RunTrace {
        records,
        test,
        final_theta: actor.theta.clone(),
        final_lambda: actor.lambda,
    })
}

/// Freeze θ and run independent episodes; each yields one summary value:
/// the discounted return from x⁰, or the episode-average reward in average
/// mode.
fn policy_test<E: Env>(env: &E, theta: &[f64], params: &RunParams, root: &SplitRng) -> Vec<TestRecord> {
    let horizon = params.effective_test_horizon();
    let average = params.algorithm.is_average();
    let test_root = root.split(STREAM_TEST);
    let mut scratch = PolicyScratch::new(env);
    let mut out = Vec::with_capacity(params.test_episodes);
    for episode in 0..params.test_episodes {
        let mut rng = test_root.split(episode as u64);
        let mut s = env.initial_state();
        let mut value = 0.0;
        let mut discount = 1.0;
        for _ in 0..horizon {
            scratch.compute_probs(env, theta, &s);
            let a = scratch.sample_action(&mut rng);
            let (reward, next) = env.step(&s, a, &mut rng);
            if average {
                value += reward;
            } else {
                value += discount * reward;
                discount *= params.gamma;
            }
            s = next;
        }
        if average {
            value /= horizon as f64;
        }
        out.push(TestRecord { episode, value });
    }
    out
}

/// Convenience dispatch on the algorithm family.
pub fn run<E: Env>(env: &E, params: &RunParams) -> Result<RunTrace> {
    if params.algorithm.is_average() {
        run_average(env, params)
    } else {
        run_discounted(env, params)
    }
}
