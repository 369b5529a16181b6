//! JSON experiment configuration and its bridge onto the library types.
//!
//! A config file carries the environment (a tabular model or the traffic
//! network), the algorithm name, and every run parameter. All numeric
//! fields have the documented defaults, so minimal configs stay short.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use risk_ac_core::actor::{PowerRule, StepSchedules, ThetaBox};
use risk_ac_core::critic::CriticFeatures;
use risk_ac_core::driver::{Algorithm, Env, InnerLength, RunParams, TabularEnv, TrafficEnv};
use risk_ac_core::error::{Error, Result};
use risk_ac_core::mdp::{BoltzmannPolicy, RewardNoise, TabularMdp};
use risk_ac_core::traffic::{default_2x2, ForwardRule, TrafficSpec};

/// One step-size rule: scale * n^(-exponent).
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub scale: f64,
    pub exponent: f64,
}

impl ScheduleConfig {
    fn build(&self, name: &str) -> Result<PowerRule> {
        PowerRule::new(self.scale, self.exponent)
            .map_err(|e| Error::Config(format!("{name}: {e}")))
    }
}

/// The four step-size rules plus the second-critic multiplier. Defaults are
/// the standard exponent ladder (1, 0.75, 0.7, 0.66) with unit scales.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulesConfig {
    pub zeta1: ScheduleConfig,
    pub zeta2: ScheduleConfig,
    pub zeta2_prime: ScheduleConfig,
    pub zeta3: ScheduleConfig,
    pub k: f64,
}

impl Default for SchedulesConfig {
    fn default() -> Self {
        SchedulesConfig {
            zeta1: ScheduleConfig { scale: 1.0, exponent: 1.0 },
            zeta2: ScheduleConfig { scale: 1.0, exponent: 0.75 },
            zeta2_prime: ScheduleConfig { scale: 1.0, exponent: 0.7 },
            zeta3: ScheduleConfig { scale: 1.0, exponent: 0.66 },
            k: 1.0,
        }
    }
}

impl SchedulesConfig {
    pub fn build(&self) -> Result<StepSchedules> {
        StepSchedules::new(
            self.zeta1.build("zeta1")?,
            self.zeta2.build("zeta2")?,
            self.zeta2_prime.build("zeta2_prime")?,
            self.zeta3.build("zeta3")?,
            self.k,
        )
    }
}

/// Trajectory length per outer iteration in the discounted regime.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerLengthConfig {
    /// ceil(value / (1 - gamma)) steps, independent of the iteration index.
    Constant { value: f64 },
    /// ceil(scale * n^exponent) steps at outer iteration n.
    Power { scale: f64, exponent: f64 },
}

impl Default for InnerLengthConfig {
    fn default() -> Self {
        InnerLengthConfig::Constant { value: 5.0 }
    }
}

impl InnerLengthConfig {
    pub fn build(&self) -> InnerLength {
        match *self {
            InnerLengthConfig::Constant { value } => InnerLength::Constant(value),
            InnerLengthConfig::Power { scale, exponent } => {
                InnerLength::Power { scale, exponent }
            }
        }
    }
}

/// Scalar bounds broadcast over every coordinate, or one bound per
/// coordinate.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

impl Bound {
    fn expand(&self, dim: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            Bound::Scalar(b) => Ok(vec![*b; dim]),
            Bound::PerCoordinate(v) => {
                if v.len() != dim {
                    return Err(Error::Config(format!(
                        "theta_box.{name} has {} entries, policy dimension is {dim}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Projection box for the policy parameters. Default [-10, 10] per
/// coordinate.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBoxConfig {
    pub lo: Bound,
    pub hi: Bound,
}

impl Default for ThetaBoxConfig {
    fn default() -> Self {
        ThetaBoxConfig { lo: Bound::Scalar(-10.0), hi: Bound::Scalar(10.0) }
    }
}

impl ThetaBoxConfig {
    pub fn build(&self, dim: usize) -> Result<ThetaBox> {
        ThetaBox::new(self.lo.expand(dim, "lo")?, self.hi.expand(dim, "hi")?)
    }
}

/// A scalar magnitude broadcast over every (state, action) pair, or one
/// magnitude per pair in row-major (state, action) order.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Magnitude {
    Scalar(f64),
    PerPair(Vec<f64>),
}

impl Magnitude {
    fn expand(&self, pairs: usize) -> Result<Vec<f64>> {
        match self {
            Magnitude::Scalar(m) => Ok(vec![*m; pairs]),
            Magnitude::PerPair(v) => {
                if v.len() != pairs {
                    return Err(Error::Config(format!(
                        "reward noise table has {} entries, expected {pairs}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Additive reward noise per (state, action) pair.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardNoiseConfig {
    None,
    /// Uniform on [-half_width, half_width].
    Uniform { half_width: Magnitude },
    /// Zero-mean normal with the given standard deviation.
    Normal { std_dev: Magnitude },
}

impl Default for RewardNoiseConfig {
    fn default() -> Self {
        RewardNoiseConfig::None
    }
}

impl RewardNoiseConfig {
    fn build(&self, pairs: usize) -> Result<RewardNoise> {
        Ok(match self {
            RewardNoiseConfig::None => RewardNoise::None,
            RewardNoiseConfig::Uniform { half_width } => {
                RewardNoise::Uniform(half_width.expand(pairs)?)
            }
            RewardNoiseConfig::Normal { std_dev } => {
                RewardNoise::Normal(std_dev.expand(pairs)?)
            }
        })
    }
}

/// Policy feature table: one indicator per (state, action) pair, or an
/// explicit table with one row per pair in row-major (state, action) order.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyFeaturesConfig {
    Tabular,
    Table { dim: usize, rows: Vec<Vec<f64>> },
}

impl Default for PolicyFeaturesConfig {
    fn default() -> Self {
        PolicyFeaturesConfig::Tabular
    }
}

impl PolicyFeaturesConfig {
    fn build(&self, num_states: usize, num_actions: usize) -> Result<BoltzmannPolicy> {
        match self {
            PolicyFeaturesConfig::Tabular => {
                Ok(BoltzmannPolicy::tabular(num_states, num_actions))
            }
            PolicyFeaturesConfig::Table { dim, rows } => {
                let flat = flatten_rows(rows, num_states * num_actions, *dim, "policy_features")?;
                BoltzmannPolicy::new(num_states, num_actions, *dim, flat)
            }
        }
    }
}

/// Critic feature tables: identity per state, or explicit tables with one
/// row per state for each critic.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticFeaturesConfig {
    Tabular,
    Table {
        dim_v: usize,
        phi_v: Vec<Vec<f64>>,
        dim_u: usize,
        phi_u: Vec<Vec<f64>>,
        #[serde(default)]
        ones_exempt: bool,
    },
}

impl Default for CriticFeaturesConfig {
    fn default() -> Self {
        CriticFeaturesConfig::Tabular
    }
}

impl CriticFeaturesConfig {
    fn build(&self, num_states: usize) -> Result<CriticFeatures> {
        match self {
            CriticFeaturesConfig::Tabular => Ok(CriticFeatures::tabular(num_states)),
            CriticFeaturesConfig::Table { dim_v, phi_v, dim_u, phi_u, ones_exempt } => {
                let fv = flatten_rows(phi_v, num_states, *dim_v, "critic_features.phi_v")?;
                let fu = flatten_rows(phi_u, num_states, *dim_u, "critic_features.phi_u")?;
                CriticFeatures::new(num_states, *dim_v, fv, *dim_u, fu, *ones_exempt)
            }
        }
    }
}

fn flatten_rows(rows: &[Vec<f64>], count: usize, width: usize, name: &str) -> Result<Vec<f64>> {
    if rows.len() != count {
        return Err(Error::Config(format!(
            "{name} has {} rows, expected {count}",
            rows.len()
        )));
    }
    let mut flat = Vec::with_capacity(count * width);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Config(format!(
                "{name} row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    Ok(flat)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardRuleConfig {
    pub from: usize,
    pub to: usize,
    pub fraction: f64,
}

/// Full traffic network description, mirroring the library spec field by
/// field.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpecInline {
    pub num_lanes: usize,
    pub priority_lanes: Vec<bool>,
    pub feasible_configs: Vec<Vec<bool>>,
    pub spawn_rates: Vec<f64>,
    #[serde(default)]
    pub forward: Vec<ForwardRuleConfig>,
    pub service_rate: u32,
    pub max_queue: u32,
    pub max_elapsed: u32,
    pub r1: f64,
    pub s1: f64,
    pub r2: f64,
    pub s2: f64,
    pub queue_thresholds: [u32; 2],
    pub elapsed_thresholds: [u32; 2],
}

/// Either the name of a bundled network ("default-2x2") or an inline spec.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TrafficSpecConfig {
    Named(String),
    Inline(TrafficSpecInline),
}

impl Default for TrafficSpecConfig {
    fn default() -> Self {
        TrafficSpecConfig::Named(String::from("default-2x2"))
    }
}

impl TrafficSpecConfig {
    pub fn build(&self) -> Result<TrafficSpec> {
        match self {
            TrafficSpecConfig::Named(name) => match name.as_str() {
                "default-2x2" => Ok(default_2x2()),
                other => Err(Error::Config(format!("unknown traffic network '{other}'"))),
            },
            TrafficSpecConfig::Inline(s) => Ok(TrafficSpec {
                num_lanes: s.num_lanes,
                priority_lanes: s.priority_lanes.clone(),
                feasible_configs: s.feasible_configs.clone(),
                spawn_rates: s.spawn_rates.clone(),
                forward: s
                    .forward
                    .iter()
                    .map(|r| ForwardRule { from: r.from, to: r.to, fraction: r.fraction })
                    .collect(),
                service_rate: s.service_rate,
                max_queue: s.max_queue,
                max_elapsed: s.max_elapsed,
                r1: s.r1,
                s1: s.s1,
                r2: s.r2,
                s2: s.s2,
                queue_thresholds: s.queue_thresholds,
                elapsed_thresholds: s.elapsed_thresholds,
            }),
        }
    }
}

/// The environment a run executes in.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// Finite model given by explicit tables. `transitions` holds one row
    /// per (state, action) pair in row-major order; each row is a
    /// distribution over next states. `rewards` is the mean reward per
    /// pair in the same order.
    Tabular {
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        #[serde(default)]
        reward_noise: RewardNoiseConfig,
        #[serde(default)]
        initial_state: usize,
        #[serde(default)]
        policy_features: PolicyFeaturesConfig,
        #[serde(default)]
        critic_features: CriticFeaturesConfig,
    },
    /// The traffic-signal network (average-reward algorithms only).
    Traffic {
        #[serde(default)]
        spec: TrafficSpecConfig,
    },
}

/// A constructed environment, either kind.
pub enum BuiltEnv {
    Tabular(TabularEnv),
    Traffic(TrafficEnv),
}

impl BuiltEnv {
    pub fn policy_dim(&self) -> usize {
        match self {
            BuiltEnv::Tabular(e) => e.policy_dim(),
            BuiltEnv::Traffic(e) => e.policy_dim(),
        }
    }

    pub fn tabular(&self) -> Option<&TabularEnv> {
        match self {
            BuiltEnv::Tabular(e) => Some(e),
            BuiltEnv::Traffic(_) => None,
        }
    }
}

/// One experiment: an environment, an algorithm, and every run parameter.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Kebab-case algorithm name (e.g. "rs-spsa-g", "rs-ac"). May be left
    /// empty in a sweep base config, where the sweep supplies it.
    #[serde(default)]
    pub algorithm: String,
    pub environment: EnvConfig,
    #[serde(default)]
    pub schedules: SchedulesConfig,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub theta_box: ThetaBoxConfig,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_outer")]
    pub outer_iterations: usize,
    #[serde(default)]
    pub inner_length: InnerLengthConfig,
    #[serde(default)]
    pub critic_reset: bool,
    /// Iterations during which critics learn but the actor and multiplier
    /// stay frozen.
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    /// 0 selects the built-in default horizon for the regime.
    #[serde(default)]
    pub test_horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta() -> f64 {
    0.2
}
fn default_alpha() -> f64 {
    20.0
}
fn default_gamma() -> f64 {
    0.9
}
fn default_lambda_max() -> f64 {
    1000.0
}
fn default_outer() -> usize {
    500
}
fn default_test_episodes() -> usize {
    50
}

impl RunConfig {
    pub fn algorithm(&self) -> Result<Algorithm> {
        if self.algorithm.is_empty() {
            return Err(Error::Config(
                "config has no algorithm; set the \"algorithm\" field".into(),
            ));
        }
        Algorithm::parse(&self.algorithm)
    }

    pub fn build_env(&self) -> Result<BuiltEnv> {
        match &self.environment {
            EnvConfig::Tabular {
                num_states,
                num_actions,
                transitions,
                rewards,
                reward_noise,
                initial_state,
                policy_features,
                critic_features,
            } => {
                let n = *num_states;
                let na = *num_actions;
                let flat = flatten_rows(transitions, n * na, n, "transitions")?;
                if rewards.len() != n * na {
                    return Err(Error::Config(format!(
                        "rewards has {} entries, expected {}",
                        rewards.len(),
                        n * na
                    )));
                }
                let mdp = TabularMdp::new(
                    n,
                    na,
                    flat,
                    rewards.clone(),
                    reward_noise.build(n * na)?,
                    self.gamma,
                    *initial_state,
                )?;
                let policy = policy_features.build(n, na)?;
                let features = critic_features.build(n)?;
                Ok(BuiltEnv::Tabular(TabularEnv::new(mdp, policy, features)?))
            }
            EnvConfig::Traffic { spec } => {
                Ok(BuiltEnv::Traffic(TrafficEnv::new(spec.build()?)?))
            }
        }
    }

    pub fn build_params(&self, policy_dim: usize) -> Result<RunParams> {
        let params = RunParams {
            algorithm: self.algorithm()?,
            schedules: self.schedules.build()?,
            beta: self.beta,
            alpha: self.alpha,
            gamma: self.gamma,
            theta_box: self.theta_box.build(policy_dim)?,
            theta_init: self.theta_init.clone(),
            lambda_max: self.lambda_max,
            outer_iterations: self.outer_iterations,
            inner_length: self.inner_length.build(),
            critic_reset: self.critic_reset,
            burn_in: self.burn_in,
            test_episodes: self.test_episodes,
            test_horizon: self.test_horizon,
            seed: self.seed,
        };
        params.validate(policy_dim)?;
        Ok(params)
    }
}

/// A grid of runs: every algorithm crossed with every seed, sharing one
/// base config.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    /// Template run; its `algorithm` and `seed` fields are replaced per
    /// run.
    pub base: RunConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one algorithm and one seed".into()));
        }
        for name in &self.algorithms {
            Algorithm::parse(name)?;
        }
        Ok(())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    read_json(path)
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let cfg: SweepConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
