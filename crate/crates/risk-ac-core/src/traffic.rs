//! Grid traffic-signal-control environment at desk scale: per-lane queues
//! and elapsed red times as state, non-conflicting green configurations as
//! actions, Poisson arrivals on entry lanes, fixed-fraction forwarding
//! between junctions, and a priority-weighted single-stage cost.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Vehicles released from one lane partially re-enter another:
/// each released vehicle moves to `to` independently with probability
/// `fraction`, otherwise it leaves the network.
#[derive(Clone, Debug)]
pub struct ForwardRule {
    pub from: usize,
    pub to: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug)]
pub struct TrafficSpec {
    pub num_lanes: usize,
    /// priority_lanes[i]: lane i carries the high-weight road.
    pub priority_lanes: Vec<bool>,
    /// Each action is a mask of lanes that get green simultaneously.
    pub feasible_configs: Vec<Vec<bool>>,
    /// Poisson arrival rate per lane (0 for interior lanes).
    pub spawn_rates: Vec<f64>,
    pub forward: Vec<ForwardRule>,
    /// Vehicles released per green lane per step.
    pub service_rate: u32,
    /// Queue saturation cap per lane.
    pub max_queue: u32,
    /// Elapsed-time saturation cap per lane. Keeps the stage cost bounded
    /// (a starved lane otherwise accrues cost without limit, which breaks
    /// the long-run-average objective); the elapsed buckets saturate well
    /// below any sensible cap, so the policy view is unchanged.
    pub max_elapsed: u32,
    /// Cost weights: r1+s1 = 1 splits queue vs waiting terms, r2+s2 = 1
    /// with r2 > s2 splits priority vs side lanes.
    pub r1: f64,
    pub s1: f64,
    pub r2: f64,
    pub s2: f64,
    /// Queue-length bucket boundaries: bucket 0 below the first, 2 at or
    /// above the second.
    pub queue_thresholds: [u32; 2],
    pub elapsed_thresholds: [u32; 2],
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_lanes;
        if n == 0 {
            return Err(Error::Config("traffic spec needs at least one lane".into()));
        }
        if self.priority_lanes.len() != n || self.spawn_rates.len() != n {
            return Err(Error::Config(format!(
                "priority/spawn tables must have {n} entries"
            )));
        }
        if self.feasible_configs.is_empty() {
            return Err(Error::Config("at least one feasible signal configuration required".into()));
        }
        for (k, cfg) in self.feasible_configs.iter().enumerate() {
            if cfg.len() != n {
                return Err(Error::Config(format!("config {k} must mask {n} lanes")));
            }
        }
        if self.spawn_rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("spawn rates must be finite and nonnegative".into()));
        }
        for (k, rule) in self.forward.iter().enumerate() {
            if rule.from >= n || rule.to >= n || rule.from == rule.to {
                return Err(Error::Config(format!("forward rule {k} has invalid lanes")));
            }
            if !(0.0..=1.0).contains(&rule.fraction) {
                return Err(Error::Config(format!("forward rule {k} fraction outside [0,1]")));
            }
        }
        if self.service_rate == 0 || self.max_queue == 0 || self.max_elapsed == 0 {
            return Err(Error::Config(
                "service_rate, max_queue and max_elapsed must be positive".into(),
            ));
        }
        let ok_split = |a: f64, b: f64| (a + b - 1.0).abs() <= 1e-12 && a >= 0.0 && b >= 0.0;
        if !ok_split(self.r1, self.s1) {
            return Err(Error::Config(format!("r1 + s1 must equal 1, got {} + {}", self.r1, self.s1)));
        }
        if !ok_split(self.r2, self.s2) {
            return Err(Error::Config(format!("r2 + s2 must equal 1, got {} + {}", self.r2, self.s2)));
        }
        if !(self.r2 > self.s2) {
            return Err(Error::Config(format!(
                "priority weight r2 = {} must exceed side weight s2 = {}",
                self.r2, self.s2
            )));
        }
        if self.queue_thresholds[0] >= self.queue_thresholds[1]
            || self.elapsed_thresholds[0] >= self.elapsed_thresholds[1]
        {
            return Err(Error::Config("bucket thresholds must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn num_configs(&self) -> usize {
        self.feasible_configs.len()
    }

    /// Policy feature dimension: lanes × 3 queue buckets × 3 elapsed
    /// buckets × configurations.
    pub fn policy_feature_dim(&self) -> usize {
        self.num_lanes * NUM_BUCKETS * NUM_BUCKETS * self.num_configs()
    }

    /// Critic feature dimension: per lane, indicators of the extreme
    /// (low, high) queue and elapsed buckets (2 + 2 entries).
    pub fn critic_feature_dim(&self) -> usize {
        self.num_lanes * 2 * (NUM_BUCKETS - 1)
    }
}

/// Two junction rows by two columns, eight signalled lanes. Lane 2j is the
/// north-south approach of junction j, lane 2j+1 the east-west approach;
/// action bit j picks NS green (set) or EW green (clear) at junction j,
/// giving 16 global configurations. NS lanes form the priority set and the
/// two north-edge NS lanes plus two west-edge EW lanes are entries with a
/// 100:5 main-to-side arrival ratio. Released vehicles continue through
/// the grid with probability one half: 0→4, 2→6 (southbound), 1→3, 5→7
/// (eastbound). Service rate 3 keeps queues live but drainable: a lane
/// with green on half the steps clears faster than the main arrival rate
/// fills it, so congestion never becomes self-sustaining under an
/// exploring policy (at rate 2 the uniform policy sits exactly at the
/// drain threshold and a congested network can absorb it).
pub fn default_2x2() -> TrafficSpec {
    let num_lanes = 8;
    let mut feasible_configs = Vec::with_capacity(16);
    for action in 0..16u32 {
        let mut mask = vec![false; num_lanes];
        for j in 0..4 {
            let ns_green = (action >> j) & 1 == 1;
            mask[2 * j] = ns_green;
            mask[2 * j + 1] = !ns_green;
        }
        feasible_configs.push(mask);
    }
    let mut spawn_rates = vec![0.0; num_lanes];
    spawn_rates[0] = 1.0; // NS entry, junction 0
    spawn_rates[2] = 1.0; // NS entry, junction 1
    spawn_rates[1] = 0.05; // EW entry, junction 0
    spawn_rates[5] = 0.05; // EW entry, junction 2
    let forward = vec![
        ForwardRule { from: 0, to: 4, fraction: 0.5 },
        ForwardRule { from: 2, to: 6, fraction: 0.5 },
        ForwardRule { from: 1, to: 3, fraction: 0.5 },
        ForwardRule { from: 5, to: 7, fraction: 0.5 },
    ];
    TrafficSpec {
        num_lanes,
        priority_lanes: (0..num_lanes).map(|i| i % 2 == 0).collect(),
        feasible_configs,
        spawn_rates,
        forward,
        service_rate: 3,
        max_queue: 20,
        max_elapsed: 20,
        r1: 0.5,
        s1: 0.5,
        r2: 0.6,
        s2: 0.4,
        queue_thresholds: [3, 8],
        elapsed_thresholds: [3, 8],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrafficState {
    /// Queue length per lane.
    pub q: Vec<u32>,
    /// Steps since each lane last had green, capped at `max_elapsed`.
    pub t: Vec<u32>,
}

impl TrafficState {
    pub fn empty(spec: &TrafficSpec) -> Self {
        TrafficState { q: vec![0; spec.num_lanes], t: vec![0; spec.num_lanes] }
    }

    pub fn total_queued(&self) -> u32 {
        self.q.iter().sum()
    }
}

/// Weighted single-stage cost
///   r1·[Σ_{i∈I_p} r2·q_i + Σ_{i∉I_p} s2·q_i]
/// + s1·[Σ_{i∈I_p} r2·t_i + Σ_{i∉I_p} s2·t_i].
pub fn stage_cost(q: &[u32], t: &[u32], spec: &TrafficSpec) -> f64 {
    let mut q_term = 0.0;
    let mut t_term = 0.0;
    for i in 0..spec.num_lanes {
        let w = if spec.priority_lanes[i] { spec.r2 } else { spec.s2 };
        q_term += w * q[i] as f64;
        t_term += w * t[i] as f64;
    }
    spec.r1 * q_term + spec.s1 * t_term
}

/// One signal period: green lanes release up to `service_rate` vehicles
/// and reset their clocks, red lanes age; the cost is charged on the
/// post-service pre-arrival state; then forwarded vehicles and fresh
/// Poisson arrivals join, clamped at `max_queue`.
pub fn traffic_step(
    state: &TrafficState,
    action: usize,
    spec: &TrafficSpec,
    rng: &mut SplitRng,
) -> (TrafficState, f64) {
    let green = &spec.feasible_configs[action];
    let mut next = state.clone();
    let mut released = vec![0u32; spec.num_lanes];
    for i in 0..spec.num_lanes {
        if green[i] {
            released[i] = next.q[i].min(spec.service_rate);
            next.q[i] -= released[i];
            next.t[i] = 0;
        } else {
            next.t[i] = (next.t[i] + 1).min(spec.max_elapsed);
        }
    }
    let cost = stage_cost(&next.q, &next.t, spec);
    for rule in &spec.forward {
        let mut moved = 0u32;
        for _ in 0..released[rule.from] {
            if rng.next_f64() < rule.fraction {
                moved += 1;
            }
        }
        next.q[rule.to] = (next.q[rule.to] + moved).min(spec.max_queue);
    }
    for i in 0..spec.num_lanes {
        if spec.spawn_rates[i] > 0.0 {
            let arrivals = rng.poisson(spec.spawn_rates[i]) as u32;
            next.q[i] = next.q[i].saturating_add(arrivals).min(spec.max_queue);
        }
    }
    (next, cost)
}

pub const NUM_BUCKETS: usize = 3;

#[inline]
fn bucket(value: u32, thresholds: &[u32; 2]) -> usize {
    if value < thresholds[0] {
        0
    } else if value < thresholds[1] {
        1
    } else {
        2
    }
}

/// Policy features for (state, action): per lane, an indicator at the
/// (queue bucket, elapsed bucket, action) cell. Exactly `num_lanes` ones.
pub fn policy_features(state: &TrafficState, action: usize, spec: &TrafficSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.policy_feature_dim());
    out.fill(0.0);
    let nc = spec.num_configs();
    for i in 0..spec.num_lanes {
        let qb = bucket(state.q[i], &spec.queue_thresholds);
        let tb = bucket(state.t[i], &spec.elapsed_thresholds);
        let idx = ((i * NUM_BUCKETS + qb) * NUM_BUCKETS + tb) * nc + action;
        out[idx] = 1.0;
    }
}

/// Critic features for a state: per lane, indicators of the low and high
/// queue buckets and of the low and high elapsed buckets. The medium
/// bucket is the dropped reference level, which keeps the all-ones vector
/// out of the feature span while both the empty and the congested regimes
/// remain visible to the critic (a saturated network must not be a
/// zero-feature blind spot, or no value gradient can point out of it).
pub fn critic_features(state: &TrafficState, spec: &TrafficSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.critic_feature_dim());
    out.fill(0.0);
    let per_lane = 2 * (NUM_BUCKETS - 1);
    for i in 0..spec.num_lanes {
        let qb = bucket(state.q[i], &spec.queue_thresholds);
        let tb = bucket(state.t[i], &spec.elapsed_thresholds);
        if qb != 1 {
            out[i * per_lane + if qb == 0 { 0 } else { 1 }] = 1.0;
        }
        if tb != 1 {
            out[i * per_lane + 2 + if tb == 0 { 0 } else { 1 }] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lane_spec() -> TrafficSpec {
        TrafficSpec {
            num_lanes: 2,
            priority_lanes: vec![true, false],
            feasible_configs: vec![vec![true, false], vec![false, true]],
            spawn_rates: vec![0.0, 0.0],
            forward: vec![],
            service_rate: 2,
            max_queue: 20,
            max_elapsed: 20,
            r1: 0.5,
            s1: 0.5,
            r2: 0.6,
            s2: 0.4,
            queue_thresholds: [3, 8],
            elapsed_thresholds: [3, 8],
        }
    }

    #[test]
    fn default_spec_validates() {
        let spec = default_2x2();
        spec.validate().unwrap();
        assert_eq!(spec.num_configs(), 16);
        assert_eq!(spec.policy_feature_dim(), 8 * 3 * 3 * 16);
        assert_eq!(spec.critic_feature_dim(), 32);
        // Every config gives exactly one green lane per junction.
        for cfg in &spec.feasible_configs {
            for j in 0..4 {
                assert!(cfg[2 * j] ^ cfg[2 * j + 1]);
            }
        }
    }

    #[test]
    fn weight_constraints_enforced() {
        let mut s = two_lane_spec();
        s.r1 = 0.7;
        assert!(s.validate().is_err());
        let mut s = two_lane_spec();
        s.r2 = 0.4;
        s.s2 = 0.6;
        assert!(s.validate().is_err());
        let mut s = two_lane_spec();
        s.r2 = 0.5;
        s.s2 = 0.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn cost_hand_example() {
        // q=(2,0), t=(0,3), priority {0}: 0.5·(0.6·2) + 0.5·(0.4·3) = 1.2.
        let spec = two_lane_spec();
        let cost = stage_cost(&[2, 0], &[0, 3], &spec);
        assert!((cost - 1.2).abs() < 1e-12);
    }

    #[test]
    fn empty_network_stays_empty_with_zero_spawn() {
        // All-green single config: clocks stay 0, cost stays 0.
        let mut spec = two_lane_spec();
        spec.feasible_configs = vec![vec![true, true]];
        let mut rng = SplitRng::new(5);
        let mut s = TrafficState::empty(&spec);
        for _ in 0..10 {
            let (next, cost) = traffic_step(&s, 0, &spec, &mut rng);
            assert_eq!(cost, 0.0);
            assert_eq!(next.q, vec![0, 0]);
            assert_eq!(next.t, vec![0, 0]);
            s = next;
        }
    }

    #[test]
    fn red_lane_ages_before_cost_is_charged() {
        let spec = two_lane_spec();
        let mut rng = SplitRng::new(5);
        let s0 = TrafficState::empty(&spec);
        // Action 0 leaves lane 1 red: its clock reaches 1 and is charged
        // s1·s2·1 = 0.2 this step.
        let (s1, cost) = traffic_step(&s0, 0, &spec, &mut rng);
        assert!((cost - 0.2).abs() < 1e-12);
        assert_eq!(s1.t, vec![0, 1]);
    }

    #[test]
    fn elapsed_time_saturates_at_cap() {
        let mut spec = two_lane_spec();
        spec.max_elapsed = 5;
        let mut rng = SplitRng::new(7);
        let mut s = TrafficState::empty(&spec);
        // Action 0 keeps lane 1 red forever; its clock must stop at the cap.
        for _ in 0..12 {
            let (next, _) = traffic_step(&s, 0, &spec, &mut rng);
            s = next;
        }
        assert_eq!(s.t[1], 5);
    }

    #[test]
    fn cost_monotone_in_queue_and_wait() {
        let spec = default_2x2();
        let base_q = [2u32, 5, 0, 9, 3, 1, 7, 4];
        let base_t = [1u32, 0, 4, 2, 6, 3, 0, 5];
        let base = stage_cost(&base_q, &base_t, &spec);
        for i in 0..8 {
            let mut q = base_q;
            q[i] += 1;
            assert!(stage_cost(&q, &base_t, &spec) > base);
            let mut t = base_t;
            t[i] += 1;
            assert!(stage_cost(&base_q, &t, &spec) > base);
        }
    }

    #[test]
    fn vehicles_conserved_without_spawn_or_forwarding() {
        let mut spec = default_2x2();
        spec.spawn_rates = vec![0.0; 8];
        spec.forward.clear();
        let mut rng = SplitRng::new(9);
        let mut s = TrafficState { q: vec![5, 3, 0, 7, 2, 1, 4, 6], t: vec![0; 8] };
        for action in [0usize, 5, 15, 3, 8] {
            let total = s.total_queued();
            let green = &spec.feasible_configs[action];
            let expected_release: u32 = (0..8)
                .map(|i| if green[i] { s.q[i].min(spec.service_rate) } else { 0 })
                .sum();
            let (next, _) = traffic_step(&s, action, &spec, &mut rng);
            assert_eq!(next.total_queued(), total - expected_release);
            s = next;
        }
    }

    #[test]
    fn random_policy_drains_network() {
        let mut spec = default_2x2();
        spec.spawn_rates = vec![0.0; 8];
        let mut rng = SplitRng::new(21);
        let mut s = TrafficState { q: vec![20; 8], t: vec![0; 8] };
        let mut drained = false;
        for _ in 0..2000 {
            let action = (rng.next_u64() % 16) as usize;
            let (next, _) = traffic_step(&s, action, &spec, &mut rng);
            s = next;
            if s.total_queued() == 0 {
                drained = true;
                break;
            }
        }
        assert!(drained, "queues remaining: {:?}", s.q);
    }

    #[test]
    fn arrival_rate_matches_poisson_mean() {
        // Lone always-green lane with ample service: the post-arrival queue
        // each step is exactly that step's arrival count.
        let spec = TrafficSpec {
            num_lanes: 2,
            priority_lanes: vec![true, false],
            feasible_configs: vec![vec![true, true]],
            spawn_rates: vec![0.3, 0.0],
            forward: vec![],
            service_rate: 30,
            max_queue: 1000,
            max_elapsed: 1000,
            r1: 0.5,
            s1: 0.5,
            r2: 0.6,
            s2: 0.4,
            queue_thresholds: [3, 8],
            elapsed_thresholds: [3, 8],
        };
        spec.validate().unwrap();
        let mut rng = SplitRng::new(33);
        let mut s = TrafficState::empty(&spec);
        let n = 100_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let (next, _) = traffic_step(&s, 0, &spec, &mut rng);
            sum += next.q[0] as u64;
            s = next;
        }
        let mean = sum as f64 / n as f64;
        let tol = 3.0 * libm::sqrt(0.3 / n as f64);
        assert!((mean - 0.3).abs() < tol, "mean {mean}");
    }

    #[test]
    fn empty_state_features_all_low() {
        let spec = default_2x2();
        let s = TrafficState::empty(&spec);
        let mut phi = vec![0.0; spec.policy_feature_dim()];
        policy_features(&s, 7, &spec, &mut phi);
        assert_eq!(phi.iter().filter(|x| **x == 1.0).count(), 8);
        let nc = 16;
        for i in 0..8 {
            // Bucket (0,0), action 7.
            assert_eq!(phi[((i * 3) * 3) * nc + 7], 1.0);
        }
        let mut cf = vec![0.0; spec.critic_feature_dim()];
        critic_features(&s, &spec, &mut cf);
        for i in 0..8 {
            assert_eq!(&cf[i * 4..(i + 1) * 4], &[1.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn threshold_crossing_moves_one_block() {
        let spec = default_2x2();
        let mut a = TrafficState::empty(&spec);
        a.q[3] = 2;
        let mut b = a.clone();
        b.q[3] = 3; // crosses the low/medium boundary on lane 3 only
        let dim = spec.policy_feature_dim();
        let (mut fa, mut fb) = (vec![0.0; dim], vec![0.0; dim]);
        policy_features(&a, 4, &spec, &mut fa);
        policy_features(&b, 4, &spec, &mut fb);
        let lane_block = 3 * 3 * 16;
        for k in 0..dim {
            if k / lane_block == 3 {
                continue;
            }
            assert_eq!(fa[k], fb[k], "unexpected change at {k}");
        }
        assert_ne!(fa[3 * lane_block..4 * lane_block], fb[3 * lane_block..4 * lane_block]);
    }

    #[test]
    fn mid_bucket_state_has_zero_critic_features() {
        // Medium is the dropped reference bucket.
        let spec = default_2x2();
        let s = TrafficState { q: vec![5; 8], t: vec![4; 8] };
        let mut cf = vec![0.0; spec.critic_feature_dim()];
        critic_features(&s, &spec, &mut cf);
        assert!(cf.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn saturated_state_keeps_nonzero_critic_features() {
        let spec = default_2x2();
        let s = TrafficState { q: vec![20; 8], t: vec![20; 8] };
        let mut cf = vec![0.0; spec.critic_feature_dim()];
        critic_features(&s, &spec, &mut cf);
        for i in 0..8 {
            assert_eq!(&cf[i * 4..(i + 1) * 4], &[0.0, 1.0, 0.0, 1.0]);
        }
    }
}
