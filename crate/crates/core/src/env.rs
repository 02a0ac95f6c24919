//! Deterministic toy constrained MDPs.
//!
//! Two environments are provided:
//!
//! * `PointHazard2D`: a point mass in `[-1, 1]²` travelling from `(-0.8, -0.8)`
//!   to the goal `(0.8, 0.8)`. The straight line passes through a hazard disk of
//!   radius `0.35` at the origin. Reward is progress towards the goal.
//! * `ChainVel1D`: a velocity `v ∈ [0, 1]` driven by bounded accelerations.
//!   Reward is the velocity itself and every step above `0.6` costs 1, so
//!   return and cost are coupled.
//!
//! Per-step costs are binary. `smooth_cost` is a logistic relaxation of the
//! hard cost used only by diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::math::{self, clip, sigmoid, sqrt};
use crate::{Error, Result};

pub const DEFAULT_EPISODE_LEN: usize = 64;
/// Sharpness of the logistic cost surrogate.
pub const SURROGATE_SHARPNESS: f64 = 20.0;

pub const HAZARD_RADIUS: f64 = 0.35;
pub const GOAL: [f64; 2] = [0.8, 0.8];
pub const POINT_START: [f64; 2] = [-0.8, -0.8];
const POINT_MAX_ACTION: f64 = 0.1;
/// Detour waypoint for the scripted safe policy; both legs stay at distance 0.6
/// from the hazard centre.
const SAFE_WAYPOINT: [f64; 2] = [0.5, -0.5];

pub const VELOCITY_COST_THRESHOLD: f64 = 0.6;
pub const VELOCITY_SAFE_TARGET: f64 = 0.55;
const VELOCITY_MAX_ACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    PointHazard2D,
    ChainVel1D,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointHazard2D => "PointHazard2D",
            EnvId::ChainVel1D => "ChainVel1D",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PointHazard2D" => Ok(EnvId::PointHazard2D),
            "ChainVel1D" => Ok(EnvId::ChainVel1D),
            other => Err(Error::invalid(format!("unknown env_id {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        Self::with_episode_len(id, DEFAULT_EPISODE_LEN)
    }

    pub fn with_episode_len(id: EnvId, episode_len: usize) -> Self {
        match id {
            EnvId::PointHazard2D => EnvSpec {
                id,
                state_dim: 2,
                action_dim: 2,
                episode_len,
                action_low: vec![-POINT_MAX_ACTION; 2],
                action_high: vec![POINT_MAX_ACTION; 2],
            },
            EnvId::ChainVel1D => EnvSpec {
                id,
                state_dim: 1,
                action_dim: 1,
                episode_len,
                action_low: vec![-VELOCITY_MAX_ACTION],
                action_high: vec![VELOCITY_MAX_ACTION],
            },
        }
    }

    /// Per-step reward bounds `(r_min, r_max)`.
    pub fn reward_bounds(&self) -> (f64, f64) {
        match self.id {
            // progress is bounded by the step length |Δx| ≤ 0.1·√2
            EnvId::PointHazard2D => (-POINT_MAX_ACTION * sqrt(2.0), POINT_MAX_ACTION * sqrt(2.0)),
            EnvId::ChainVel1D => (0.0, 1.0),
        }
    }

    fn state_bounds(&self) -> (f64, f64) {
        match self.id {
            EnvId::PointHazard2D => (-1.0, 1.0),
            EnvId::ChainVel1D => (0.0, 1.0),
        }
    }

    pub fn check_state(&self, state: &[f64]) -> Result<()> {
        check_dim(self.state_dim, state.len())?;
        let (lo, hi) = self.state_bounds();
        if state.iter().all(|x| x.is_finite() && *x >= lo && *x <= hi) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!("{state:?} not in [{lo}, {hi}]^{}", self.state_dim)))
        }
    }

    /// Clip an action into the action box. Returns whether any coordinate changed.
    pub fn clip_action(&self, action: &[f64], out: &mut [f64]) -> bool {
        let mut clipped = false;
        for i in 0..self.action_dim {
            let a = if action[i].is_finite() { action[i] } else { 0.0 };
            out[i] = clip(a, self.action_low[i], self.action_high[i]);
            clipped |= out[i] != action[i];
        }
        clipped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

/// A full rollout, stored flat: `states` has `T+1` rows of `state_dim`,
/// `actions` has `T` rows of `action_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Episode {
    pub fn new(state_dim: usize, action_dim: usize, initial: &[f64]) -> Self {
        Episode {
            state_dim,
            action_dim,
            states: initial.to_vec(),
            actions: Vec::new(),
            rewards: Vec::new(),
            costs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn push(&mut self, action: &[f64], step: &StepResult) {
        self.actions.extend_from_slice(action);
        self.states.extend_from_slice(&step.next_state);
        self.rewards.push(step.reward);
        self.costs.push(step.cost);
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Check that the stored arrays have consistent lengths.
    pub fn validate(&self) -> Result<()> {
        let t = self.rewards.len();
        check_dim(t, self.costs.len())?;
        check_dim(t * self.action_dim, self.actions.len())?;
        check_dim((t + 1) * self.state_dim, self.states.len())
    }
}

pub fn reset(spec: &EnvSpec, _seed: u64) -> Vec<f64> {
    match spec.id {
        EnvId::PointHazard2D => POINT_START.to_vec(),
        EnvId::ChainVel1D => vec![0.0],
    }
}

pub fn step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<StepResult> {
    spec.check_state(state)?;
    check_dim(spec.action_dim, action.len())?;
    let mut a = vec![0.0; spec.action_dim];
    spec.clip_action(action, &mut a);
    Ok(match spec.id {
        EnvId::PointHazard2D => {
            let next = [clip(state[0] + a[0], -1.0, 1.0), clip(state[1] + a[1], -1.0, 1.0)];
            let reward = dist(state, &GOAL) - dist(&next, &GOAL);
            let cost = if dist(&next, &[0.0, 0.0]) < HAZARD_RADIUS { 1.0 } else { 0.0 };
            StepResult { next_state: next.to_vec(), reward, cost, done: false }
        }
        EnvId::ChainVel1D => {
            let v = clip(state[0] + a[0], 0.0, 1.0);
            let cost = if v > VELOCITY_COST_THRESHOLD { 1.0 } else { 0.0 };
            StepResult { next_state: vec![v], reward: v, cost, done: false }
        }
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Signed argument of the cost surrogate: positive inside the cost region.
fn surrogate_margin(spec: &EnvSpec, state: &[f64]) -> f64 {
    match spec.id {
        EnvId::PointHazard2D => HAZARD_RADIUS - dist(state, &[0.0, 0.0]),
        EnvId::ChainVel1D => state[0] - VELOCITY_COST_THRESHOLD,
    }
}

/// Logistic relaxation of the hard per-step cost of arriving in `state`.
pub fn smooth_cost(spec: &EnvSpec, state: &[f64]) -> f64 {
    sigmoid(SURROGATE_SHARPNESS * surrogate_margin(spec, state))
}

/// Gradient of [`smooth_cost`] with respect to the state. Returns the value.
pub fn smooth_cost_grad(spec: &EnvSpec, state: &[f64], grad: &mut [f64]) -> f64 {
    let p = smooth_cost(spec, state);
    let dp = SURROGATE_SHARPNESS * p * (1.0 - p);
    match spec.id {
        EnvId::PointHazard2D => {
            let r = dist(state, &[0.0, 0.0]);
            // d(0.35 - r)/dx = -x / r, undefined at the centre where we use 0
            for i in 0..2 {
                grad[i] = if r > 0.0 { -dp * state[i] / r } else { 0.0 };
            }
        }
        EnvId::ChainVel1D => grad[0] = dp,
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BehaviorPolicy {
    Random,
    Greedy,
    Safe,
}

impl BehaviorPolicy {
    pub const ALL: [BehaviorPolicy; 3] = [BehaviorPolicy::Safe, BehaviorPolicy::Greedy, BehaviorPolicy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorPolicy::Random => "random",
            BehaviorPolicy::Greedy => "greedy",
            BehaviorPolicy::Safe => "safe",
        }
    }
}

impl FromStr for BehaviorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BehaviorPolicy::Random),
            "greedy" => Ok(BehaviorPolicy::Greedy),
            "safe" => Ok(BehaviorPolicy::Safe),
            other => Err(Error::invalid(format!("unknown policy_id {other:?}"))),
        }
    }
}

/// Action that moves straight towards `target`, scaled so that no coordinate
/// exceeds the action bound.
fn toward(state: &[f64], target: &[f64]) -> [f64; 2] {
    let d = [target[0] - state[0], target[1] - state[1]];
    let m = d[0].abs().max(d[1].abs());
    let scale = if m > POINT_MAX_ACTION { POINT_MAX_ACTION / m } else { 1.0 };
    [d[0] * scale, d[1] * scale]
}

fn scripted_action(spec: &EnvSpec, policy: BehaviorPolicy, state: &[f64], phase: &mut u8) -> Vec<f64> {
    match (spec.id, policy) {
        (EnvId::PointHazard2D, BehaviorPolicy::Greedy) => toward(state, &GOAL).to_vec(),
        (EnvId::PointHazard2D, BehaviorPolicy::Safe) => {
            if *phase == 0 && dist(state, &SAFE_WAYPOINT) < 0.05 {
                *phase = 1;
            }
            let target = if *phase == 0 { SAFE_WAYPOINT } else { GOAL };
            toward(state, &target).to_vec()
        }
        (EnvId::ChainVel1D, BehaviorPolicy::Greedy) => vec![VELOCITY_MAX_ACTION],
        (EnvId::ChainVel1D, BehaviorPolicy::Safe) => {
            vec![clip(VELOCITY_SAFE_TARGET - state[0], -VELOCITY_MAX_ACTION, VELOCITY_MAX_ACTION)]
        }
        (_, BehaviorPolicy::Random) => unreachable!("random actions are drawn by the caller"),
    }
}

/// Roll out a behavior policy for one episode. Deterministic given `seed`.
pub fn rollout(spec: &EnvSpec, policy: BehaviorPolicy, seed: u64) -> Episode {
    let mut rng = math::rng(seed);
    let mut state = reset(spec, seed);
    let mut episode = Episode::new(spec.state_dim, spec.action_dim, &state);
    let mut phase = 0u8;
    for _ in 0..spec.episode_len {
        let action = match policy {
            BehaviorPolicy::Random => (0..spec.action_dim)
                .map(|i| rng.random_range(spec.action_low[i]..=spec.action_high[i]))
                .collect(),
            _ => scripted_action(spec, policy, &state, &mut phase),
        };
        let result = step(spec, &state, &action).expect("scripted rollout stays in bounds");
        episode.push(&action, &result);
        state = result.next_state;
    }
    episode
}

/// Re-step `episode` through the dynamics and report the first transition
/// whose reward, cost or next state differs from the record.
pub fn replay_mismatch(spec: &EnvSpec, episode: &Episode) -> Option<usize> {
    (0..episode.len()).find(|&t| {
        match step(spec, episode.state(t), episode.action(t)) {
            Ok(r) => {
                r.reward != episode.rewards[t] || r.cost != episode.costs[t] || r.next_state[..] != *episode.state(t + 1)
            }
            Err(_) => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_fixed() {
        let p = EnvSpec::new(EnvId::PointHazard2D);
        assert_eq!(reset(&p, 1), vec![-0.8, -0.8]);
        assert_eq!(reset(&p, 1), reset(&p, 2));
        assert_eq!(reset(&EnvSpec::new(EnvId::ChainVel1D), 7), vec![0.0]);
    }

    #[test]
    fn chain_step_examples() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        let r = step(&c, &[0.5], &[0.2]).unwrap();
        assert!((r.next_state[0] - 0.7).abs() < 1e-12);
        assert!((r.reward - 0.7).abs() < 1e-12);
        assert_eq!(r.cost, 1.0);
        let r = step(&c, &[0.5], &[0.0]).unwrap();
        assert_eq!(r.next_state, vec![0.5]);
        assert_eq!(r.reward, 0.5);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn point_step_example() {
        let p = EnvSpec::new(EnvId::PointHazard2D);
        let r = step(&p, &[0.0, 0.4], &[0.0, -0.1]).unwrap();
        assert!((r.next_state[0]).abs() < 1e-12 && (r.next_state[1] - 0.3).abs() < 1e-12);
        assert_eq!(r.cost, 1.0);
        // ‖(0,0.4)−g‖ = √(0.64+0.16), ‖(0,0.3)−g‖ = √(0.64+0.25)
        let expected = 0.8f64.sqrt() - 0.89f64.sqrt();
        assert!((r.reward - expected).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_out_of_bounds() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        assert!(matches!(step(&c, &[1.5], &[0.0]), Err(Error::OutOfBounds(_))));
        assert!(matches!(step(&c, &[f64::NAN], &[0.0]), Err(Error::OutOfBounds(_))));
        let p = EnvSpec::new(EnvId::PointHazard2D);
        assert!(step(&p, &[0.0, -1.2], &[0.0, 0.0]).is_err());
        assert!(matches!(step(&p, &[0.0], &[0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn actions_are_clipped() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        let r = step(&c, &[0.0], &[5.0]).unwrap();
        assert!((r.next_state[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn smooth_cost_examples() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        assert!((smooth_cost(&c, &[0.6]) - 0.5).abs() < 1e-12);
        let expected = 1.0 / (1.0 + (-8.0f64).exp());
        assert!((smooth_cost(&c, &[1.0]) - expected).abs() < 1e-12);
        assert!((expected - 0.99966).abs() < 1e-5);
        let p = EnvSpec::new(EnvId::PointHazard2D);
        assert!((smooth_cost(&p, &[0.0, 0.0]) - 1.0 / (1.0 + (-7.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn hard_and_smooth_cost_agree_on_grid() {
        let p = EnvSpec::new(EnvId::PointHazard2D);
        for i in 0..=200 {
            for j in 0..=200 {
                let prev = [0.0, 0.0];
                let s = [-1.0 + i as f64 * 0.01, -1.0 + j as f64 * 0.01];
                let r = dist(&s, &prev);
                if (r - HAZARD_RADIUS).abs() < 1e-6 {
                    continue;
                }
                let hard = r < HAZARD_RADIUS;
                assert_eq!(hard, smooth_cost(&p, &s) > 0.5, "{s:?}");
            }
        }
        let c = EnvSpec::new(EnvId::ChainVel1D);
        for i in 0..=1000 {
            let v = i as f64 * 1e-3;
            if (v - VELOCITY_COST_THRESHOLD).abs() < 1e-6 {
                continue;
            }
            let hard = step(&c, &[v], &[0.0]).unwrap().cost == 1.0;
            assert_eq!(hard, smooth_cost(&c, &[v]) > 0.5, "v={v}");
        }
    }

    #[test]
    fn smooth_cost_gradient_matches_finite_differences() {
        let h = 1e-6;
        for spec in [EnvSpec::new(EnvId::PointHazard2D), EnvSpec::new(EnvId::ChainVel1D)] {
            let mut rng = math::rng(3);
            for _ in 0..100 {
                let s: Vec<f64> = (0..spec.state_dim)
                    .map(|_| if spec.id == EnvId::ChainVel1D { rng.random_range(0.0..1.0) } else { rng.random_range(-0.7..0.7) })
                    .collect();
                let mut g = vec![0.0; spec.state_dim];
                smooth_cost_grad(&spec, &s, &mut g);
                for i in 0..spec.state_dim {
                    let mut a = s.clone();
                    let mut b = s.clone();
                    a[i] += h;
                    b[i] -= h;
                    let fd = (smooth_cost(&spec, &a) - smooth_cost(&spec, &b)) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-3 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn greedy_chain_saturates_by_step_five() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        let ep = rollout(&c, BehaviorPolicy::Greedy, 0);
        assert_eq!(ep.len(), 64);
        assert!((ep.state(5)[0] - 1.0).abs() < 1e-12);
        assert!(ep.costs[4..].iter().all(|&c| c == 1.0));
    }

    #[test]
    fn safe_chain_is_cost_free() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        let ep = rollout(&c, BehaviorPolicy::Safe, 0);
        assert_eq!(ep.total_cost(), 0.0);
        assert!((ep.state(64)[0] - VELOCITY_SAFE_TARGET).abs() < 1e-12);
    }

    #[test]
    fn point_policies() {
        let p = EnvSpec::new(EnvId::PointHazard2D);
        let safe = rollout(&p, BehaviorPolicy::Safe, 0);
        assert_eq!(safe.total_cost(), 0.0);
        let last = safe.state(64);
        assert!(dist(last, &GOAL) < 1e-9, "{last:?}");
        let min_clearance = (0..=64).map(|t| dist(safe.state(t), &[0.0, 0.0])).fold(f64::INFINITY, f64::min);
        assert!(min_clearance >= HAZARD_RADIUS + 0.1);
        let greedy = rollout(&p, BehaviorPolicy::Greedy, 0);
        assert!(greedy.total_cost() > 0.0);
    }

    #[test]
    fn random_rollout_is_deterministic() {
        for id in [EnvId::PointHazard2D, EnvId::ChainVel1D] {
            let spec = EnvSpec::new(id);
            let a = rollout(&spec, BehaviorPolicy::Random, 11);
            assert_eq!(a, rollout(&spec, BehaviorPolicy::Random, 11));
            assert_ne!(a, rollout(&spec, BehaviorPolicy::Random, 12));
            a.validate().unwrap();
        }
    }

    #[test]
    fn episodes_replay_exactly() {
        for id in [EnvId::PointHazard2D, EnvId::ChainVel1D] {
            let spec = EnvSpec::new(id);
            for policy in BehaviorPolicy::ALL {
                let ep = rollout(&spec, policy, 5);
                assert_eq!(replay_mismatch(&spec, &ep), None);
            }
        }
    }

    #[test]
    fn chain_reward_cost_coupling() {
        let c = EnvSpec::new(EnvId::ChainVel1D);
        for i in 0..40 {
            let v1 = 0.601 + i as f64 * 0.005;
            let v2 = v1 + 0.003;
            let r1 = step(&c, &[v1], &[0.0]).unwrap();
            let r2 = step(&c, &[v2], &[0.0]).unwrap();
            assert!(r2.reward > r1.reward);
            assert_eq!((r1.cost, r2.cost), (1.0, 1.0));
        }
    }

    #[test]
    fn parse_ids() {
        assert_eq!("ChainVel1D".parse::<EnvId>().unwrap(), EnvId::ChainVel1D);
        assert!("Chain".parse::<EnvId>().is_err());
        assert!("bogus".parse::<BehaviorPolicy>().is_err());
    }
}
