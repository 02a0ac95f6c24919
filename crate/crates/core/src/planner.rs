//! Receding-horizon execution with piecewise cost budgets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_limit, Condition, DatasetStats, Segment};
use crate::diffusion::{sample_batch, Denoiser, GuidanceHook, Inpaint, NoiseSchedule, SampleRequest};
use crate::env::{self, BehaviorPolicy, EnvSpec, Episode};
use crate::guidance::{CostModel, GuidanceConfig, RewardModel, SdgdHook, SwappedHook};
use crate::error::check_dim;
use crate::math::mix_seed;
use crate::{stats, Error, Result};

pub const DEFAULT_REPLAN: usize = 8;
pub const RANDOM_REFERENCE_EPISODES: usize = 1000;

/// One piece of a budget schedule, active from `start` until the next piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPiece {
    pub start: usize,
    pub limit: f64,
}

/// Piecewise-constant cost limits over one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pieces: Vec<BudgetPiece>,
    episode_len: usize,
}

impl BudgetSchedule {
    pub fn new(pieces: Vec<BudgetPiece>, episode_len: usize) -> Result<Self> {
        if pieces.first().map(|p| p.start) != Some(0) {
            return Err(Error::invalid("schedule must start at step 0"));
        }
        if pieces.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::invalid("schedule start steps must be strictly increasing"));
        }
        if pieces.iter().any(|p| !(p.limit >= 0.0)) {
            return Err(Error::invalid("schedule limits must be >= 0"));
        }
        if pieces.last().is_some_and(|p| p.start >= episode_len) {
            return Err(Error::invalid("schedule piece starts after the episode ends"));
        }
        Ok(BudgetSchedule { pieces, episode_len })
    }

    pub fn constant(limit: f64, episode_len: usize) -> Result<Self> {
        Self::new(vec![BudgetPiece { start: 0, limit }], episode_len)
    }

    /// Parse `"k:l,k:l,…"`.
    pub fn parse(text: &str, episode_len: usize) -> Result<Self> {
        let pieces = text
            .split(',')
            .map(|item| {
                let (k, l) = item.trim().split_once(':').ok_or_else(|| Error::invalid(format!("bad schedule entry {item:?}")))?;
                let start = k.trim().parse().map_err(|_| Error::invalid(format!("bad schedule step {k:?}")))?;
                let limit = l.trim().parse().map_err(|_| Error::invalid(format!("bad schedule limit {l:?}")))?;
                Ok(BudgetPiece { start, limit })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pieces, episode_len)
    }

    pub fn pieces(&self) -> &[BudgetPiece] {
        &self.pieces
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    /// Length `T_k` of piece `k`.
    pub fn piece_len(&self, k: usize) -> usize {
        let end = self.pieces.get(k + 1).map_or(self.episode_len, |p| p.start);
        end - self.pieces[k].start
    }

    /// Index of the piece active at step `t`.
    pub fn active(&self, t: usize) -> Result<usize> {
        if t >= self.episode_len {
            return Err(Error::OutOfBounds(format!("step {t} beyond schedule of {} steps", self.episode_len)));
        }
        Ok(self.pieces.partition_point(|p| p.start <= t) - 1)
    }

    /// `l_k − consumed_k` for the piece active at `t`, clamped at zero.
    pub fn remaining_budget(&self, t: usize, consumed: &[f64]) -> Result<f64> {
        let k = self.active(t)?;
        check_dim(self.pieces.len(), consumed.len())?;
        Ok((self.pieces[k].limit - consumed[k]).max(0.0))
    }
}

impl fmt::Display for BudgetSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pieces.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", p.start, p.limit)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetMode {
    /// Condition on the active limit.
    Static,
    /// Condition on what is left of the active limit.
    Decrement,
}

impl FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(BudgetMode::Static),
            "decrement" => Ok(BudgetMode::Decrement),
            other => Err(Error::invalid(format!("unknown planner mode {other:?}"))),
        }
    }
}

/// Sampler variants compared by the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Sdgd,
    /// Reward guidance off.
    NoCg,
    /// Unconditional pathway, no CFG; reward guidance kept.
    NoCfg,
    /// CFG on a return target, hinge cost guidance.
    Swapped,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sdgd, Variant::NoCg, Variant::NoCfg, Variant::Swapped];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sdgd => "sdgd",
            Variant::NoCg => "no_cg",
            Variant::NoCfg => "no_cfg",
            Variant::Swapped => "swapped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Executed prefix length, which is also the replanning interval.
    pub replan: usize,
    pub guidance: GuidanceConfig,
    pub mode: BudgetMode,
    pub variant: Variant,
    /// Normalized return condition for the swapped variant.
    pub target_return: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: crate::dataset::DEFAULT_HORIZON,
            replan: DEFAULT_REPLAN,
            guidance: GuidanceConfig::default(),
            mode: BudgetMode::Decrement,
            variant: Variant::Sdgd,
            target_return: 0.9,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate(self.horizon)?;
        if self.replan < 1 || self.replan > self.horizon {
            return Err(Error::invalid(format!("f must lie in [1, {}], got {}", self.horizon, self.replan)));
        }
        Ok(())
    }

    /// `(w, λ)` actually applied by the variant.
    pub fn effective_weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::Sdgd | Variant::Swapped => (self.guidance.w, self.guidance.lambda),
            Variant::NoCg => (self.guidance.w, 0.0),
            Variant::NoCfg => (0.0, self.guidance.lambda),
        }
    }
}

/// Models for the return-conditioned swapped baseline.
#[derive(Debug, Clone, Copy)]
pub struct SwappedModels<'a> {
    pub denoiser: &'a Denoiser,
    pub cost: &'a CostModel,
}

/// Everything a planner needs, trained on the same dataset.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a Denoiser,
    pub reward: Option<&'a RewardModel>,
    pub swapped: Option<SwappedModels<'a>>,
    pub stats: &'a DatasetStats,
}

impl Models<'_> {
    fn check(&self, env: &EnvSpec, config: &PlannerConfig) -> Result<()> {
        let dim = config.horizon * (env.state_dim + env.action_dim);
        check_dim(dim, crate::diffusion::NoisePredictor::sample_dim(self.denoiser))?;
        check_dim(env.state_dim, self.stats.state_mean.len())?;
        check_dim(env.action_dim, self.stats.action_mean.len())?;
        if let Some(r) = self.reward {
            check_dim(dim, r.regressor.sample_dim())?;
        }
        if config.variant == Variant::Swapped {
            let sw = self.swapped.ok_or_else(|| Error::invalid("swapped variant needs a return-conditioned denoiser and cost model"))?;
            check_dim(dim, crate::diffusion::NoisePredictor::sample_dim(sw.denoiser))?;
        }
        Ok(())
    }
}

/// A planned segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub condition: Condition,
    /// Denormalized segment.
    pub segment: Segment,
}

/// Input for one plan: current state, budget and sampling seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub state: Vec<f64>,
    pub budget: f64,
    pub seed: u64,
}

/// Plan several segments in one batched reverse chain. Each plan depends only
/// on its own request.
pub fn plan_batch(models: &Models<'_>, config: &PlannerConfig, requests: &[PlanRequest]) -> Result<Vec<Plan>> {
    let stats = models.stats;
    let sd = stats.state_mean.len();
    let (w, lambda) = config.effective_weights();
    let mut sample_reqs = Vec::with_capacity(requests.len());
    for r in requests {
        check_dim(sd, r.state.len())?;
        let mut pinned = r.state.clone();
        for (i, v) in pinned.iter_mut().enumerate() {
            *v = (*v - stats.state_mean[i]) / stats.state_std[i];
        }
        let condition = match config.variant {
            Variant::NoCfg => Condition::Null,
            Variant::Swapped => Condition::Value(config.target_return),
            Variant::Sdgd | Variant::NoCg => Condition::Value(normalize_limit(r.budget, stats.c_max_seg)),
        };
        sample_reqs.push(SampleRequest::new(condition, r.seed).with_inpaint(Inpaint::prefix(&pinned)));
    }
    let swapped_hook;
    let sdgd_hook;
    let (denoiser, hook): (&Denoiser, &dyn GuidanceHook) = match config.variant {
        Variant::Swapped => {
            let sw = models.swapped.ok_or_else(|| Error::invalid("swapped variant needs its models"))?;
            swapped_hook = SwappedHook {
                denoiser: sw.denoiser,
                schedule: models.schedule,
                cost: sw.cost,
                limits: requests.iter().map(|r| r.budget).collect(),
                w,
                lambda,
            };
            (sw.denoiser, &swapped_hook)
        }
        _ => {
            sdgd_hook = SdgdHook { denoiser: models.denoiser, schedule: models.schedule, reward: models.reward, w, lambda };
            (models.denoiser, &sdgd_hook)
        }
    };
    let samples = sample_batch(models.schedule, denoiser, &sample_reqs, hook, &mut |_| {})?;
    samples
        .into_iter()
        .zip(&sample_reqs)
        .map(|(flat, req)| {
            let segment = crate::dataset::denormalize(&flat, stats)?;
            Ok(Plan { condition: req.condition, segment })
        })
        .collect()
}

pub fn plan_segment(models: &Models<'_>, config: &PlannerConfig, state: &[f64], budget: f64, seed: u64) -> Result<Plan> {
    Ok(plan_batch(models, config, &[PlanRequest { state: state.to_vec(), budget, seed }])?.remove(0))
}

/// Log of one replanning event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanLog {
    pub t: usize,
    /// Active schedule piece.
    pub piece: usize,
    pub active_limit: f64,
    pub remaining_budget: f64,
    /// Budget the plan was conditioned on (after the static/decrement choice).
    pub conditioned_budget: f64,
    pub condition: Condition,
    pub plan: Segment,
    pub executed: usize,
    /// Steps (absolute) whose planned action was clipped.
    pub clipped_steps: Vec<usize>,
    pub realized_reward: f64,
    pub realized_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub variant: Variant,
    pub schedule: BudgetSchedule,
    pub episode: Episode,
    pub replans: Vec<ReplanLog>,
    /// Realized cost within each schedule piece.
    pub piece_costs: Vec<f64>,
}

impl EpisodeRecord {
    pub fn total_return(&self) -> f64 {
        self.episode.total_reward()
    }

    pub fn total_cost(&self) -> f64 {
        self.episode.total_cost()
    }

    /// Whether every piece's realized cost stays within its limit.
    pub fn within_limits(&self) -> bool {
        self.piece_costs.iter().zip(self.schedule.pieces()).all(|(c, p)| *c <= p.limit)
    }
}

struct Rollout {
    seed: u64,
    state: Vec<f64>,
    episode: Episode,
    consumed: Vec<f64>,
    replans: Vec<ReplanLog>,
}

/// Run episodes in lockstep, batching their plans. Each episode is a function
/// of its own seed only.
pub fn run_episodes(
    env_spec: &EnvSpec,
    models: &Models<'_>,
    config: &PlannerConfig,
    schedule: &BudgetSchedule,
    seeds: &[u64],
) -> Result<Vec<EpisodeRecord>> {
    config.validate()?;
    models.check(env_spec, config)?;
    if schedule.episode_len() != env_spec.episode_len {
        return Err(Error::invalid("budget schedule length differs from the episode length"));
    }
    let mut runs: Vec<Rollout> = seeds
        .iter()
        .map(|&seed| {
            let state = env::reset(env_spec, seed);
            Rollout {
                seed,
                episode: Episode::new(env_spec.state_dim, env_spec.action_dim, &state),
                state,
                consumed: vec![0.0; schedule.pieces().len()],
                replans: Vec::new(),
            }
        })
        .collect();
    let t_ep = env_spec.episode_len;
    let mut t = 0;
    let mut replan_index = 0u64;
    let mut clipped = vec![0.0; env_spec.action_dim];
    while t < t_ep {
        let piece = schedule.active(t)?;
        let active_limit = schedule.pieces()[piece].limit;
        let mut requests = Vec::with_capacity(runs.len());
        let mut remaining = Vec::with_capacity(runs.len());
        for run in &runs {
            let left = schedule.remaining_budget(t, &run.consumed)?;
            let budget = match config.mode {
                BudgetMode::Static => active_limit,
                BudgetMode::Decrement => left,
            };
            remaining.push(left);
            requests.push(PlanRequest { state: run.state.clone(), budget, seed: mix_seed(run.seed, replan_index) });
        }
        let plans = plan_batch(models, config, &requests)?;
        let executed = config.replan.min(t_ep - t);
        for ((run, plan), (req, left)) in runs.iter_mut().zip(plans).zip(requests.iter().zip(remaining)) {
            let mut log = ReplanLog {
                t,
                piece,
                active_limit,
                remaining_budget: left,
                conditioned_budget: req.budget,
                condition: plan.condition,
                plan: plan.segment,
                executed,
                clipped_steps: Vec::new(),
                realized_reward: 0.0,
                realized_cost: 0.0,
            };
            for j in 0..executed {
                let action = log.plan.action(j);
                if env_spec.clip_action(action, &mut clipped) {
                    log.clipped_steps.push(t + j);
                }
                let result = env::step(env_spec, &run.state, &clipped)?;
                run.episode.push(&clipped, &result);
                run.consumed[schedule.active(t + j)?] += result.cost;
                log.realized_reward += result.reward;
                log.realized_cost += result.cost;
                run.state = result.next_state;
            }
            run.replans.push(log);
        }
        t += executed;
        replan_index += 1;
    }
    Ok(runs
        .into_iter()
        .map(|run| EpisodeRecord {
            seed: run.seed,
            variant: config.variant,
            schedule: schedule.clone(),
            episode: run.episode,
            replans: run.replans,
            piece_costs: run.consumed,
        })
        .collect())
}

pub fn run_episode(
    env_spec: &EnvSpec,
    models: &Models<'_>,
    config: &PlannerConfig,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<EpisodeRecord> {
    Ok(run_episodes(env_spec, models, config, schedule, &[seed])?.remove(0))
}

/// Seeds for `count` evaluation episodes under evaluation seed `seed`.
pub fn episode_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| mix_seed(seed, i)).collect()
}

/// Mean return of the uniform random policy over `episodes` rollouts.
pub fn random_reference_return(env_spec: &EnvSpec, episodes: usize, seed: u64) -> f64 {
    let returns: Vec<f64> =
        (0..episodes as u64).map(|i| env::rollout(env_spec, BehaviorPolicy::Random, mix_seed(seed, i)).total_reward()).collect();
    stats::mean(&returns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub mean_return: f64,
    pub se_return: f64,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub normalized_reward: f64,
    /// Mean cost divided by the limit, or the raw mean cost when the limit is 0.
    pub normalized_cost: f64,
    pub cost_is_raw: bool,
}

pub fn normalized_metrics(records: &[EpisodeRecord], limit: f64, r_rand: f64, r_best: f64) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::invalid("no episode records"));
    }
    let returns: Vec<f64> = records.iter().map(EpisodeRecord::total_return).collect();
    let costs: Vec<f64> = records.iter().map(EpisodeRecord::total_cost).collect();
    let mean_return = stats::mean(&returns);
    let mean_cost = stats::mean(&costs);
    let cost_is_raw = limit <= 0.0;
    Ok(Metrics {
        episodes: records.len(),
        mean_return,
        se_return: stats::std_err(&returns),
        mean_cost,
        se_cost: stats::std_err(&costs),
        normalized_reward: (mean_return - r_rand) / (r_best - r_rand),
        normalized_cost: if cost_is_raw { mean_cost } else { mean_cost / limit },
        cost_is_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::env::EnvId;

    #[test]
    fn remaining_budget_cases() {
        let s = BudgetSchedule::parse("0:1,20:3,40:10", 64).unwrap();
        assert_eq!(s.remaining_budget(25, &[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(s.remaining_budget(5, &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(s.remaining_budget(45, &[0.0, 0.0, 10.0]).unwrap(), 0.0);
        assert_eq!(s.remaining_budget(45, &[0.0, 0.0, 12.0]).unwrap(), 0.0);
        assert!(s.remaining_budget(64, &[0.0; 3]).is_err());
        assert_eq!(s.piece_len(1), 20);
        assert_eq!(s.piece_len(2), 24);
        assert_eq!(s.to_string(), "0:1,20:3,40:10");
    }

    #[test]
    fn schedule_validation() {
        assert!(BudgetSchedule::parse("5:1", 64).is_err());
        assert!(BudgetSchedule::parse("0:1,0:2", 64).is_err());
        assert!(BudgetSchedule::parse("0:-1", 64).is_err());
        assert!(BudgetSchedule::parse("0:1,x:2", 64).is_err());
        assert!(BudgetSchedule::parse("0:1,70:2", 64).is_err());
    }

    fn untrained(env_spec: &EnvSpec, horizon: usize) -> (NoiseSchedule, Denoiser, DatasetStats) {
        let sch = make_schedule(10).unwrap();
        let d = horizon * (env_spec.state_dim + env_spec.action_dim);
        let den = Denoiser::new(d, 10, vec![8], 3).unwrap();
        let mut stats = DatasetStats::identity(env_spec.state_dim, env_spec.action_dim);
        stats.c_max_seg = horizon as f64;
        (sch, den, stats)
    }

    #[test]
    fn smoke_episode_and_replan_alignment() {
        let env_spec = EnvSpec::with_episode_len(EnvId::ChainVel1D, 20);
        let (sch, den, stats) = untrained(&env_spec, 8);
        let models = Models { schedule: &sch, denoiser: &den, reward: None, swapped: None, stats: &stats };
        let mut config = PlannerConfig { horizon: 8, replan: 3, ..PlannerConfig::default() };
        config.guidance.w = 0.0;
        config.guidance.lambda = 0.0;
        config.guidance.feasible_len = 3;
        let schedule = BudgetSchedule::parse("0:1,10:3", 20).unwrap();
        let rec = run_episode(&env_spec, &models, &config, &schedule, 4).unwrap();
        assert_eq!(rec.episode.len(), 20);
        assert_eq!(rec.replans.len(), 7);
        assert!(rec.replans.iter().all(|r| r.t % 3 == 0));
        assert_eq!(rec.replans.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 3, 6, 9, 12, 15, 18]);
        assert!(env::replay_mismatch(&env_spec, &rec.episode).is_none());
        // independent re-summation of costs per piece
        let mut sums = [0.0; 2];
        for (t, c) in rec.episode.costs.iter().enumerate() {
            sums[if t < 10 { 0 } else { 1 }] += c;
        }
        assert_eq!(rec.piece_costs, sums.to_vec());
        // executed actions are the clipped plan prefixes
        for log in &rec.replans {
            for j in 0..log.executed {
                let planned = log.plan.action(j)[0];
                let done = rec.episode.action(log.t + j)[0];
                assert_eq!(done, planned.clamp(-0.2, 0.2));
                assert_eq!(planned.abs() > 0.2, log.clipped_steps.contains(&(log.t + j)));
            }
        }
        // the plan after the change at step 10 uses the new piece's budget
        let after = rec.replans.iter().find(|r| r.t >= 10).unwrap();
        assert_eq!(after.piece, 1);
        assert_eq!(after.conditioned_budget, 3.0 - rec.episode.costs[10..after.t].iter().sum::<f64>());
        assert_eq!(run_episode(&env_spec, &models, &config, &schedule, 4).unwrap(), rec);
    }

    #[test]
    fn open_loop_single_plan() {
        let env_spec = EnvSpec::with_episode_len(EnvId::ChainVel1D, 8);
        let (sch, den, stats) = untrained(&env_spec, 8);
        let models = Models { schedule: &sch, denoiser: &den, reward: None, swapped: None, stats: &stats };
        let config = PlannerConfig { horizon: 8, replan: 8, ..PlannerConfig::default() };
        let schedule = BudgetSchedule::constant(2.0, 8).unwrap();
        let rec = run_episode(&env_spec, &models, &config, &schedule, 0).unwrap();
        assert_eq!(rec.replans.len(), 1);
    }

    #[test]
    fn plan_pins_state_and_is_deterministic() {
        let env_spec = EnvSpec::new(EnvId::PointHazard2D);
        let (sch, den, stats) = untrained(&env_spec, 8);
        let models = Models { schedule: &sch, denoiser: &den, reward: None, swapped: None, stats: &stats };
        let config = PlannerConfig { horizon: 8, ..PlannerConfig::default() };
        let a = plan_segment(&models, &config, &[0.3, -0.4], 0.0, 9).unwrap();
        assert_eq!(a.condition, Condition::Value(0.0));
        assert!((a.segment.state(0)[0] - 0.3).abs() < 1e-5 && (a.segment.state(0)[1] + 0.4).abs() < 1e-5);
        assert_eq!(plan_segment(&models, &config, &[0.3, -0.4], 0.0, 9).unwrap(), a);
        // batching does not change a plan
        let reqs = [
            PlanRequest { state: vec![0.0, 0.0], budget: 3.0, seed: 1 },
            PlanRequest { state: vec![0.3, -0.4], budget: 0.0, seed: 9 },
        ];
        assert_eq!(plan_batch(&models, &config, &reqs).unwrap()[1], a);
    }

    #[test]
    fn metrics_boundaries() {
        let env_spec = EnvSpec::with_episode_len(EnvId::ChainVel1D, 4);
        let mut ep = Episode::new(1, 1, &[0.0]);
        for _ in 0..4 {
            let r = env::step(&env_spec, ep.state(ep.len()), &[0.2]).unwrap();
            ep.push(&[0.2], &r);
        }
        let rec = EpisodeRecord {
            seed: 0,
            variant: Variant::Sdgd,
            schedule: BudgetSchedule::constant(1.0, 4).unwrap(),
            piece_costs: vec![ep.total_cost()],
            episode: ep,
            replans: Vec::new(),
        };
        let ret = rec.total_return();
        let cost = rec.total_cost();
        let m = normalized_metrics(core::slice::from_ref(&rec), cost, ret - 1.0, ret + 1.0).unwrap();
        assert_eq!(m.normalized_cost, 1.0);
        assert_eq!(m.normalized_reward, 0.5);
        assert_eq!(normalized_metrics(core::slice::from_ref(&rec), 1.0, ret, ret + 2.0).unwrap().normalized_reward, 0.0);
        assert_eq!(normalized_metrics(core::slice::from_ref(&rec), 1.0, ret - 2.0, ret).unwrap().normalized_reward, 1.0);
        let raw = normalized_metrics(core::slice::from_ref(&rec), 0.0, 0.0, 1.0).unwrap();
        assert!(raw.cost_is_raw && raw.normalized_cost == cost);
        assert!(normalized_metrics(&[], 1.0, 0.0, 1.0).is_err());
    }
}
