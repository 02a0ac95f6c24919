//! Coupled-sampler cost drift, alignment estimation, cost-classifier
//! correlation and rollout-error comparison.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::approx::{Mlp, NetSpec};
use crate::dataset::{normalize_limit, Condition, Dataset, DatasetStats, Segment};
use crate::diffusion::{fit, predict_x0, q_sample, regression_loss, sample_batch, Denoiser, Inpaint, LossPoint, NoiseSchedule, NoiseSequence, NoisePredictor, SampleRequest, TrainConfig};
use crate::env::{self, EnvSpec};
use crate::error::check_dim;
use crate::guidance::{CostModel, RewardModel, SdgdHook};
use crate::math::{self, mix_seed, sigmoid};
use crate::stats::{self, SignTest};
use crate::{Error, Result};

/// Sharpness and midpoint of the prefix-infeasibility surrogate.
pub const INFEASIBILITY_SHARPNESS: f64 = 10.0;
pub const INFEASIBILITY_MIDPOINT: f64 = 0.5;

/// Realized cost of a plan: its actions re-simulated from `start` for the
/// plan's horizon.
pub fn resimulated_cost(env_spec: &EnvSpec, start: &[f64], plan: &Segment) -> Result<f64> {
    let mut state = start.to_vec();
    let mut cost = 0.0;
    for t in 0..plan.horizon() {
        let r = env::step(env_spec, &state, plan.action(t))?;
        cost += r.cost;
        state = r.next_state;
    }
    Ok(cost)
}

/// Settings shared by the drift and alignment experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledConfig {
    pub limit: f64,
    pub w: f64,
    pub lambda: f64,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTrial {
    pub trial: usize,
    pub seed: u64,
    pub cost_c: f64,
    pub cost_r: f64,
    pub cost_r_hat: f64,
}

impl DriftTrial {
    pub fn delta_r(&self) -> f64 {
        self.cost_r - self.cost_c
    }

    pub fn delta_r_hat(&self) -> f64 {
        self.cost_r_hat - self.cost_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub trials: Vec<DriftTrial>,
    pub mean_delta_r: f64,
    pub mean_delta_r_hat: f64,
    /// Mean and standard error of `ΔC_R̂ − ΔC_R`.
    pub mean_paired_diff: f64,
    pub se_paired_diff: f64,
    pub sign_negatives: u64,
    pub sign_positives: u64,
    pub sign_ties: u64,
    /// One-sided sign-test p-value against `mean(ΔC_R̂) ≥ mean(ΔC_R)`.
    pub p_value: f64,
}

impl DriftReport {
    fn from_trials(trials: Vec<DriftTrial>) -> Self {
        let dr: Vec<f64> = trials.iter().map(DriftTrial::delta_r).collect();
        let drh: Vec<f64> = trials.iter().map(DriftTrial::delta_r_hat).collect();
        let diffs: Vec<f64> = drh.iter().zip(&dr).map(|(a, b)| a - b).collect();
        let SignTest { negatives, positives, ties, p_value } = stats::sign_test_negative(&diffs);
        DriftReport {
            mean_delta_r: stats::mean(&dr),
            mean_delta_r_hat: stats::mean(&drh),
            mean_paired_diff: stats::mean(&diffs),
            se_paired_diff: stats::std_err(&diffs),
            sign_negatives: negatives,
            sign_positives: positives,
            sign_ties: ties,
            p_value,
            trials,
        }
    }
}

/// Requests for coupled trials: trial `i` starts from `starts[i % len]` with
/// noise drawn from `mix_seed(seed, i)`.
fn coupled_requests(
    schedule: &NoiseSchedule,
    stats: &DatasetStats,
    dim: usize,
    starts: &[Vec<f64>],
    cond: Condition,
    config: &CoupledConfig,
) -> Vec<SampleRequest> {
    (0..config.n_trials)
        .map(|i| {
            let seed = mix_seed(config.seed, i as u64);
            let start = &starts[i % starts.len()];
            let pinned: Vec<f64> = start.iter().enumerate().map(|(j, v)| (v - stats.state_mean[j]) / stats.state_std[j]).collect();
            SampleRequest::new(cond, seed)
                .with_inpaint(Inpaint::prefix(&pinned))
                .with_noise(NoiseSequence::draw(dim, schedule.n(), seed))
        })
        .collect()
}

/// Three coupled samplers sharing one denoiser and all sampling randomness:
/// cost-conditioned only, plus raw-return guidance, plus relabeled-return
/// guidance. Costs are measured by re-simulating each plan's actions.
#[allow(clippy::too_many_arguments)]
pub fn coupled_drift_experiment(
    env_spec: &EnvSpec,
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    stats: &DatasetStats,
    raw_reward: &RewardModel,
    ftr_reward: &RewardModel,
    starts: &[Vec<f64>],
    config: &CoupledConfig,
) -> Result<DriftReport> {
    if config.n_trials < 2 {
        return Err(Error::invalid("drift experiment needs at least two trials"));
    }
    if starts.is_empty() {
        return Err(Error::invalid("no start states"));
    }
    let dim = denoiser.sample_dim();
    let cond = Condition::Value(normalize_limit(config.limit, stats.c_max_seg));
    let requests = coupled_requests(schedule, stats, dim, starts, cond, config);
    let mut costs = Vec::with_capacity(3);
    for reward in [None, Some(raw_reward), Some(ftr_reward)] {
        let hook = SdgdHook { denoiser, schedule, reward, w: config.w, lambda: config.lambda };
        let samples = sample_batch(schedule, denoiser, &requests, &hook, &mut |_| {})?;
        let c = samples
            .iter()
            .enumerate()
            .map(|(i, flat)| resimulated_cost(env_spec, &starts[i % starts.len()], &crate::dataset::denormalize(flat, stats)?))
            .collect::<Result<Vec<f64>>>()?;
        costs.push(c);
    }
    let trials = (0..config.n_trials)
        .map(|i| DriftTrial {
            trial: i,
            seed: mix_seed(config.seed, i as u64),
            cost_c: costs[0][i],
            cost_r: costs[1][i],
            cost_r_hat: costs[2][i],
        })
        .collect();
    Ok(DriftReport::from_trials(trials))
}

/// `C̃(τ) = Σ_t smooth_cost(state_t)` on a normalized flat segment, with its
/// gradient with respect to the flat coordinates.
pub fn surrogate_cost(env_spec: &EnvSpec, stats: &DatasetStats, flat: &[f64]) -> (f64, Vec<f64>) {
    prefix_smooth_cost(env_spec, stats, flat, usize::MAX)
}

fn prefix_smooth_cost(env_spec: &EnvSpec, stats: &DatasetStats, flat: &[f64], prefix: usize) -> (f64, Vec<f64>) {
    let sd = env_spec.state_dim;
    let width = sd + env_spec.action_dim;
    let mut grad = vec![0.0; flat.len()];
    let mut total = 0.0;
    let mut state = vec![0.0; sd];
    let mut g = vec![0.0; sd];
    for (t, row) in flat.chunks_exact(width).enumerate().take(prefix) {
        for i in 0..sd {
            state[i] = stats.state_mean[i] + stats.state_std[i] * row[i];
        }
        total += env::smooth_cost_grad(env_spec, &state, &mut g);
        for i in 0..sd {
            grad[t * width + i] = g[i] * stats.state_std[i];
        }
    }
    (total, grad)
}

/// `h̃_f(τ) = σ(10·Σ_{t<f} smooth_cost(state_t) − 5)` and its gradient.
pub fn surrogate_infeasibility(env_spec: &EnvSpec, stats: &DatasetStats, flat: &[f64], f: usize) -> (f64, Vec<f64>) {
    let (prefix, mut grad) = prefix_smooth_cost(env_spec, stats, flat, f);
    let h = sigmoid(INFEASIBILITY_SHARPNESS * (prefix - INFEASIBILITY_MIDPOINT));
    let scale = INFEASIBILITY_SHARPNESS * h * (1.0 - h);
    grad.iter_mut().for_each(|g| *g *= scale);
    (h, grad)
}

/// `⟨∇C̃, ∇h̃_f⟩` at a normalized flat segment.
pub fn alignment_term(env_spec: &EnvSpec, stats: &DatasetStats, flat: &[f64], f: usize) -> f64 {
    let (_, gc) = surrogate_cost(env_spec, stats, flat);
    let (_, gh) = surrogate_infeasibility(env_spec, stats, flat, f);
    math::dot(&gc, &gh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrial {
    pub trial: usize,
    pub seed: u64,
    /// Index `s − 1` holds `a_s`.
    pub per_step: Vec<f64>,
    pub a_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub trials: Vec<AlignmentTrial>,
    pub mean_a_hat: f64,
    pub se_a_hat: f64,
    pub fraction_positive: f64,
}

/// Alignment along cost-conditioned chains (`λ = 0`), evaluated on the
/// decoded `x̂₀` estimate at each step with uniform step weights.
#[allow(clippy::too_many_arguments)]
pub fn estimate_alignment(
    env_spec: &EnvSpec,
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    stats: &DatasetStats,
    feasible_len: usize,
    starts: &[Vec<f64>],
    config: &CoupledConfig,
) -> Result<AlignmentReport> {
    if starts.is_empty() || config.n_trials == 0 {
        return Err(Error::invalid("alignment needs start states and trials"));
    }
    let dim = denoiser.sample_dim();
    let cond = Condition::Value(normalize_limit(config.limit, stats.c_max_seg));
    let requests = coupled_requests(schedule, stats, dim, starts, cond, config);
    let hook = SdgdHook { denoiser, schedule, reward: None, w: config.w, lambda: 0.0 };
    let n = schedule.n();
    let mut per_step = vec![vec![0.0; n]; config.n_trials];
    sample_batch(schedule, denoiser, &requests, &hook, &mut |trace| {
        let x0 = predict_x0(schedule, trace.x_s, trace.eps_hat, trace.s);
        for (i, row) in x0.chunks_exact(dim).enumerate() {
            per_step[i][trace.s - 1] = alignment_term(env_spec, stats, row, feasible_len);
        }
    })?;
    let trials: Vec<AlignmentTrial> = per_step
        .into_iter()
        .enumerate()
        .map(|(i, a)| AlignmentTrial { trial: i, seed: mix_seed(config.seed, i as u64), a_hat: a.iter().sum(), per_step: a })
        .collect();
    let a: Vec<f64> = trials.iter().map(|t| t.a_hat).collect();
    Ok(AlignmentReport {
        mean_a_hat: stats::mean(&a),
        se_a_hat: stats::std_err(&a),
        fraction_positive: a.iter().filter(|v| **v > 0.0).count() as f64 / a.len() as f64,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// Index `s − 1` holds the Pearson r at step `s`, `None` when undefined.
    pub pearson: Vec<Option<f64>>,
    /// Spearman correlation between r and s over the defined points.
    pub spearman_r_vs_s: Option<f64>,
}

/// Pearson correlation between predicted and true cost on noised held-out
/// segments, at every diffusion step.
pub fn cost_classifier_correlation(
    cost: &CostModel,
    segments: &[Vec<f64>],
    true_costs: &[f64],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<CorrelationCurve> {
    check_dim(segments.len(), true_costs.len())?;
    let dim = cost.regressor.sample_dim();
    let mut rng = math::substream(seed, 3);
    let mut eps = vec![0.0; dim];
    let mut pearson = Vec::with_capacity(schedule.n());
    for s in 1..=schedule.n() {
        let mut x = Vec::with_capacity(segments.len() * dim);
        for seg in segments {
            math::fill_normal(&mut rng, &mut eps);
            x.extend(q_sample(schedule, seg, s, &eps)?);
        }
        pearson.push(stats::pearson(&cost.regressor.predict_batch(&x, s), true_costs));
    }
    let (steps, rs): (Vec<f64>, Vec<f64>) =
        pearson.iter().enumerate().filter_map(|(i, r)| r.map(|r| ((i + 1) as f64, r))).unzip();
    Ok(CorrelationCurve { spearman_r_vs_s: stats::spearman(&rs, &steps), pearson })
}

/// One-step model `(state, action) → next state` in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub net: Mlp,
    pub stats: DatasetStats,
}

impl DynamicsModel {
    fn encode(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut row: Vec<f64> = state.iter().enumerate().map(|(i, v)| (v - self.stats.state_mean[i]) / self.stats.state_std[i]).collect();
        row.extend(action.iter().enumerate().map(|(i, v)| (v - self.stats.action_mean[i]) / self.stats.action_std[i]));
        row
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let out = self.net.forward(&self.encode(state, action)).expect("dynamics input shape");
        out.iter().enumerate().map(|(i, v)| self.stats.state_mean[i] + self.stats.state_std[i] * v).collect()
    }
}

pub fn train_dynamics(dataset: &Dataset, config: &TrainConfig) -> Result<(DynamicsModel, Vec<LossPoint>)> {
    let sd = dataset.env.state_dim;
    let ad = dataset.env.action_dim;
    let spec = NetSpec::new(sd + ad, sd, config.hidden.clone())?;
    let mut model = DynamicsModel { net: Mlp::new(spec, config.seed)?, stats: dataset.stats.clone() };
    let mut inputs_all = Vec::new();
    let mut targets_all = Vec::new();
    for ep in &dataset.episodes {
        for t in 0..ep.len() {
            inputs_all.push(model.encode(ep.state(t), ep.action(t)));
            targets_all.push(ep.state(t + 1).iter().enumerate().map(|(i, v)| (v - model.stats.state_mean[i]) / model.stats.state_std[i]).collect::<Vec<f64>>());
        }
    }
    if inputs_all.is_empty() {
        return Err(Error::invalid("no transitions to fit"));
    }
    let trace = fit(&mut model.net, config, |net, rng| {
        let mut inputs = Vec::with_capacity(config.batch * (sd + ad));
        let mut targets = Vec::with_capacity(config.batch * sd);
        for _ in 0..config.batch {
            let i = rng.random_range(0..inputs_all.len());
            inputs.extend_from_slice(&inputs_all[i]);
            targets.extend_from_slice(&targets_all[i]);
        }
        Ok(regression_loss(net, &inputs, &targets, config.batch))
    })?;
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutErrorRow {
    pub horizon: usize,
    pub autoregressive: f64,
    pub joint: f64,
}

/// Mean L2 state error at each horizon for autoregressive dynamics-model
/// rollouts and for jointly generated segments, from the given dataset
/// segments' start states. Joint samples are unconditional.
pub fn rollout_error_experiment(
    env_spec: &EnvSpec,
    dynamics: &DynamicsModel,
    schedule: &NoiseSchedule,
    denoiser: &Denoiser,
    stats: &DatasetStats,
    segments: &[Segment],
    horizons: &[usize],
    seed: u64,
) -> Result<Vec<RolloutErrorRow>> {
    let horizon = segments.first().ok_or_else(|| Error::invalid("no segments"))?.horizon();
    if let Some(h) = horizons.iter().find(|&&h| h >= horizon) {
        return Err(Error::invalid(alloc::format!("horizon {h} must be below the segment length {horizon}")));
    }
    let requests: Vec<SampleRequest> = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let pinned: Vec<f64> = seg.state(0).iter().enumerate().map(|(j, v)| (v - stats.state_mean[j]) / stats.state_std[j]).collect();
            SampleRequest::new(Condition::Null, mix_seed(seed, i as u64)).with_inpaint(Inpaint::prefix(&pinned))
        })
        .collect();
    let samples = sample_batch(schedule, denoiser, &requests, &crate::diffusion::NoGuidance, &mut |_| {})?;
    let plans = samples.iter().map(|flat| crate::dataset::denormalize(flat, stats)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut ar = Vec::with_capacity(segments.len());
        let mut joint = Vec::with_capacity(segments.len());
        for (seg, plan) in segments.iter().zip(&plans) {
            let mut pred = seg.state(0).to_vec();
            for t in 0..h {
                pred = dynamics.predict(&pred, seg.action(t));
            }
            ar.push(l2(&pred, seg.state(h)));
            let mut truth = seg.state(0).to_vec();
            for t in 0..h {
                truth = env::step(env_spec, &truth, plan.action(t))?.next_state;
            }
            joint.push(l2(plan.state(h), &truth));
        }
        rows.push(RolloutErrorRow { horizon: h, autoregressive: stats::mean(&ar), joint: stats::mean(&joint) });
    }
    Ok(rows)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}
