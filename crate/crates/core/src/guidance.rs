//! Score composition: classifier-free guidance over cost limits, reward
//! classifier guidance on relabeled returns, the diagnostic cost regressor and
//! the swapped-role baseline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::approx::{Mlp, NetSpec, Tape};
use crate::dataset::{Condition, Dataset};
use crate::diffusion::{
    eps_to_score, fit, q_sample, regression_loss, step_embedding, Denoiser, GuidanceHook, HookInput, LossPoint,
    NoisePredictor, NoiseSchedule, TrainConfig, STEP_EMBED_DIM,
};
use crate::error::check_dim;
use crate::math;
use crate::{Error, Result};

pub const DEFAULT_W: f64 = 4.0;
pub const DEFAULT_LAMBDA: f64 = 0.04;
/// Every `HOLDOUT_EVERY`-th segment is held out from regressor training.
pub const HOLDOUT_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub w: f64,
    pub lambda: f64,
    pub feasible_len: usize,
    /// `None` resolves to the dataset's bound with margin.
    pub r_us: Option<f64>,
    pub p_uncond: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            w: DEFAULT_W,
            lambda: DEFAULT_LAMBDA,
            feasible_len: crate::dataset::DEFAULT_FEASIBLE_LEN,
            r_us: None,
            p_uncond: crate::dataset::DEFAULT_P_UNCOND,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.w >= 0.0) {
            return Err(Error::invalid(format!("w must be >= 0, got {}", self.w)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.feasible_len < 1 || self.feasible_len > horizon {
            return Err(Error::invalid(format!("f must lie in [1, {horizon}], got {}", self.feasible_len)));
        }
        if let Some(r) = self.r_us {
            if !(r < 0.0) {
                return Err(Error::invalid(format!("r_us must be < 0, got {r}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::invalid(format!("p_uncond must lie in [0, 1], got {}", self.p_uncond)));
        }
        Ok(())
    }
}

/// `(1+w)·s_c − w·s_u`.
pub fn combine_cfg(score_cond: &[f64], score_uncond: &[f64], w: f64) -> Vec<f64> {
    score_cond.iter().zip(score_uncond).map(|(c, u)| (1.0 + w) * c - w * u).collect()
}

pub fn cfg_score(denoiser: &dyn NoisePredictor, schedule: &NoiseSchedule, x: &[f64], s: usize, cond: Condition, w: f64) -> Vec<f64> {
    let sc = eps_to_score(schedule, &denoiser.predict_eps(x, s, cond), s);
    let su = eps_to_score(schedule, &denoiser.predict_eps(x, s, Condition::Null), s);
    combine_cfg(&sc, &su, w)
}

/// Scalar regressor on noisy segments `[x_s, step embedding]`. The network
/// fits standardized targets; outputs are mapped back to target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyRegressor {
    pub net: Mlp,
    pub n_steps: usize,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NoisyRegressor {
    pub fn new(sample_dim: usize, n_steps: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = NetSpec::new(sample_dim + STEP_EMBED_DIM, 1, hidden)?;
        Ok(NoisyRegressor { net: Mlp::new(spec, seed)?, n_steps, target_mean: 0.0, target_std: 1.0 })
    }

    pub fn sample_dim(&self) -> usize {
        self.net.spec.input_dim - STEP_EMBED_DIM
    }

    fn inputs(&self, x: &[f64], s: usize) -> Vec<f64> {
        let d = self.sample_dim();
        let emb = step_embedding(s, self.n_steps);
        let mut input = Vec::with_capacity(x.len() / d * self.net.spec.input_dim);
        for row in x.chunks_exact(d) {
            input.extend_from_slice(row);
            input.extend_from_slice(&emb);
        }
        input
    }

    /// Predictions for a row-major batch at step `s`.
    pub fn predict_batch(&self, x: &[f64], s: usize) -> Vec<f64> {
        let batch = x.len() / self.sample_dim();
        let out = self.net.forward_batch(&self.inputs(x, s), batch, &mut Tape::default()).expect("regressor input shape");
        out.iter().map(|y| self.target_mean + self.target_std * y).collect()
    }

    pub fn predict(&self, x: &[f64], s: usize) -> f64 {
        self.predict_batch(x, s)[0]
    }

    /// Predictions and input gradients (sample coordinates only) for a batch.
    pub fn predict_grad_batch(&self, x: &[f64], s: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.sample_dim();
        let batch = x.len() / d;
        let mut tape = Tape::default();
        let out = self.net.forward_batch(&self.inputs(x, s), batch, &mut tape).expect("regressor input shape");
        let full = self.net.backward_batch(&tape, &vec![self.target_std; batch], None, true).expect("batch shape").expect("input grads");
        let width = self.net.spec.input_dim;
        let grads = full.chunks_exact(width).flat_map(|r| r[..d].iter().copied()).collect();
        (out.iter().map(|y| self.target_mean + self.target_std * y).collect(), grads)
    }

    pub fn gradient(&self, x: &[f64], s: usize) -> Vec<f64> {
        self.predict_grad_batch(x, s).1
    }
}

/// Per-step and pooled held-out mean-squared error of a regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub mse: f64,
    /// Index `s − 1` holds the MSE at diffusion step `s`.
    pub mse_by_step: Vec<f64>,
    pub count: usize,
}

/// Train and held-out segment indices.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % HOLDOUT_EVERY != HOLDOUT_EVERY - 1)
}

/// Fit a noisy regressor to per-segment targets on normalized segments.
pub fn train_regressor(
    segments: &[Vec<f64>],
    targets: &[f64],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(NoisyRegressor, Vec<LossPoint>, HeldOutReport)> {
    check_dim(segments.len(), targets.len())?;
    let dim = segments.first().ok_or_else(|| Error::invalid("no segments to regress on"))?.len();
    let (train, held) = split_indices(segments.len());
    let train = if train.is_empty() { held.clone() } else { train };
    let train_targets: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let mut model = NoisyRegressor::new(dim, schedule.n(), config.hidden.clone(), config.seed)?;
    model.target_mean = crate::stats::mean(&train_targets);
    model.target_std = crate::stats::std_dev(&train_targets).max(1e-6);
    let (mean, std, n_steps) = (model.target_mean, model.target_std, model.n_steps);
    let mut eps = vec![0.0; dim];
    let trace = fit(&mut model.net, config, |net, rng| {
        let mut inputs = Vec::with_capacity(config.batch * net.spec.input_dim);
        let mut ys = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let i = train[rng.random_range(0..train.len())];
            let s = rng.random_range(1..=schedule.n());
            math::fill_normal(rng, &mut eps);
            inputs.extend_from_slice(&q_sample(schedule, &segments[i], s, &eps)?);
            inputs.extend_from_slice(&step_embedding(s, n_steps));
            ys.push((targets[i] - mean) / std);
        }
        Ok(regression_loss(net, &inputs, &ys, config.batch))
    })?;
    let report = held_out_mse(&model, segments, targets, &held, schedule, config.seed);
    Ok((model, trace, report))
}

/// Held-out MSE at every step with fixed per-step noise.
pub fn held_out_mse(
    model: &NoisyRegressor,
    segments: &[Vec<f64>],
    targets: &[f64],
    held: &[usize],
    schedule: &NoiseSchedule,
    seed: u64,
) -> HeldOutReport {
    let mut by_step = Vec::with_capacity(schedule.n());
    if held.is_empty() {
        return HeldOutReport { mse: f64::NAN, mse_by_step: vec![f64::NAN; schedule.n()], count: 0 };
    }
    let dim = model.sample_dim();
    let mut rng = math::substream(seed, 2);
    let mut eps = vec![0.0; dim];
    for s in 1..=schedule.n() {
        let mut x = Vec::with_capacity(held.len() * dim);
        for &i in held {
            math::fill_normal(&mut rng, &mut eps);
            x.extend(q_sample(schedule, &segments[i], s, &eps).expect("segment dims"));
        }
        let pred = model.predict_batch(&x, s);
        let mse = pred.iter().zip(held).map(|(p, &i)| (p - targets[i]) * (p - targets[i])).sum::<f64>() / held.len() as f64;
        by_step.push(mse);
    }
    HeldOutReport { mse: crate::stats::mean(&by_step), mse_by_step: by_step, count: held.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMode {
    /// Regress relabeled returns `R̂`.
    Ftr,
    /// Regress raw returns (drift ablation only).
    Raw,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Ftr => "ftr",
            RewardMode::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub mode: RewardMode,
    pub feasible_len: usize,
    pub r_us: f64,
    pub regressor: NoisyRegressor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub regressor: NoisyRegressor,
}

/// The regression targets for a reward model: `R̂` labels or raw returns.
pub fn reward_targets(dataset: &Dataset, mode: RewardMode) -> Vec<f64> {
    dataset
        .labels
        .iter()
        .map(|l| match mode {
            RewardMode::Ftr => l.r_hat,
            RewardMode::Raw => l.ret,
        })
        .collect()
}

pub fn train_reward_model(
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    mode: RewardMode,
    config: &TrainConfig,
) -> Result<(RewardModel, Vec<LossPoint>, HeldOutReport)> {
    let targets = reward_targets(dataset, mode);
    let (regressor, trace, report) = train_regressor(&dataset.normalized, &targets, schedule, config)?;
    let model = RewardModel { mode, feasible_len: dataset.config.feasible_len, r_us: dataset.r_us, regressor };
    Ok((model, trace, report))
}

pub fn train_cost_model(dataset: &Dataset, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<(CostModel, Vec<LossPoint>, HeldOutReport)> {
    let targets: Vec<f64> = dataset.labels.iter().map(|l| l.cost).collect();
    let (regressor, trace, report) = train_regressor(&dataset.normalized, &targets, schedule, config)?;
    Ok((CostModel { regressor }, trace, report))
}

/// `∇_x R_φ(x, s)`; the caller applies `λ`.
pub fn reward_gradient(model: &RewardModel, x: &[f64], s: usize) -> Vec<f64> {
    model.regressor.gradient(x, s)
}

/// `cfg_score + λ·∇R_φ`.
#[allow(clippy::too_many_arguments)]
pub fn sdgd_score(
    denoiser: &dyn NoisePredictor,
    reward: &RewardModel,
    schedule: &NoiseSchedule,
    x: &[f64],
    s: usize,
    cond: Condition,
    w: f64,
    lambda: f64,
) -> Vec<f64> {
    let cfg = cfg_score(denoiser, schedule, x, s, cond, w);
    let grad = reward_gradient(reward, x, s);
    cfg.iter().zip(&grad).map(|(c, g)| c + lambda * g).collect()
}

/// Gradient of `max(0, C_ψ(x, s) − l)`; zero when the hinge is inactive.
pub fn hinge_gradient(cost: &CostModel, x: &[f64], s: usize, limit: f64) -> Vec<f64> {
    let (pred, grad) = cost.regressor.predict_grad_batch(x, s);
    if pred[0] > limit {
        grad
    } else {
        vec![0.0; x.len()]
    }
}

/// Swapped roles: CFG on a return condition, cost classifier guidance through
/// a hinge on the limit.
#[allow(clippy::too_many_arguments)]
pub fn swapped_score(
    return_denoiser: &dyn NoisePredictor,
    cost: &CostModel,
    schedule: &NoiseSchedule,
    x: &[f64],
    s: usize,
    target_return: Condition,
    limit: f64,
    w: f64,
    lambda: f64,
) -> Vec<f64> {
    let cfg = cfg_score(return_denoiser, schedule, x, s, target_return, w);
    let hinge = hinge_gradient(cost, x, s, limit);
    cfg.iter().zip(&hinge).map(|(c, h)| c - lambda * h).collect()
}

/// `w·(s_c − s_u)` for a batch, writing into `out`; skips the unconditional
/// pass when `w = 0`.
fn cfg_adjustment(denoiser: &dyn NoisePredictor, schedule: &NoiseSchedule, input: &HookInput<'_>, w: f64, out: &mut [f64]) {
    if w == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let nulls = vec![Condition::Null; input.batch()];
    let eps_u = denoiser.predict_eps_batch(input.x, input.s, &nulls);
    let k = schedule.noise_scale(input.s);
    for ((o, c), u) in out.iter_mut().zip(input.eps_cond).zip(&eps_u) {
        *o = w * (-c / k + u / k);
    }
}

/// Sampler hook realizing the SDGD score: the adjustment beyond the
/// conditional prediction, `w·(s_c − s_u) + λ·∇R_φ`.
pub struct SdgdHook<'a> {
    pub denoiser: &'a dyn NoisePredictor,
    pub schedule: &'a NoiseSchedule,
    pub reward: Option<&'a RewardModel>,
    pub w: f64,
    pub lambda: f64,
}

impl GuidanceHook for SdgdHook<'_> {
    fn adjustment(&self, input: &HookInput<'_>, out: &mut [f64]) {
        cfg_adjustment(self.denoiser, self.schedule, input, self.w, out);
        if let (Some(reward), true) = (self.reward, self.lambda != 0.0) {
            let grad = reward.regressor.predict_grad_batch(input.x, input.s).1;
            for (o, g) in out.iter_mut().zip(&grad) {
                *o += self.lambda * g;
            }
        }
    }
}

/// Sampler hook for the swapped baseline; `limits` holds one raw cost limit
/// per batch row.
pub struct SwappedHook<'a> {
    pub denoiser: &'a dyn NoisePredictor,
    pub schedule: &'a NoiseSchedule,
    pub cost: &'a CostModel,
    pub limits: Vec<f64>,
    pub w: f64,
    pub lambda: f64,
}

impl GuidanceHook for SwappedHook<'_> {
    fn adjustment(&self, input: &HookInput<'_>, out: &mut [f64]) {
        cfg_adjustment(self.denoiser, self.schedule, input, self.w, out);
        if self.lambda == 0.0 {
            return;
        }
        let d = input.dim();
        let (pred, grad) = self.cost.regressor.predict_grad_batch(input.x, input.s);
        for (r, (p, l)) in pred.iter().zip(&self.limits).enumerate() {
            if p > l {
                for (o, g) in out[r * d..(r + 1) * d].iter_mut().zip(&grad[r * d..(r + 1) * d]) {
                    *o -= self.lambda * g;
                }
            }
        }
    }
}

/// Shape check shared by planners: every model must agree on the sample dimension.
pub fn check_models(denoiser: &Denoiser, reward: Option<&RewardModel>, dim: usize) -> Result<()> {
    check_dim(dim, denoiser.sample_dim())?;
    if let Some(r) = reward {
        check_dim(dim, r.regressor.sample_dim())?;
    }
    Ok(())
}
