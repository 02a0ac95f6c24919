//! DDPM forward noising, ε-prediction training with cost-limit conditioning
//! and a null token, and ancestral sampling with a score-space guidance hook
//! and inpainting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::approx::{adam_step, AdamState, Mlp, NetSpec, Tape, DEFAULT_HIDDEN};
use crate::dataset::{Condition, ConditionedBatch, Dataset};
use crate::error::check_dim;
use crate::math::{self, sqrt};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 100;
pub const STEP_EMBED_DIM: usize = 16;
pub const COND_EMBED_DIM: usize = 2;
const BETA_START: f64 = 1e-4;
const BETA_END: f64 = 0.02;
/// Reference chain length the β endpoints are quoted for.
const REFERENCE_STEPS: f64 = 1000.0;
const MAX_BETA: f64 = 0.999;

/// Variance schedule, indexed by diffusion step `s ∈ 1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    n: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_var: Vec<f64>,
}

/// Linear β schedule. The endpoints `1e-4 → 0.02` are those of a 1000-step
/// chain; for shorter chains they are scaled by `1000/N` so that `ᾱ_N ≈ 0`
/// and the reverse chain can start from `𝒩(0, I)`.
pub fn make_schedule(n: usize) -> Result<NoiseSchedule> {
    if n < 1 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    let scale = (REFERENCE_STEPS / n as f64).max(1.0);
    let betas: Vec<f64> = (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            (scale * (BETA_START + (BETA_END - BETA_START) * frac)).min(MAX_BETA)
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("betas must lie in (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let posterior_var = (0..betas.len())
            .map(|i| if i == 0 { betas[0] } else { betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i]) })
            .collect();
        Ok(NoiseSchedule { n: betas.len(), betas, alpha_bars, posterior_var })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self, s: usize) -> f64 {
        self.betas[s - 1]
    }

    pub fn alpha(&self, s: usize) -> f64 {
        1.0 - self.betas[s - 1]
    }

    /// `ᾱ_s`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, s: usize) -> f64 {
        if s == 0 {
            1.0
        } else {
            self.alpha_bars[s - 1]
        }
    }

    /// Posterior variance `σ_s²`.
    pub fn sigma2(&self, s: usize) -> f64 {
        self.posterior_var[s - 1]
    }

    pub fn noise_scale(&self, s: usize) -> f64 {
        sqrt(1.0 - self.alpha_bar(s))
    }
}

/// `√ᾱ_s·x0 + √(1−ᾱ_s)·ε`. Step `0` is the identity.
pub fn q_sample(schedule: &NoiseSchedule, x0: &[f64], s: usize, eps: &[f64]) -> Result<Vec<f64>> {
    if s > schedule.n() {
        return Err(Error::invalid(format!("diffusion step {s} outside [0, {}]", schedule.n())));
    }
    check_dim(x0.len(), eps.len())?;
    let a = sqrt(schedule.alpha_bar(s));
    let b = schedule.noise_scale(s);
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn eps_to_score(schedule: &NoiseSchedule, eps: &[f64], s: usize) -> Vec<f64> {
    let k = schedule.noise_scale(s);
    eps.iter().map(|e| -e / k).collect()
}

pub fn score_to_eps(schedule: &NoiseSchedule, score: &[f64], s: usize) -> Vec<f64> {
    let k = schedule.noise_scale(s);
    score.iter().map(|g| -g * k).collect()
}

/// Sinusoidal features of `s/N` at octave frequencies `π·2^k`.
pub fn step_embedding(s: usize, n: usize) -> [f64; STEP_EMBED_DIM] {
    let t = s as f64 / n as f64;
    let mut out = [0.0; STEP_EMBED_DIM];
    let mut freq = core::f64::consts::PI;
    for k in 0..STEP_EMBED_DIM / 2 {
        out[2 * k] = libm::sin(freq * t);
        out[2 * k + 1] = libm::cos(freq * t);
        freq *= 2.0;
    }
    out
}

/// `[l, 1]` for a condition, `[0, 0]` for the null token.
pub fn condition_embedding(cond: Condition) -> [f64; COND_EMBED_DIM] {
    match cond {
        Condition::Value(l) => [l, 1.0],
        Condition::Null => [0.0, 0.0],
    }
}

/// Anything that predicts the injected noise: a trained network or an
/// analytic oracle.
pub trait NoisePredictor {
    fn sample_dim(&self) -> usize;

    /// Predictions for a row-major batch, one condition per row.
    fn predict_eps_batch(&self, x: &[f64], s: usize, conds: &[Condition]) -> Vec<f64>;

    fn predict_eps(&self, x: &[f64], s: usize, cond: Condition) -> Vec<f64> {
        self.predict_eps_batch(x, s, &[cond])
    }

    /// Leading coordinates the model saw clean (unnoised) during training.
    /// Inpainted values there are written clean; elsewhere they are forward-noised.
    fn clean_prefix(&self) -> usize {
        0
    }

    /// Symmetric bound on the per-step clean estimate `x̂₀`; `None` leaves it free.
    fn x0_bound(&self) -> Option<f64> {
        None
    }
}

/// ε-prediction network over `[x, step embedding, condition embedding]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub net: Mlp,
    pub n_steps: usize,
    #[serde(default)]
    pub clean_prefix: usize,
    #[serde(default)]
    pub x0_bound: Option<f64>,
}

impl Denoiser {
    pub fn input_dim(sample_dim: usize) -> usize {
        sample_dim + STEP_EMBED_DIM + COND_EMBED_DIM
    }

    pub fn new(sample_dim: usize, n_steps: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = NetSpec::new(Self::input_dim(sample_dim), sample_dim, hidden)?;
        Ok(Denoiser { net: Mlp::new(spec, seed)?, n_steps, clean_prefix: 0, x0_bound: None })
    }

    pub fn from_net(net: Mlp, n_steps: usize) -> Result<Self> {
        if net.spec.input_dim != Self::input_dim(net.spec.output_dim) {
            return Err(Error::invalid("denoiser input must be sample + step and condition embeddings"));
        }
        Ok(Denoiser { net, n_steps, clean_prefix: 0, x0_bound: None })
    }

    pub fn with_clean_prefix(mut self, k: usize) -> Result<Self> {
        if k > self.net.spec.output_dim {
            return Err(Error::invalid("clean prefix longer than the sample"));
        }
        self.clean_prefix = k;
        Ok(self)
    }

    pub fn with_x0_bound(mut self, bound: Option<f64>) -> Result<Self> {
        if bound.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("x0 bound must be positive"));
        }
        self.x0_bound = bound;
        Ok(self)
    }

    pub fn input_row(&self, x: &[f64], s: usize, cond: Condition) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.net.spec.input_dim);
        row.extend_from_slice(x);
        row.extend_from_slice(&step_embedding(s, self.n_steps));
        row.extend_from_slice(&condition_embedding(cond));
        row
    }
}

impl NoisePredictor for Denoiser {
    fn sample_dim(&self) -> usize {
        self.net.spec.output_dim
    }

    fn predict_eps_batch(&self, x: &[f64], s: usize, conds: &[Condition]) -> Vec<f64> {
        let d = self.sample_dim();
        let mut input = Vec::with_capacity(conds.len() * self.net.spec.input_dim);
        for (row, cond) in x.chunks_exact(d).zip(conds) {
            input.extend_from_slice(row);
            input.extend_from_slice(&step_embedding(s, self.n_steps));
            input.extend_from_slice(&condition_embedding(*cond));
        }
        self.net.forward_batch(&input, conds.len(), &mut Tape::default()).expect("denoiser input shape")
    }

    fn clean_prefix(&self) -> usize {
        self.clean_prefix
    }

    fn x0_bound(&self) -> Option<f64> {
        self.x0_bound
    }
}

/// The exact ε for standard-normal data: `ε = x_s·√(1−ᾱ_s)`, i.e. score `−x_s`.
#[derive(Debug, Clone)]
pub struct StandardNormalOracle {
    pub schedule: NoiseSchedule,
    pub dim: usize,
}

impl NoisePredictor for StandardNormalOracle {
    fn sample_dim(&self) -> usize {
        self.dim
    }

    fn predict_eps_batch(&self, x: &[f64], s: usize, _conds: &[Condition]) -> Vec<f64> {
        let k = self.schedule.noise_scale(s);
        x.iter().map(|v| v * k).collect()
    }
}

/// Source of conditioned training batches (normalized samples).
pub trait BatchSource {
    fn sample_dim(&self) -> usize;
    fn batch(&self, size: usize, p_uncond: f64, rng: &mut dyn RngCore) -> Result<ConditionedBatch>;

    /// Leading coordinates kept clean in the noised inputs (the start state for trajectories).
    fn clean_prefix(&self) -> usize {
        0
    }

    /// Largest absolute coordinate of the training samples, used to bound `x̂₀` when sampling.
    fn x0_bound(&self) -> Option<f64> {
        None
    }
}

/// Cost-limit conditioning over a labeled dataset.
pub struct CostConditioned<'a>(pub &'a Dataset);

impl BatchSource for CostConditioned<'_> {
    fn sample_dim(&self) -> usize {
        self.0.sample_dim()
    }

    fn batch(&self, size: usize, p_uncond: f64, rng: &mut dyn RngCore) -> Result<ConditionedBatch> {
        self.0.sample_conditioned_batch(size, p_uncond, &mut RngRef(rng))
    }

    fn clean_prefix(&self) -> usize {
        self.0.env.state_dim
    }

    fn x0_bound(&self) -> Option<f64> {
        self.0.max_abs_normalized().filter(|b| *b > 0.0)
    }
}

/// Conditioning on each segment's own normalized relabeled return.
pub struct ReturnConditioned<'a>(pub &'a Dataset);

impl BatchSource for ReturnConditioned<'_> {
    fn sample_dim(&self) -> usize {
        self.0.sample_dim()
    }

    fn batch(&self, size: usize, p_uncond: f64, rng: &mut dyn RngCore) -> Result<ConditionedBatch> {
        self.0.sample_return_conditioned_batch(size, p_uncond, &mut RngRef(rng))
    }

    fn clean_prefix(&self) -> usize {
        self.0.env.state_dim
    }

    fn x0_bound(&self) -> Option<f64> {
        self.0.max_abs_normalized().filter(|b| *b > 0.0)
    }
}

/// Unconditional i.i.d. Gaussian samples.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
}

impl BatchSource for GaussianSource {
    fn sample_dim(&self) -> usize {
        self.dim
    }

    fn batch(&self, size: usize, _p_uncond: f64, rng: &mut dyn RngCore) -> Result<ConditionedBatch> {
        let mut rng = RngRef(rng);
        let segments = (0..size)
            .map(|_| (0..self.dim).map(|_| self.mean + self.std * math::normal(&mut rng)).collect())
            .collect();
        Ok(ConditionedBatch { indices: vec![0; size], segments, conditions: vec![Condition::Null; size] })
    }
}

/// Adapter so `&mut dyn RngCore` can be passed where `impl RngCore` is expected.
struct RngRef<'a>(&'a mut dyn RngCore);

impl RngCore for RngRef<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Mean-squared noise-prediction loss over a batch and its parameter gradient.
/// Steps and noise are drawn from `rng`.
pub fn denoising_loss(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    batch: &ConditionedBatch,
    rng: &mut impl RngCore,
) -> Result<(f64, Vec<f64>)> {
    net_denoising_loss(&denoiser.net, schedule, batch, denoiser.clean_prefix, rng)
}

fn net_denoising_loss(
    net: &Mlp,
    schedule: &NoiseSchedule,
    batch: &ConditionedBatch,
    clean: usize,
    rng: &mut impl RngCore,
) -> Result<(f64, Vec<f64>)> {
    let d = net.spec.output_dim;
    let b = batch.segments.len();
    let mut inputs = Vec::with_capacity(b * net.spec.input_dim);
    let mut targets = Vec::with_capacity(b * d);
    let mut eps = vec![0.0; d];
    for (x0, cond) in batch.segments.iter().zip(&batch.conditions) {
        check_dim(d, x0.len())?;
        let s = rng.random_range(1..=schedule.n());
        math::fill_normal(rng, &mut eps);
        let mut xs = q_sample(schedule, x0, s, &eps)?;
        xs[..clean].copy_from_slice(&x0[..clean]);
        inputs.extend_from_slice(&xs);
        inputs.extend_from_slice(&step_embedding(s, schedule.n()));
        inputs.extend_from_slice(&condition_embedding(*cond));
        targets.extend_from_slice(&eps);
    }
    Ok(regression_loss(net, &inputs, &targets, b))
}

/// `mean_b ‖f(x_b) − y_b‖²` and its parameter gradient.
pub(crate) fn regression_loss(net: &Mlp, inputs: &[f64], targets: &[f64], batch: usize) -> (f64, Vec<f64>) {
    let mut tape = Tape::default();
    let pred = net.forward_batch(inputs, batch, &mut tape).expect("batch shape");
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let upstream: Vec<f64> = pred
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r * scale
        })
        .collect();
    let mut grads = vec![0.0; net.params.len()];
    net.backward_batch(&tape, &upstream, Some(&mut grads), false).expect("batch shape");
    (loss * scale, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub p_uncond: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Loss trace resolution in optimizer steps.
    pub log_every: usize,
    /// When set, the returned parameters are an exponential moving average
    /// of the iterates with this decay (warmed up as `(1+t)/(10+t)`).
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 30_000,
            batch: 128,
            lr: 3e-4,
            p_uncond: crate::dataset::DEFAULT_P_UNCOND,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            log_every: 100,
            ema_decay: None,
        }
    }
}

/// Mean loss over the preceding `log_every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Generic Adam loop shared by every learned model. `loss_fn` returns the
/// minibatch loss and gradient for the given step's RNG.
pub(crate) fn fit(
    net: &mut Mlp,
    config: &TrainConfig,
    mut loss_fn: impl FnMut(&Mlp, &mut math::Rng) -> Result<(f64, Vec<f64>)>,
) -> Result<Vec<LossPoint>> {
    if config.steps == 0 || config.batch == 0 || config.log_every == 0 {
        return Err(Error::invalid("steps, batch and log_every must be positive"));
    }
    if config.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
        return Err(Error::invalid("ema_decay must lie in [0, 1)"));
    }
    let mut ema = config.ema_decay.map(|_| net.params.values.clone());
    let mut rng = math::substream(config.seed, 1);
    let mut adam = AdamState::new(net.params.len(), config.lr);
    let mut trace = Vec::new();
    let mut window = 0.0;
    for step in 1..=config.steps {
        let (loss, grads) = loss_fn(net, &mut rng)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        adam_step(&mut net.params, &mut adam, &grads)?;
        if let (Some(avg), Some(decay)) = (ema.as_mut(), config.ema_decay) {
            let d = decay.min((1.0 + step as f64) / (10.0 + step as f64));
            for (a, p) in avg.iter_mut().zip(&net.params.values) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
        window += loss;
        if step % config.log_every == 0 {
            trace.push(LossPoint { step, loss: window / config.log_every as f64 });
            window = 0.0;
        }
    }
    if let Some(avg) = ema {
        net.params.values = avg;
    }
    net.params.round_to_f32();
    Ok(trace)
}

pub fn train_denoiser(source: &dyn BatchSource, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<(Denoiser, Vec<LossPoint>)> {
    let clean = source.clean_prefix();
    let mut denoiser = Denoiser::new(source.sample_dim(), schedule.n(), config.hidden.clone(), config.seed)?
        .with_clean_prefix(clean)?
        .with_x0_bound(source.x0_bound())?;
    let trace = fit(&mut denoiser.net, config, |net, rng| {
        let batch = source.batch(config.batch, config.p_uncond, rng)?;
        net_denoising_loss(net, schedule, &batch, clean, rng)
    })?;
    Ok((denoiser, trace))
}

/// What a guidance hook sees at one reverse step.
pub struct HookInput<'a> {
    /// Row-major batch of noisy samples.
    pub x: &'a [f64],
    pub s: usize,
    pub conds: &'a [Condition],
    /// Denoiser prediction under each row's condition at the same point.
    pub eps_cond: &'a [f64],
}

impl HookInput<'_> {
    pub fn batch(&self) -> usize {
        self.conds.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len() / self.conds.len()
    }
}

/// Score-space adjustment added on top of the conditional prediction.
pub trait GuidanceHook {
    /// Write the adjustment for every row into `out` (same layout as `x`).
    fn adjustment(&self, input: &HookInput<'_>, out: &mut [f64]);
}

pub struct NoGuidance;

impl GuidanceHook for NoGuidance {
    fn adjustment(&self, _input: &HookInput<'_>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Row-wise hook from a closure `(x_row, s, out_row)`.
pub struct FnGuidance<F>(pub F);

impl<F: Fn(&[f64], usize, &mut [f64])> GuidanceHook for FnGuidance<F> {
    fn adjustment(&self, input: &HookInput<'_>, out: &mut [f64]) {
        let d = input.dim();
        for (x, o) in input.x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            (self.0)(x, input.s, o);
        }
    }
}

/// Pointwise sum of two hooks.
pub struct SumGuidance<'a>(pub &'a dyn GuidanceHook, pub &'a dyn GuidanceHook);

impl GuidanceHook for SumGuidance<'_> {
    fn adjustment(&self, input: &HookInput<'_>, out: &mut [f64]) {
        self.0.adjustment(input, out);
        let mut other = vec![0.0; out.len()];
        self.1.adjustment(input, &mut other);
        out.iter_mut().zip(&other).for_each(|(a, b)| *a += b);
    }
}

/// Coordinates pinned to known (normalized) values during sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inpaint {
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
}

impl Inpaint {
    /// Pin the leading coordinates.
    pub fn prefix(values: &[f64]) -> Self {
        Inpaint { positions: (0..values.len()).collect(), values: values.to_vec() }
    }
}

/// Initial draw plus one noise vector per reverse step; `steps[s-1]` is used
/// at step `s` (its value at `s = 1` only feeds inpainting, which is exact there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSequence {
    pub initial: Vec<f64>,
    pub steps: Vec<Vec<f64>>,
}

impl NoiseSequence {
    pub fn draw(dim: usize, n: usize, seed: u64) -> Self {
        let mut rng = math::rng(seed);
        let mut initial = vec![0.0; dim];
        math::fill_normal(&mut rng, &mut initial);
        let mut steps = vec![vec![0.0; dim]; n];
        for s in (1..=n).rev() {
            math::fill_normal(&mut rng, &mut steps[s - 1]);
        }
        NoiseSequence { initial, steps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub condition: Condition,
    pub inpaint: Option<Inpaint>,
    pub seed: u64,
    pub noise: Option<NoiseSequence>,
}

impl SampleRequest {
    pub fn new(condition: Condition, seed: u64) -> Self {
        SampleRequest { condition, inpaint: None, seed, noise: None }
    }

    pub fn with_inpaint(mut self, inpaint: Inpaint) -> Self {
        self.inpaint = Some(inpaint);
        self
    }

    pub fn with_noise(mut self, noise: NoiseSequence) -> Self {
        self.noise = Some(noise);
        self
    }

    fn validate(&self, dim: usize, n: usize) -> Result<()> {
        if let Some(p) = &self.inpaint {
            check_dim(p.positions.len(), p.values.len())?;
            if p.positions.iter().any(|&i| i >= dim) {
                return Err(Error::invalid("inpaint position out of range"));
            }
        }
        if let Some(noise) = &self.noise {
            check_dim(dim, noise.initial.len())?;
            check_dim(n, noise.steps.len())?;
            for v in &noise.steps {
                check_dim(dim, v.len())?;
            }
        }
        Ok(())
    }
}

fn apply_inpaint(schedule: &NoiseSchedule, x: &mut [f64], s: usize, inpaint: Option<&Inpaint>, noise: &[f64], clean: usize) {
    if let Some(p) = inpaint {
        let a = sqrt(schedule.alpha_bar(s));
        let b = schedule.noise_scale(s);
        for (&i, &v) in p.positions.iter().zip(&p.values) {
            x[i] = if i < clean { v } else { a * v + b * noise[i] };
        }
    }
}

/// Reverse-chain state handed to observers after each step (row-major batch).
pub struct StepTrace<'a> {
    /// Step that was just denoised.
    pub s: usize,
    pub x_s: &'a [f64],
    /// Conditional prediction before guidance.
    pub eps_cond: &'a [f64],
    /// Guided prediction used for the update.
    pub eps_hat: &'a [f64],
    pub x_prev: &'a [f64],
}

/// Batched reverse step `x_s → x_{s−1}`; returns `(x_{s−1}, ε_cond, ε̂)`.
#[allow(clippy::too_many_arguments)]
pub fn ancestral_step_batch(
    schedule: &NoiseSchedule,
    model: &dyn NoisePredictor,
    x: &[f64],
    s: usize,
    conds: &[Condition],
    hook: &dyn GuidanceHook,
    noise: &[f64],
    inpaint: &[Option<&Inpaint>],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x.len() / conds.len();
    let eps = model.predict_eps_batch(x, s, conds);
    let mut g = vec![0.0; x.len()];
    hook.adjustment(&HookInput { x, s, conds, eps_cond: &eps }, &mut g);
    let k = schedule.noise_scale(s);
    let mut eps_hat: Vec<f64> = eps.iter().zip(&g).map(|(e, g)| e - k * g).collect();
    if let Some(bound) = model.x0_bound() {
        let a = sqrt(schedule.alpha_bar(s));
        for (e, xv) in eps_hat.iter_mut().zip(x) {
            let x0 = (xv - k * *e) / a;
            if x0.abs() > bound {
                *e = (xv - a * x0.clamp(-bound, bound)) / k;
            }
        }
    }
    let coef = schedule.beta(s) / k;
    let inv_sqrt_alpha = 1.0 / sqrt(schedule.alpha(s));
    let sigma = if s > 1 { sqrt(schedule.sigma2(s)) } else { 0.0 };
    let mut next: Vec<f64> = x
        .iter()
        .zip(&eps_hat)
        .zip(noise)
        .map(|((xv, e), z)| inv_sqrt_alpha * (xv - coef * e) + sigma * z)
        .collect();
    for (r, p) in inpaint.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        apply_inpaint(schedule, &mut next[span.clone()], s - 1, *p, &noise[span], model.clean_prefix());
    }
    (next, eps, eps_hat)
}

/// One reverse step for a single sample.
#[allow(clippy::too_many_arguments)]
pub fn ancestral_step(
    schedule: &NoiseSchedule,
    model: &dyn NoisePredictor,
    x: &[f64],
    s: usize,
    cond: Condition,
    hook: &dyn GuidanceHook,
    noise: &[f64],
    inpaint: Option<&Inpaint>,
) -> Vec<f64> {
    ancestral_step_batch(schedule, model, x, s, &[cond], hook, noise, &[inpaint]).0
}

/// Full reverse chain from `x_N`; returns the clean sample in normalized space.
pub fn sample(schedule: &NoiseSchedule, model: &dyn NoisePredictor, request: &SampleRequest, hook: &dyn GuidanceHook) -> Result<Vec<f64>> {
    Ok(sample_batch(schedule, model, core::slice::from_ref(request), hook, &mut |_| {})?.remove(0))
}

/// Runs one chain per request in lockstep. Each row depends only on its own
/// request, so results match separate [`sample`] calls.
pub fn sample_batch(
    schedule: &NoiseSchedule,
    model: &dyn NoisePredictor,
    requests: &[SampleRequest],
    hook: &dyn GuidanceHook,
    observer: &mut dyn FnMut(&StepTrace<'_>),
) -> Result<Vec<Vec<f64>>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let dim = model.sample_dim();
    let n = schedule.n();
    for r in requests {
        r.validate(dim, n)?;
    }
    let drawn: Vec<Option<NoiseSequence>> =
        requests.iter().map(|r| r.noise.is_none().then(|| NoiseSequence::draw(dim, n, r.seed))).collect();
    let noises: Vec<&NoiseSequence> =
        requests.iter().zip(&drawn).map(|(r, d)| r.noise.as_ref().or(d.as_ref()).expect("noise drawn")).collect();
    let conds: Vec<Condition> = requests.iter().map(|r| r.condition).collect();
    let inpaint: Vec<Option<&Inpaint>> = requests.iter().map(|r| r.inpaint.as_ref()).collect();

    let mut x: Vec<f64> = noises.iter().flat_map(|z| z.initial.iter().copied()).collect();
    for (r, z) in noises.iter().enumerate() {
        apply_inpaint(schedule, &mut x[r * dim..(r + 1) * dim], n, inpaint[r], &z.initial, model.clean_prefix());
    }
    let mut step_noise = vec![0.0; x.len()];
    for s in (1..=n).rev() {
        for (r, z) in noises.iter().enumerate() {
            step_noise[r * dim..(r + 1) * dim].copy_from_slice(&z.steps[s - 1]);
        }
        let (next, eps_cond, eps_hat) = ancestral_step_batch(schedule, model, &x, s, &conds, hook, &step_noise, &inpaint);
        observer(&StepTrace { s, x_s: &x, eps_cond: &eps_cond, eps_hat: &eps_hat, x_prev: &next });
        x = next;
    }
    Ok(x.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

/// `x̂₀ = (x_s − √(1−ᾱ_s)·ε)/√ᾱ_s`.
pub fn predict_x0(schedule: &NoiseSchedule, x: &[f64], eps: &[f64], s: usize) -> Vec<f64> {
    let k = schedule.noise_scale(s);
    let a = sqrt(schedule.alpha_bar(s));
    x.iter().zip(eps).map(|(x, e)| (x - k * e) / a).collect()
}
