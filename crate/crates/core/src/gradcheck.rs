//! Central finite-difference checks for analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::approx::Mlp;
use crate::dataset::{Dataset, DatasetConfig};
use crate::diagnostics::{surrogate_cost, surrogate_infeasibility};
use crate::diffusion::{denoising_loss, make_schedule, Denoiser};
use crate::env::{rollout, BehaviorPolicy, EnvId, EnvSpec};
use crate::guidance::{hinge_gradient, CostModel, NoisyRegressor};
use crate::math::{abs, mix_seed, rng};
use crate::Result;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    /// Largest `|g − ĝ| / max(1, |g|)` over the probed coordinates.
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck { probes: self.probes + other.probes, max_rel_error: self.max_rel_error.max(other.max_rel_error) }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    abs(analytic - numeric) / abs(analytic).max(1.0)
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Compare `analytic[i]` with a central difference of `f` at each coordinate in `coords`.
pub fn check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> GradCheck {
    let errors: Vec<f64> = coords.iter().map(|&i| rel_error(analytic[i], central_difference(&mut f, x, i, h))).collect();
    GradCheck { probes: coords.len(), max_rel_error: errors.into_iter().fold(0.0, f64::max) }
}

/// Probes per target in [`battery`].
pub const BATTERY_PROBES: usize = 100;
/// Step used by [`battery`].
pub const BATTERY_STEP: f64 = 1e-5;

fn picks(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..count).map(|_| r.random_range(0..len)).collect()
}

fn point(len: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-scale..scale)).collect()
}

fn small_dataset(id: EnvId, seed: u64) -> Result<Dataset> {
    let spec = EnvSpec::new(id);
    let eps = (0..6).map(|i| rollout(&spec, BehaviorPolicy::ALL[i % 3], mix_seed(seed, i as u64))).collect();
    Dataset::build(spec, eps, DatasetConfig { horizon: 8, stride: 4, ..DatasetConfig::default() })
}

/// Parameter gradient of a scalar function of an MLP's parameters.
fn by_params(net: &Mlp, grads: &[f64], seed: u64, mut f: impl FnMut(&Mlp) -> f64) -> GradCheck {
    let params = net.params.values.clone();
    let mut probe = net.clone();
    check(
        |p: &[f64]| {
            probe.params.values.copy_from_slice(p);
            f(&probe)
        },
        &params,
        grads,
        &picks(params.len(), BATTERY_PROBES, seed),
        BATTERY_STEP,
    )
}

/// Every analytic gradient in the crate against central differences, with
/// [`BATTERY_PROBES`] probes per named target: denoiser loss, reward and cost
/// regressors (input and parameters), the limit hinge and both surrogates.
pub fn battery(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut out = Vec::new();
    let chain = small_dataset(EnvId::ChainVel1D, seed)?;
    let hazard = small_dataset(EnvId::PointHazard2D, seed ^ 1)?;
    let dim = chain.sample_dim();

    let schedule = make_schedule(20)?;
    let denoiser = Denoiser::new(dim, 20, vec![16, 16], mix_seed(seed, 2))?;
    let batch = chain.sample_conditioned_batch(6, 0.25, &mut rng(mix_seed(seed, 3)))?;
    // reseeding replays the same steps and noise
    let loss_seed = mix_seed(seed, 4);
    let (_, grads) = denoising_loss(&denoiser, &schedule, &batch, &mut rng(loss_seed))?;
    let d = by_params(&denoiser.net, &grads, mix_seed(seed, 5), |net| {
        let probe = Denoiser { net: net.clone(), n_steps: 20, clean_prefix: 0, x0_bound: None };
        denoising_loss(&probe, &schedule, &batch, &mut rng(loss_seed)).map_or(f64::NAN, |r| r.0)
    });
    out.push(("denoiser loss", d));

    for (k, names) in [(0u64, ["reward model input", "reward model params"]), (1, ["cost model input", "cost model params"])] {
        let mut reg = NoisyRegressor::new(dim, 20, vec![16, 16], mix_seed(seed, 10 + k))?;
        reg.target_mean = 1.5;
        reg.target_std = 3.0;
        let mut input = GradCheck { probes: 0, max_rel_error: 0.0 };
        for (j, s) in [1usize, 10, 20].into_iter().enumerate() {
            let j = j as u64;
            let x = point(dim, 1.5, mix_seed(seed, 20 + 3 * k + j));
            let g = reg.gradient(&x, s);
            let coords = picks(dim, BATTERY_PROBES / 3 + 1, mix_seed(seed, 30 + 3 * k + j));
            input = input.merge(check(|x: &[f64]| reg.predict(x, s), &x, &g, &coords, BATTERY_STEP));
        }
        out.push((names[0], input));
        let row = point(reg.net.spec.input_dim, 1.0, mix_seed(seed, 40 + k));
        let (pg, _) = reg.net.grad(&row, &[1.0])?;
        let p = by_params(&reg.net, &pg, mix_seed(seed, 50 + k), |net| net.forward(&row).map_or(f64::NAN, |y| y[0]));
        out.push((names[1], p));
    }

    let cost = CostModel { regressor: NoisyRegressor::new(dim, 20, vec![16, 16], mix_seed(seed, 60))? };
    let mut hinge = GradCheck { probes: 0, max_rel_error: 0.0 };
    for k in 0..4u64 {
        let x = point(dim, 1.0, mix_seed(seed, 61 + k));
        let s = 1 + 6 * k as usize;
        let pred = cost.regressor.predict(&x, s);
        let g = hinge_gradient(&cost, &x, s, pred - 1.0);
        let f = |x: &[f64]| (cost.regressor.predict(x, s) - (pred - 1.0)).max(0.0);
        hinge = hinge.merge(check(f, &x, &g, &picks(dim, BATTERY_PROBES / 4, mix_seed(seed, 70 + k)), BATTERY_STEP));
        // inactive side: the gradient must vanish exactly
        let idle = hinge_gradient(&cost, &x, s, pred + 1.0);
        let worst = idle.iter().fold(0.0f64, |m, v| m.max(abs(*v)));
        hinge = hinge.merge(GradCheck { probes: 0, max_rel_error: worst });
    }
    out.push(("hinge", hinge));

    let mut c_sur = GradCheck { probes: 0, max_rel_error: 0.0 };
    let mut h_sur = GradCheck { probes: 0, max_rel_error: 0.0 };
    for (k, data) in [&chain, &hazard].into_iter().enumerate() {
        for (j, flat) in data.normalized.iter().step_by(3).take(4).enumerate() {
            let coords = picks(flat.len(), BATTERY_PROBES / 8 + 1, mix_seed(seed, 80 + 4 * k as u64 + j as u64));
            let (_, g) = surrogate_cost(&data.env, &data.stats, flat);
            c_sur = c_sur.merge(check(|x: &[f64]| surrogate_cost(&data.env, &data.stats, x).0, flat, &g, &coords, BATTERY_STEP));
            let (_, g) = surrogate_infeasibility(&data.env, &data.stats, flat, 4);
            let f = |x: &[f64]| surrogate_infeasibility(&data.env, &data.stats, x, 4).0;
            h_sur = h_sur.merge(check(f, flat, &g, &coords, BATTERY_STEP));
        }
    }
    out.push(("surrogate cost", c_sur));
    out.push(("surrogate infeasibility", h_sur));
    Ok(out)
}
