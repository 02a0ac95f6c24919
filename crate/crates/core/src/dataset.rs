//! Segments, return/cost labels, feasible trajectory relabeling and
//! cost-limit conditioned batch sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Episode};
use crate::error::check_dim;
use crate::math::{pow, sqrt};
use crate::{Error, Result};

pub const DEFAULT_HORIZON: usize = 32;
pub const DEFAULT_FEASIBLE_LEN: usize = 8;
pub const DEFAULT_P_UNCOND: f64 = 0.25;
/// Number of cost limits on the conditioning grid over `[0, c_max_seg]`.
pub const LIMIT_GRID_POINTS: usize = 32;
/// Default penalty is this multiple of the separation bound (5% more negative).
pub const R_US_MARGIN: f64 = 1.05;
const STD_FLOOR: f64 = 1e-6;

/// A planning-horizon slice of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Segment {
    pub fn horizon(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Interleaved `[s_0, a_0, s_1, a_1, ...]`.
    pub fn flat_view(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len() + self.actions.len());
        for t in 0..self.horizon() {
            out.extend_from_slice(self.state(t));
            out.extend_from_slice(self.action(t));
        }
        out
    }

    /// Inverse of [`Segment::flat_view`]. Rewards and costs are unknown for a
    /// generated plan and are left zero.
    pub fn from_flat(flat: &[f64], state_dim: usize, action_dim: usize) -> Result<Self> {
        let width = state_dim + action_dim;
        if width == 0 || flat.len() % width != 0 {
            return Err(Error::invalid(format!("flat length {} is not a multiple of {width}", flat.len())));
        }
        let horizon = flat.len() / width;
        let mut seg = Segment {
            state_dim,
            action_dim,
            states: Vec::with_capacity(horizon * state_dim),
            actions: Vec::with_capacity(horizon * action_dim),
            rewards: vec![0.0; horizon],
            costs: vec![0.0; horizon],
        };
        for row in flat.chunks_exact(width) {
            seg.states.extend_from_slice(&row[..state_dim]);
            seg.actions.extend_from_slice(&row[state_dim..]);
        }
        Ok(seg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabels {
    /// Discounted return.
    pub ret: f64,
    /// Discounted cumulative cost.
    pub cost: f64,
    /// Prefix infeasibility indicator.
    pub h_f: bool,
    /// Relabeled return `ret + r_us·h_f`.
    pub r_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub r_min: f64,
    pub r_max: f64,
    pub c_max_seg: f64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub gamma: f64,
    pub gamma_c: f64,
}

impl DatasetStats {
    /// Mean and standard deviation for coordinate `i` of an interleaved row.
    fn column(&self, i: usize) -> (f64, f64) {
        let sd = self.state_mean.len();
        if i < sd {
            (self.state_mean[i], self.state_std[i])
        } else {
            (self.action_mean[i - sd], self.action_std[i - sd])
        }
    }

    pub fn row_width(&self) -> usize {
        self.state_mean.len() + self.action_mean.len()
    }

    /// Identity normalization, mostly useful in tests.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        DatasetStats {
            r_min: 0.0,
            r_max: 0.0,
            c_max_seg: 0.0,
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
            gamma: 1.0,
            gamma_c: 1.0,
        }
    }

    /// Normalize a flat (interleaved) vector in place.
    pub fn normalize_flat(&self, flat: &mut [f64]) {
        let w = self.row_width();
        for (i, v) in flat.iter_mut().enumerate() {
            let (m, s) = self.column(i % w);
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize_flat(&self, flat: &mut [f64]) {
        let w = self.row_width();
        for (i, v) in flat.iter_mut().enumerate() {
            let (m, s) = self.column(i % w);
            *v = *v * s + m;
        }
    }

    /// Standard deviation for each coordinate of a flat vector of length `len`.
    pub fn flat_scale(&self, len: usize) -> Vec<f64> {
        let w = self.row_width();
        (0..len).map(|i| self.column(i % w).1).collect()
    }
}

/// Normalized cost-limit condition or the null token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    /// Value in `[0, 1]`: a cost limit divided by `c_max_seg` (or a
    /// normalized return for the return-conditioned baseline).
    Value(f64),
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedBatch {
    pub indices: Vec<usize>,
    pub segments: Vec<Vec<f64>>,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub horizon: usize,
    pub stride: usize,
    pub gamma: f64,
    pub gamma_c: f64,
    pub feasible_len: usize,
    /// `None` resolves to `R_US_MARGIN · r_us_bound`.
    pub r_us: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            horizon: DEFAULT_HORIZON,
            stride: 4,
            gamma: 1.0,
            gamma_c: 1.0,
            feasible_len: DEFAULT_FEASIBLE_LEN,
            r_us: None,
        }
    }
}

pub fn segment_episodes(episodes: &[Episode], horizon: usize, stride: usize) -> Result<Vec<Segment>> {
    if stride == 0 || horizon == 0 {
        return Err(Error::invalid("horizon and stride must be positive"));
    }
    let mut out = Vec::new();
    for ep in episodes {
        ep.validate()?;
        if horizon > ep.len() {
            return Err(Error::invalid(format!("horizon {horizon} exceeds episode length {}", ep.len())));
        }
        let mut i = 0;
        while i + horizon <= ep.len() {
            let (sd, ad) = (ep.state_dim, ep.action_dim);
            out.push(Segment {
                state_dim: sd,
                action_dim: ad,
                states: ep.states[i * sd..(i + horizon) * sd].to_vec(),
                actions: ep.actions[i * ad..(i + horizon) * ad].to_vec(),
                rewards: ep.rewards[i..i + horizon].to_vec(),
                costs: ep.costs[i..i + horizon].to_vec(),
            });
            i += stride;
        }
    }
    Ok(out)
}

fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for v in values {
        acc += g * v;
        g *= gamma;
    }
    acc
}

pub fn compute_return(segment: &Segment, gamma: f64) -> f64 {
    discounted_sum(&segment.rewards, gamma)
}

pub fn compute_cost(segment: &Segment, gamma_c: f64) -> f64 {
    discounted_sum(&segment.costs, gamma_c)
}

/// `1[Σ_{t<f} c_t > 0]`, undiscounted.
pub fn prefix_infeasible(segment: &Segment, f: usize) -> Result<bool> {
    if f == 0 || f > segment.costs.len() {
        return Err(Error::invalid(format!("feasible length {f} outside [1, {}]", segment.costs.len())));
    }
    Ok(segment.costs[..f].iter().sum::<f64>() > 0.0)
}

pub fn ftr_relabel(ret: f64, h_f: bool, r_us: f64) -> Result<f64> {
    if !(r_us < 0.0) {
        return Err(Error::invalid(format!("r_us must be negative, got {r_us}")));
    }
    Ok(if h_f { ret + r_us } else { ret })
}

/// Geometric horizon factor `Σ_{t<L} γ^t`.
pub fn horizon_factor(gamma: f64, horizon: usize) -> f64 {
    if gamma == 1.0 {
        horizon as f64
    } else {
        (1.0 - pow(gamma, horizon as f64)) / (1.0 - gamma)
    }
}

/// Strict upper bound on the relabeling penalty: any `r_us` below it puts every
/// prefix-infeasible segment under every prefix-feasible one.
pub fn r_us_bound(r_min: f64, r_max: f64, gamma: f64, horizon: usize) -> f64 {
    (r_min - r_max) * horizon_factor(gamma, horizon)
}

/// Default penalty: 5% beyond the bound. A constant-reward dataset has bound 0,
/// where any negative value separates; `-1` is used there.
pub fn default_r_us(r_min: f64, r_max: f64, gamma: f64, horizon: usize) -> f64 {
    let b = r_us_bound(r_min, r_max, gamma, horizon);
    if b < 0.0 {
        R_US_MARGIN * b
    } else {
        -1.0
    }
}

pub fn limit_grid(c_max: f64) -> [f64; LIMIT_GRID_POINTS] {
    let mut grid = [0.0; LIMIT_GRID_POINTS];
    for (k, g) in grid.iter_mut().enumerate() {
        *g = c_max * k as f64 / (LIMIT_GRID_POINTS - 1) as f64;
    }
    grid
}

fn mean_std(columns: usize, rows: impl Iterator<Item = Vec<f64>> + Clone) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; columns];
    let mut n = 0usize;
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v;
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; columns];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| sqrt(s / n).max(STD_FLOOR)).collect();
    (mean, std)
}

pub fn compute_stats(episodes: &[Episode], segments: &[Segment], gamma: f64, gamma_c: f64) -> Result<DatasetStats> {
    let first = episodes.first().ok_or_else(|| Error::invalid("dataset has no episodes"))?;
    let (sd, ad) = (first.state_dim, first.action_dim);
    let mut r_min = f64::INFINITY;
    let mut r_max = f64::NEG_INFINITY;
    for r in episodes.iter().flat_map(|e| e.rewards.iter()) {
        r_min = r_min.min(*r);
        r_max = r_max.max(*r);
    }
    let c_max_seg = segments.iter().map(|s| compute_cost(s, gamma_c)).fold(0.0, f64::max);
    let (state_mean, state_std) =
        mean_std(sd, segments.iter().flat_map(|s| s.states.chunks_exact(sd).map(|c| c.to_vec())));
    let (action_mean, action_std) =
        mean_std(ad, segments.iter().flat_map(|s| s.actions.chunks_exact(ad).map(|c| c.to_vec())));
    Ok(DatasetStats { r_min, r_max, c_max_seg, state_mean, state_std, action_mean, action_std, gamma, gamma_c })
}

pub fn normalize(segment: &Segment, stats: &DatasetStats) -> Vec<f64> {
    let mut flat = segment.flat_view();
    stats.normalize_flat(&mut flat);
    flat
}

pub fn denormalize(flat: &[f64], stats: &DatasetStats) -> Result<Segment> {
    let mut v = flat.to_vec();
    stats.denormalize_flat(&mut v);
    Segment::from_flat(&v, stats.state_mean.len(), stats.action_mean.len())
}

/// Labeled, normalized offline dataset. Immutable once built except for
/// [`Dataset::relabel`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub env: EnvSpec,
    pub config: DatasetConfig,
    pub episodes: Vec<Episode>,
    pub segments: Vec<Segment>,
    pub labels: Vec<SegmentLabels>,
    pub stats: DatasetStats,
    /// Resolved relabeling penalty.
    pub r_us: f64,
    pub normalized: Vec<Vec<f64>>,
    /// Segment indices sorted by cumulative cost (stable).
    by_cost: Vec<usize>,
}

impl Dataset {
    pub fn build(env: EnvSpec, episodes: Vec<Episode>, config: DatasetConfig) -> Result<Self> {
        if !(config.gamma > 0.0 && config.gamma <= 1.0 && config.gamma_c > 0.0 && config.gamma_c <= 1.0) {
            return Err(Error::invalid("discounts must lie in (0, 1]"));
        }
        for ep in &episodes {
            check_dim(env.state_dim, ep.state_dim)?;
            check_dim(env.action_dim, ep.action_dim)?;
        }
        let segments = segment_episodes(&episodes, config.horizon, config.stride)?;
        let stats = compute_stats(&episodes, &segments, config.gamma, config.gamma_c)?;
        let normalized = segments.iter().map(|s| normalize(s, &stats)).collect();
        let mut ds = Dataset {
            env,
            config: config.clone(),
            episodes,
            segments,
            labels: Vec::new(),
            stats,
            r_us: -1.0,
            normalized,
            by_cost: Vec::new(),
        };
        ds.relabel(config.feasible_len, config.r_us)?;
        Ok(ds)
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Flat sample dimension `L·(state_dim + action_dim)`.
    pub fn sample_dim(&self) -> usize {
        self.config.horizon * (self.env.state_dim + self.env.action_dim)
    }

    /// Largest absolute coordinate over the normalized segments; `None` when empty.
    pub fn max_abs_normalized(&self) -> Option<f64> {
        self.normalized.iter().flatten().map(|v| v.abs()).reduce(f64::max)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn resolved_r_us_bound(&self) -> f64 {
        r_us_bound(self.stats.r_min, self.stats.r_max, self.config.gamma, self.config.horizon)
    }

    /// Recompute labels for a new feasible length and penalty (`None` = auto).
    pub fn relabel(&mut self, feasible_len: usize, r_us: Option<f64>) -> Result<()> {
        let r_us = match r_us {
            Some(v) => v,
            None => default_r_us(self.stats.r_min, self.stats.r_max, self.config.gamma, self.config.horizon),
        };
        let mut labels = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let ret = compute_return(seg, self.config.gamma);
            let cost = compute_cost(seg, self.config.gamma_c);
            let h_f = prefix_infeasible(seg, feasible_len)?;
            labels.push(SegmentLabels { ret, cost, h_f, r_hat: ftr_relabel(ret, h_f, r_us)? });
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| labels[a].cost.total_cmp(&labels[b].cost));
        self.labels = labels;
        self.by_cost = order;
        self.r_us = r_us;
        self.config.feasible_len = feasible_len;
        self.config.r_us = Some(r_us);
        Ok(())
    }

    /// Number of segments with cost at most `limit`.
    fn feasible_count(&self, limit: f64) -> usize {
        self.by_cost.partition_point(|&i| self.labels[i].cost <= limit)
    }

    /// Normalize a raw cost limit to the conditioning range `[0, 1]`.
    pub fn normalize_limit(&self, limit: f64) -> f64 {
        normalize_limit(limit, self.stats.c_max_seg)
    }

    /// Stratified cost-limit sampling: draw a limit from the grid, then a
    /// segment uniformly among those whose cost satisfies it.
    pub fn sample_conditioned_batch(
        &self,
        batch_size: usize,
        p_uncond: f64,
        rng: &mut impl RngCore,
    ) -> Result<ConditionedBatch> {
        if self.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        if !(0.0..=1.0).contains(&p_uncond) {
            return Err(Error::invalid(format!("p_uncond {p_uncond} outside [0, 1]")));
        }
        let grid = limit_grid(self.stats.c_max_seg);
        let counts: Vec<usize> = grid.iter().map(|&l| self.feasible_count(l)).collect();
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::EmptyFeasibleSet);
        }
        let mut batch = ConditionedBatch {
            indices: Vec::with_capacity(batch_size),
            segments: Vec::with_capacity(batch_size),
            conditions: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let k = loop {
                let k = rng.random_range(0..LIMIT_GRID_POINTS);
                if counts[k] > 0 {
                    break k;
                }
            };
            let idx = self.by_cost[rng.random_range(0..counts[k])];
            let cond = if rng.random::<f64>() < p_uncond {
                Condition::Null
            } else {
                Condition::Value(self.normalize_limit(grid[k]))
            };
            batch.indices.push(idx);
            batch.segments.push(self.normalized[idx].clone());
            batch.conditions.push(cond);
        }
        Ok(batch)
    }

    /// Range of relabeled returns, used to normalize return conditions.
    pub fn r_hat_range(&self) -> (f64, f64) {
        self.labels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l.r_hat), hi.max(l.r_hat)))
    }

    pub fn normalize_return(&self, r_hat: f64) -> f64 {
        let (lo, hi) = self.r_hat_range();
        if hi > lo {
            crate::math::clip((r_hat - lo) / (hi - lo), 0.0, 1.0)
        } else {
            1.0
        }
    }

    /// Return-conditioned batches for the swapped-guidance baseline: each
    /// segment is conditioned on its own normalized relabeled return.
    pub fn sample_return_conditioned_batch(
        &self,
        batch_size: usize,
        p_uncond: f64,
        rng: &mut impl RngCore,
    ) -> Result<ConditionedBatch> {
        if self.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let mut batch = ConditionedBatch { indices: Vec::new(), segments: Vec::new(), conditions: Vec::new() };
        for _ in 0..batch_size {
            let idx = rng.random_range(0..self.len());
            let cond = if rng.random::<f64>() < p_uncond {
                Condition::Null
            } else {
                Condition::Value(self.normalize_return(self.labels[idx].r_hat))
            };
            batch.indices.push(idx);
            batch.segments.push(self.normalized[idx].clone());
            batch.conditions.push(cond);
        }
        Ok(batch)
    }

    /// Highest episode return in the dataset (normalization reference).
    pub fn best_episode_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.total_reward()).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn normalize_limit(limit: f64, c_max_seg: f64) -> f64 {
    if c_max_seg > 0.0 {
        crate::math::clip(limit / c_max_seg, 0.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, BehaviorPolicy, EnvId};
    use crate::math;
    use proptest::prelude::*;

    fn seg_with(rewards: &[f64], costs: &[f64]) -> Segment {
        let n = rewards.len();
        Segment {
            state_dim: 1,
            action_dim: 1,
            states: vec![0.0; n],
            actions: vec![0.0; n],
            rewards: rewards.to_vec(),
            costs: costs.to_vec(),
        }
    }

    fn chain_dataset(n: usize, config: DatasetConfig) -> Dataset {
        let spec = EnvSpec::new(EnvId::ChainVel1D);
        let eps = (0..n)
            .map(|i| rollout(&spec, BehaviorPolicy::ALL[i % 3], i as u64))
            .collect();
        Dataset::build(spec, eps, config).unwrap()
    }

    #[test]
    fn segment_counts() {
        let spec = EnvSpec::new(EnvId::ChainVel1D);
        let ep = rollout(&spec, BehaviorPolicy::Random, 1);
        assert_eq!(segment_episodes(&[ep.clone()], 32, 16).unwrap().len(), 3);
        assert_eq!(segment_episodes(&[ep.clone()], 64, 1).unwrap().len(), 1);
        let two = segment_episodes(&[ep.clone(), ep.clone()], 32, 32).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(two[0], two[2]);
        assert_eq!(two[1], two[3]);
        assert!(segment_episodes(&[ep], 65, 1).is_err());
    }

    #[test]
    fn return_examples() {
        assert_eq!(compute_return(&seg_with(&[0.0; 5], &[0.0; 5]), 0.9), 0.0);
        assert_eq!(compute_return(&seg_with(&[1.0; 10], &[0.0; 10]), 1.0), 10.0);
        // 1 + 0.5·0 + 0.25·2
        assert_eq!(compute_return(&seg_with(&[1.0, 0.0, 2.0], &[0.0; 3]), 0.5), 1.5);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(compute_cost(&seg_with(&[0.0; 4], &[0.0; 4]), 1.0), 0.0);
        assert_eq!(compute_cost(&seg_with(&[0.0; 32], &[1.0; 32]), 1.0), 32.0);
        let c = compute_cost(&seg_with(&[0.0; 4], &[1.0, 1.0, 0.0, 1.0]), 0.9);
        assert!((c - 2.629).abs() < 1e-12);
    }

    #[test]
    fn prefix_examples() {
        let mut costs = vec![0.0; 10];
        costs[2] = 1.0;
        let s = seg_with(&[0.0; 10], &costs);
        assert!(!prefix_infeasible(&s, 2).unwrap());
        assert!(prefix_infeasible(&s, 3).unwrap());
        let z = seg_with(&[0.0; 10], &[0.0; 10]);
        assert!((1..=10).all(|f| !prefix_infeasible(&z, f).unwrap()));
        assert!(prefix_infeasible(&s, 0).is_err());
        assert!(prefix_infeasible(&s, 11).is_err());
    }

    #[test]
    fn relabel_examples() {
        assert_eq!(ftr_relabel(5.0, false, -40.0).unwrap(), 5.0);
        assert_eq!(ftr_relabel(5.0, true, -40.0).unwrap(), -35.0);
        assert_eq!(ftr_relabel(0.0, true, -10.0).unwrap(), -10.0);
        assert!(ftr_relabel(1.0, true, 0.0).is_err());
        assert!(ftr_relabel(1.0, true, 2.0).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(r_us_bound(0.0, 1.0, 1.0, 10), -10.0);
        // geometric series evaluated term by term
        let direct: f64 = (0..50).map(|t| 0.99f64.powi(t)).sum();
        let b = r_us_bound(0.0, 1.0, 0.99, 50);
        assert!((b + direct).abs() < 1e-10);
        assert!((b + 39.499).abs() < 1e-3);
        assert_eq!(r_us_bound(0.3, 0.3, 0.9, 32), 0.0);
        assert!(default_r_us(0.3, 0.3, 0.9, 32) < 0.0);
        assert_eq!(default_r_us(0.0, 1.0, 1.0, 10), -10.5);
    }

    #[test]
    fn labels_satisfy_invariants() {
        let ds = chain_dataset(30, DatasetConfig::default());
        for (seg, lab) in ds.segments.iter().zip(&ds.labels) {
            assert_eq!(lab.r_hat, lab.ret + if lab.h_f { ds.r_us } else { 0.0 });
            assert_eq!(lab.h_f, seg.costs[..8].iter().sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn ftr_label_separation() {
        for id in [EnvId::ChainVel1D, EnvId::PointHazard2D] {
            let spec = EnvSpec::new(id);
            let eps = (0..60).map(|i| rollout(&spec, BehaviorPolicy::ALL[i % 3], i as u64)).collect();
            let ds = Dataset::build(spec, eps, DatasetConfig::default()).unwrap();
            let worst_bad = ds.labels.iter().filter(|l| l.h_f).map(|l| l.r_hat).fold(f64::NEG_INFINITY, f64::max);
            let best_good = ds.labels.iter().filter(|l| !l.h_f).map(|l| l.r_hat).fold(f64::INFINITY, f64::min);
            assert!(worst_bad < best_good, "{id}: {worst_bad} !< {best_good}");
        }
    }

    #[test]
    fn monotone_infeasibility() {
        let ds = chain_dataset(30, DatasetConfig::default());
        for seg in &ds.segments {
            let h: Vec<bool> = (1..=32).map(|f| prefix_infeasible(seg, f).unwrap()).collect();
            assert!(h.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn conditioned_batches_are_sound() {
        let ds = chain_dataset(45, DatasetConfig::default());
        let mut rng = math::rng(0);
        for _ in 0..20 {
            let b = ds.sample_conditioned_batch(64, 0.25, &mut rng).unwrap();
            for (idx, cond) in b.indices.iter().zip(&b.conditions) {
                if let Condition::Value(l) = cond {
                    assert!(ds.labels[*idx].cost <= l * ds.stats.c_max_seg + 1e-9);
                }
            }
        }
        let b = ds.sample_conditioned_batch(64, 1.0, &mut rng).unwrap();
        assert!(b.conditions.iter().all(|c| *c == Condition::Null));
    }

    #[test]
    fn zero_cost_dataset_accepts_every_limit() {
        let spec = EnvSpec::new(EnvId::ChainVel1D);
        let eps = (0..4).map(|i| rollout(&spec, BehaviorPolicy::Safe, i)).collect();
        let ds = Dataset::build(spec, eps, DatasetConfig::default()).unwrap();
        let b = ds.sample_conditioned_batch(32, 0.0, &mut math::rng(1)).unwrap();
        assert_eq!(b.segments.len(), 32);
        assert!(b.conditions.iter().all(|c| matches!(c, Condition::Value(_))));
    }

    #[test]
    fn limit_five_only_draws_cost_free_segment() {
        // one safe (C=0) and one C=10 segment; grid limits below 10 can only pick the safe one
        let spec = EnvSpec::new(EnvId::ChainVel1D);
        let mut costly = rollout(&spec, BehaviorPolicy::Safe, 0);
        for t in 0..10 {
            costly.costs[t] = 1.0;
        }
        let safe = rollout(&spec, BehaviorPolicy::Safe, 0);
        let cfg = DatasetConfig { horizon: 64, stride: 64, ..DatasetConfig::default() };
        let ds = Dataset::build(spec, vec![safe, costly], cfg).unwrap();
        assert_eq!(ds.feasible_count(5.0), 1);
        assert_eq!(ds.labels[ds.by_cost[0]].cost, 0.0);
        let mut rng = math::rng(2);
        let b = ds.sample_conditioned_batch(200, 0.0, &mut rng).unwrap();
        for (idx, cond) in b.indices.iter().zip(&b.conditions) {
            if let Condition::Value(l) = cond {
                if l * ds.stats.c_max_seg < 10.0 {
                    assert_eq!(ds.labels[*idx].cost, 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_dimension_normalizes_to_zero() {
        let spec = EnvSpec::new(EnvId::ChainVel1D);
        let eps = (0..3).map(|_| rollout(&spec, BehaviorPolicy::Greedy, 0)).collect();
        let ds = Dataset::build(spec, eps, DatasetConfig::default()).unwrap();
        // greedy actions are always 0.2
        assert_eq!(ds.stats.action_std[0], STD_FLOOR);
        assert!(ds.normalized.iter().all(|f| f.iter().skip(1).step_by(2).all(|v| v.abs() < 1e-6)));
    }

    #[test]
    fn identity_stats_are_identity() {
        let s = seg_with(&[0.0; 3], &[0.0; 3]);
        let mut s = s;
        s.states = vec![0.25, -1.0, 3.0];
        s.actions = vec![0.1, 0.2, 0.3];
        let stats = DatasetStats::identity(1, 1);
        assert_eq!(normalize(&s, &stats), s.flat_view());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in proptest::collection::vec(-5.0f64..5.0, 64), m in -1.0f64..1.0, sd in 0.01f64..3.0) {
            let stats = DatasetStats {
                state_mean: vec![m], state_std: vec![sd], action_mean: vec![-m], action_std: vec![sd * 0.5],
                ..DatasetStats::identity(1, 1)
            };
            let seg = Segment::from_flat(&values, 1, 1).unwrap();
            let back = denormalize(&normalize(&seg, &stats), &stats).unwrap();
            for (a, b) in back.flat_view().iter().zip(&values) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            prop_assert_eq!(Segment::from_flat(&seg.flat_view(), 1, 1).unwrap().flat_view(), values);
        }

        #[test]
        fn sums_match_brute_force(rs in proptest::collection::vec(-1.0f64..1.0, 1..40), g in 0.5f64..1.0) {
            let cs: Vec<f64> = rs.iter().map(|r| if *r > 0.0 { 1.0 } else { 0.0 }).collect();
            let s = seg_with(&rs, &cs);
            let brute_r: f64 = rs.iter().enumerate().map(|(t, r)| g.powi(t as i32) * r).sum();
            let brute_c: f64 = cs.iter().enumerate().map(|(t, c)| g.powi(t as i32) * c).sum();
            prop_assert!((compute_return(&s, g) - brute_r).abs() < 1e-9);
            prop_assert!((compute_cost(&s, g) - brute_c).abs() < 1e-9);
        }
    }
}
