//! Command implementations. Every artifact lives under one output directory:
//!
//! ```text
//! <out>/dataset.sdgd            gen-data
//! <out>/checkpoints/            train (and on-demand baselines)
//! <out>/train/*_loss.csv        loss traces
//! <out>/{eval,sweep,ablate,diagnose}/
//! ```
//!
//! Each CSV gets a `<name>.meta.json` sidecar.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sdgd_core::dataset::{Dataset, DatasetStats};
use sdgd_core::diagnostics::{self, CoupledConfig, DynamicsModel};
use sdgd_core::diffusion::{make_schedule, train_denoiser, CostConditioned, Denoiser, LossPoint, NoiseSchedule, ReturnConditioned};
use sdgd_core::env::{self, BehaviorPolicy, EnvId, EnvSpec, Episode};
use sdgd_core::guidance::{
    split_indices, train_cost_model, train_reward_model, CostModel, HeldOutReport, NoisyRegressor, RewardMode, RewardModel,
};
use sdgd_core::math::mix_seed;
use sdgd_core::planner::{
    episode_seeds, normalized_metrics, random_reference_return, run_episodes, BudgetSchedule, EpisodeRecord, Metrics, Models,
    SwappedModels, Variant, RANDOM_REFERENCE_EPISODES,
};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::io::{self, fmt_f64, fmt_opt, DatasetHeader, Table, DTYPE};
use crate::{ValidationError, VERSION};

/// Seed streams derived from the run seed.
mod stream {
    pub const DENOISER: u64 = 1;
    pub const REWARD_FTR: u64 = 2;
    pub const REWARD_RAW: u64 = 3;
    pub const COST: u64 = 4;
    pub const RETURN_DENOISER: u64 = 5;
    pub const DYNAMICS: u64 = 6;
    pub const EVAL: u64 = 100;
    pub const RANDOM_REFERENCE: u64 = 200;
    pub const DRIFT: u64 = 300;
    pub const ALIGNMENT: u64 = 301;
    pub const CORRELATION: u64 = 302;
    pub const ROLLOUT: u64 = 303;
    pub const F_SWEEP: u64 = 1000;
}

/// Default grids for `sweep`.
pub const LIMIT_VALUES: [f64; 3] = [2.0, 8.0, 16.0];
pub const LAMBDA_VALUES: [f64; 4] = [0.01, 0.02, 0.04, 0.08];
pub const W_VALUES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const F_VALUES: [usize; 4] = [0, 4, 8, 16];

/// A configured run rooted at an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    /// Progress lines go to stderr unless quiet.
    pub quiet: bool,
}

impl Run {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        Run { config, out: out.into(), quiet: false }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("dataset.sdgd")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn sidecar(&self, command: &str, extra: Value) -> Value {
        json!({
            "command": command,
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
            "version": VERSION,
            "details": extra,
        })
    }

    /// Write `<dir>/<name>.csv` and its metadata sidecar.
    fn write_table(&self, dir: &Path, name: &str, table: &Table, command: &str, extra: Value) -> Result<PathBuf> {
        let path = dir.join(format!("{name}.csv"));
        io::write_bytes(&path, &table.to_csv())?;
        let mut meta = self.sidecar(command, extra);
        meta["columns"] = json!(table.header);
        meta["rows"] = json!(table.rows.len());
        io::write_json(&dir.join(format!("{name}.meta.json")), &meta)?;
        Ok(path)
    }

    fn write_summary(&self, path: &Path, command: &str, summary: Value) -> Result<()> {
        io::write_json(path, &self.sidecar(command, summary))?;
        Ok(())
    }
}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

// ---------------------------------------------------------------- data

/// Behavior episodes per the policy mix, rounded to the stored precision.
pub fn generate_episodes(config: &RunConfig) -> Vec<Episode> {
    let spec = config.env_spec();
    let counts = config.data.policy_mix.counts(config.data.n_episodes);
    let policies = BehaviorPolicy::ALL.iter().zip(counts).flat_map(|(p, n)| std::iter::repeat_n(*p, n));
    policies
        .enumerate()
        .map(|(i, policy)| {
            let mut ep = env::rollout(&spec, policy, mix_seed(config.seed, i as u64));
            io::round_episode(&mut ep);
            ep
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub env_id: EnvId,
    pub n_episodes: usize,
    pub n_segments: usize,
    pub policy_counts: [usize; 3],
    pub r_min: f64,
    pub r_max: f64,
    pub c_max_seg: f64,
    pub r_us_bound: f64,
    pub r_us: f64,
    pub infeasible_segments: usize,
    pub best_episode_return: f64,
    pub stats: DatasetStats,
}

fn summarize(config: &RunConfig, ds: &Dataset) -> DataSummary {
    DataSummary {
        env_id: ds.env.id,
        n_episodes: ds.episodes.len(),
        n_segments: ds.len(),
        policy_counts: config.data.policy_mix.counts(ds.episodes.len()),
        r_min: ds.stats.r_min,
        r_max: ds.stats.r_max,
        c_max_seg: ds.stats.c_max_seg,
        r_us_bound: ds.resolved_r_us_bound(),
        r_us: ds.r_us,
        infeasible_segments: ds.labels.iter().filter(|l| l.h_f).count(),
        best_episode_return: ds.best_episode_return(),
        stats: ds.stats.clone(),
    }
}

pub fn gen_data(run: &Run, path: &Path) -> Result<DataSummary> {
    let cfg = &run.config;
    let spec = cfg.env_spec();
    let episodes = generate_episodes(cfg);
    let header = DatasetHeader {
        env_id: spec.id,
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
        episode_len: spec.episode_len,
        n_episodes: episodes.len(),
        gamma: cfg.data.gamma,
        gamma_c: cfg.data.gamma_c,
        dtype: DTYPE.into(),
    };
    io::save_dataset(path, &header, &episodes)?;
    let ds = Dataset::build(spec, episodes, cfg.dataset_config())?;
    Ok(summarize(cfg, &ds))
}

/// Load a dataset file and label it per the run configuration.
pub fn load_dataset(run: &Run, path: &Path) -> Result<Dataset> {
    let cfg = &run.config;
    let (header, episodes) = io::load_dataset(path).with_context(|| "missing or unreadable dataset; run gen-data first")?;
    if header.env_id != cfg.env.env_id || header.episode_len != cfg.env.t_ep {
        bail!(
            "dataset {} holds {} with T_ep {}, config expects {} with T_ep {}",
            path.display(),
            header.env_id,
            header.episode_len,
            cfg.env.env_id,
            cfg.env.t_ep
        );
    }
    let mut dc = cfg.dataset_config();
    dc.gamma = header.gamma;
    dc.gamma_c = header.gamma_c;
    Ok(Dataset::build(EnvSpec::with_episode_len(header.env_id, header.episode_len), episodes, dc)?)
}

// ---------------------------------------------------------------- checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DenoiserKind {
    CostConditioned,
    ReturnConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub kind: DenoiserKind,
    pub n_steps: usize,
    /// Leading coordinates trained clean (the start state).
    #[serde(default)]
    pub clean_prefix: usize,
    #[serde(default)]
    pub x0_bound: Option<f64>,
    pub horizon: usize,
    pub env_id: EnvId,
    pub episode_len: usize,
    pub stats: DatasetStats,
    pub best_episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorMeta {
    /// `ftr`, `raw` or `cost`.
    pub mode: String,
    pub f: usize,
    pub r_us: f64,
    pub n_steps: usize,
    pub target_mean: f64,
    pub target_std: f64,
    pub held_out_mse: f64,
}

fn save_net(dir: &Path, name: &str, net: &sdgd_core::approx::Mlp, meta: &impl Serialize) -> Result<()> {
    io::write_bytes(&dir.join(format!("{name}.params")), &io::encode_params(net))?;
    io::write_json(&dir.join(format!("{name}.json")), meta)?;
    Ok(())
}

fn load_net<M: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<(sdgd_core::approx::Mlp, M)> {
    let params = dir.join(format!("{name}.params"));
    let net = io::decode_params(&io::read_bytes(&params).with_context(|| format!("missing checkpoint {name}; run train first"))?)?;
    let meta = io::read_json(&dir.join(format!("{name}.json")))?;
    Ok((net, meta))
}

fn has_checkpoint(dir: &Path, name: &str) -> bool {
    dir.join(format!("{name}.params")).is_file() && dir.join(format!("{name}.json")).is_file()
}

fn denoiser_meta(ds: &Dataset, den: &Denoiser, kind: DenoiserKind) -> DenoiserMeta {
    DenoiserMeta {
        kind,
        n_steps: den.n_steps,
        clean_prefix: den.clean_prefix,
        x0_bound: den.x0_bound,
        horizon: ds.horizon(),
        env_id: ds.env.id,
        episode_len: ds.env.episode_len,
        stats: ds.stats.clone(),
        best_episode_return: ds.best_episode_return(),
    }
}

fn regressor_meta(mode: &str, ds: &Dataset, r: &NoisyRegressor, report: &HeldOutReport) -> RegressorMeta {
    RegressorMeta {
        mode: mode.into(),
        f: ds.config.feasible_len,
        r_us: ds.r_us,
        n_steps: r.n_steps,
        target_mean: r.target_mean,
        target_std: r.target_std,
        held_out_mse: report.mse,
    }
}

fn load_regressor(dir: &Path, name: &str) -> Result<(NoisyRegressor, RegressorMeta)> {
    let (net, meta): (_, RegressorMeta) = load_net(dir, name)?;
    let r = NoisyRegressor { net, n_steps: meta.n_steps, target_mean: meta.target_mean, target_std: meta.target_std };
    Ok((r, meta))
}

fn load_reward(dir: &Path, name: &str) -> Result<RewardModel> {
    let (regressor, meta) = load_regressor(dir, name)?;
    let mode = match meta.mode.as_str() {
        "ftr" => RewardMode::Ftr,
        "raw" => RewardMode::Raw,
        other => bail!("{name}: not a reward model (mode {other:?})"),
    };
    Ok(RewardModel { mode, feasible_len: meta.f, r_us: meta.r_us, regressor })
}

/// Trained cost-conditioned system loaded from a checkpoint directory.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    pub dir: PathBuf,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
    pub meta: DenoiserMeta,
    pub reward_ftr: RewardModel,
}

impl Checkpoints {
    pub fn load(dir: &Path) -> Result<Self> {
        let (net, meta): (_, DenoiserMeta) = load_net(dir, "denoiser")?;
        let denoiser = Denoiser::from_net(net, meta.n_steps)?.with_clean_prefix(meta.clean_prefix)?.with_x0_bound(meta.x0_bound)?;
        Ok(Checkpoints {
            dir: dir.to_path_buf(),
            schedule: make_schedule(meta.n_steps)?,
            denoiser,
            reward_ftr: load_reward(dir, "reward_ftr")?,
            meta,
        })
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::with_episode_len(self.meta.env_id, self.meta.episode_len)
    }

    pub fn denoiser_checksum(&self) -> String {
        hex(&Sha256::digest(io::encode_params(&self.denoiser.net)))
    }

    fn models<'a>(&'a self, reward: Option<&'a RewardModel>, swapped: Option<SwappedModels<'a>>) -> Models<'a> {
        Models { schedule: &self.schedule, denoiser: &self.denoiser, reward, swapped, stats: &self.meta.stats }
    }

    fn check_config(&self, config: &RunConfig) -> Result<()> {
        if self.meta.env_id != config.env.env_id || self.meta.horizon != config.data.horizon {
            bail!(
                "checkpoints were trained for {} with L = {}, config has {} with L = {}",
                self.meta.env_id,
                self.meta.horizon,
                config.env.env_id,
                config.data.horizon
            );
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn loss_table(trace: &[LossPoint]) -> Table {
    let mut t = Table::new(&["step", "loss"]);
    for p in trace {
        t.push(vec![p.step.to_string(), fmt_f64(p.loss)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub r_us: f64,
    pub r_us_auto: bool,
    pub r_us_bound: f64,
    pub denoiser_final_loss: f64,
    pub held_out_mse: Vec<(String, f64)>,
}

pub fn train(run: &Run, dataset: &Path, ckpt: &Path) -> Result<TrainSummary> {
    let cfg = &run.config;
    let ds = load_dataset(run, dataset)?;
    run.log(format!(
        "train: {} segments, r_us = {} ({}; bound {})",
        ds.len(),
        ds.r_us,
        if cfg.guidance.r_us.is_none() { "auto" } else { "configured" },
        ds.resolved_r_us_bound()
    ));
    let schedule = make_schedule(cfg.diffusion.n_steps)?;
    let trace_dir = run.out.join("train");

    run.log(format!("train: denoiser ({} steps)", cfg.diffusion.steps));
    let (den, trace) = train_denoiser(&CostConditioned(&ds), &schedule, &cfg.train_config(stream::DENOISER))?;
    save_net(ckpt, "denoiser", &den.net, &denoiser_meta(&ds, &den, DenoiserKind::CostConditioned))?;
    run.write_table(&trace_dir, "denoiser_loss", &loss_table(&trace), "train", json!({"model": "denoiser"}))?;
    let final_loss = trace.last().map_or(f64::NAN, |p| p.loss);

    let mut held_out = Vec::new();
    for (name, mode, s) in [
        ("reward_ftr", RewardMode::Ftr, stream::REWARD_FTR),
        ("reward_raw", RewardMode::Raw, stream::REWARD_RAW),
    ] {
        run.log(format!("train: {name} ({} steps)", cfg.diffusion.aux_steps));
        let (model, trace, report) = train_reward_model(&ds, &schedule, mode, &cfg.aux_train_config(s))?;
        save_net(ckpt, name, &model.regressor.net, &regressor_meta(mode.as_str(), &ds, &model.regressor, &report))?;
        run.write_table(&trace_dir, &format!("{name}_loss"), &loss_table(&trace), "train", json!({"model": name, "held_out": report}))?;
        held_out.push((name.to_string(), report.mse));
    }
    run.log(format!("train: cost ({} steps)", cfg.diffusion.aux_steps));
    let (cost, trace, report) = train_cost_model(&ds, &schedule, &cfg.aux_train_config(stream::COST))?;
    save_net(ckpt, "cost", &cost.regressor.net, &regressor_meta("cost", &ds, &cost.regressor, &report))?;
    run.write_table(&trace_dir, "cost_loss", &loss_table(&trace), "train", json!({"model": "cost", "held_out": report}))?;
    held_out.push(("cost".into(), report.mse));

    let summary = TrainSummary {
        r_us: ds.r_us,
        r_us_auto: cfg.guidance.r_us.is_none(),
        r_us_bound: ds.resolved_r_us_bound(),
        denoiser_final_loss: final_loss,
        held_out_mse: held_out,
    };
    run.write_summary(&ckpt.join("train_summary.json"), "train", serde_json::to_value(&summary)?)?;
    Ok(summary)
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed_index: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: Variant,
    pub schedule: String,
    /// Limit used for cost normalization (sum of piece limits).
    pub limit: f64,
    pub w: f64,
    pub lambda: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub overall: Metrics,
    /// Mean and standard error of the per-seed normalized costs.
    pub normalized_cost_mean: f64,
    pub normalized_cost_se: f64,
    pub normalized_reward_mean: f64,
    pub normalized_reward_se: f64,
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

/// Evaluation seeds `0..seeds` of a run.
pub fn eval_seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.planner.seeds as u64).map(|j| mix_seed(config.seed, stream::EVAL + j)).collect()
}

pub fn random_reference(config: &RunConfig, spec: &EnvSpec) -> f64 {
    random_reference_return(spec, RANDOM_REFERENCE_EPISODES, mix_seed(config.seed, stream::RANDOM_REFERENCE))
}

/// Everything that stays fixed while one trained system is re-evaluated.
pub struct Evaluator<'a> {
    pub config: &'a RunConfig,
    pub spec: EnvSpec,
    pub models: Models<'a>,
    pub r_rand: f64,
    pub r_best: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(config: &'a RunConfig, ck: &'a Checkpoints, swapped: Option<SwappedModels<'a>>) -> Result<Self> {
        ck.check_config(config)?;
        let spec = ck.env_spec();
        Ok(Evaluator {
            r_rand: random_reference(config, &spec),
            r_best: ck.meta.best_episode_return,
            models: ck.models(Some(&ck.reward_ftr), swapped),
            spec,
            config,
        })
    }

    /// Run `episodes × seeds` episodes (in one lockstep batch) for a variant.
    pub fn evaluate(&self, planner: &sdgd_core::planner::PlannerConfig, schedule: &BudgetSchedule) -> Result<Evaluation> {
        let seeds = eval_seeds(self.config);
        let per = self.config.planner.episodes;
        let all: Vec<u64> = seeds.iter().flat_map(|&s| episode_seeds(s, per)).collect();
        let records = run_episodes(&self.spec, &self.models, planner, schedule, &all)?;
        let limit: f64 = schedule.pieces().iter().map(|p| p.limit).sum();
        let per_seed = seeds
            .iter()
            .enumerate()
            .map(|(j, &seed)| {
                let metrics = normalized_metrics(&records[j * per..(j + 1) * per], limit, self.r_rand, self.r_best)?;
                Ok(SeedMetrics { seed_index: j, seed, metrics })
            })
            .collect::<Result<Vec<_>>>()?;
        let overall = normalized_metrics(&records, limit, self.r_rand, self.r_best)?;
        let nc: Vec<f64> = per_seed.iter().map(|s| s.metrics.normalized_cost).collect();
        let nr: Vec<f64> = per_seed.iter().map(|s| s.metrics.normalized_reward).collect();
        let (w, lambda) = planner.effective_weights();
        Ok(Evaluation {
            variant: planner.variant,
            schedule: schedule.to_string(),
            limit,
            w,
            lambda,
            per_seed,
            overall,
            normalized_cost_mean: sdgd_core::stats::mean(&nc),
            normalized_cost_se: sdgd_core::stats::std_err(&nc),
            normalized_reward_mean: sdgd_core::stats::mean(&nr),
            normalized_reward_se: sdgd_core::stats::std_err(&nr),
            records,
        })
    }
}

const METRIC_COLUMNS: [&str; 9] = [
    "seed_index",
    "seed",
    "episodes",
    "mean_return",
    "se_return",
    "mean_cost",
    "se_cost",
    "normalized_reward",
    "normalized_cost",
];

fn metric_cells(s: &SeedMetrics) -> Vec<String> {
    let m = &s.metrics;
    vec![
        s.seed_index.to_string(),
        s.seed.to_string(),
        m.episodes.to_string(),
        fmt_f64(m.mean_return),
        fmt_f64(m.se_return),
        fmt_f64(m.mean_cost),
        fmt_f64(m.se_cost),
        fmt_f64(m.normalized_reward),
        fmt_f64(m.normalized_cost),
    ]
}

fn table_with(prefix: &[&str]) -> Table {
    let cols: Vec<&str> = prefix.iter().copied().chain(METRIC_COLUMNS).collect();
    Table::new(&cols)
}

fn push_rows(table: &mut Table, prefix: &[String], eval: &Evaluation) {
    for s in &eval.per_seed {
        table.push(prefix.iter().cloned().chain(metric_cells(s)).collect());
    }
}

pub fn eval(run: &Run, ckpt: &Path) -> Result<Evaluation> {
    let cfg = &run.config;
    let ck = Checkpoints::load(ckpt)?;
    let ev = Evaluator::new(cfg, &ck, None)?;
    let schedule = cfg.budget_schedule()?;
    let result = ev.evaluate(&cfg.planner_config(Variant::Sdgd), &schedule)?;
    let dir = run.out.join("eval");
    io::write_json_lines(&dir.join("episodes.jsonl"), &result.records)?;
    let mut table = table_with(&["variant", "schedule", "limit"]);
    push_rows(&mut table, &[Variant::Sdgd.as_str().into(), result.schedule.clone(), fmt_f64(result.limit)], &result);
    run.write_table(&dir, "metrics", &table, "eval", json!({"r_rand": ev.r_rand, "r_best": ev.r_best}))?;
    run.write_summary(&dir.join("summary.json"), "eval", serde_json::to_value(&result)?)?;
    Ok(result)
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Limit,
    LambdaW,
    F,
}

impl std::str::FromStr for Axis {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, ValidationError> {
        match s {
            "limit" => Ok(Axis::Limit),
            "lambda-w" => Ok(Axis::LambdaW),
            "f" => Ok(Axis::F),
            other => Err(ValidationError(format!("axis: expected limit, lambda-w or f, got {other:?}"))),
        }
    }
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Limit => "limit",
            Axis::LambdaW => "lambda-w",
            Axis::F => "f",
        }
    }
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| validation(format!("values: bad number {v:?}"))))
        .collect()
}

/// Parse `--values` for an axis; `None` selects the default grid.
/// `lambda-w` values are `lambda:w` pairs.
pub fn axis_values(axis: Axis, values: Option<&str>) -> Result<Vec<Vec<f64>>> {
    let Some(text) = values else {
        return Ok(match axis {
            Axis::Limit => LIMIT_VALUES.iter().map(|v| vec![*v]).collect(),
            Axis::LambdaW => LAMBDA_VALUES.iter().flat_map(|l| W_VALUES.iter().map(move |w| vec![*l, *w])).collect(),
            Axis::F => F_VALUES.iter().map(|v| vec![*v as f64]).collect(),
        });
    };
    match axis {
        Axis::LambdaW => text
            .split(',')
            .map(|pair| {
                let (l, w) = pair.split_once(':').ok_or_else(|| validation(format!("values: expected lambda:w, got {pair:?}")))?;
                Ok(vec![parse_floats(l)?[0], parse_floats(w)?[0]])
            })
            .collect(),
        _ => Ok(parse_floats(text)?.into_iter().map(|v| vec![v]).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub values: Vec<f64>,
    pub evaluation: Evaluation,
}

pub fn sweep(run: &Run, axis: Axis, values: Option<&str>, dataset: &Path, ckpt: &Path) -> Result<Vec<SweepPoint>> {
    let cfg = &run.config;
    let points = axis_values(axis, values)?;
    for p in &points {
        let mut probe = cfg.clone();
        match axis {
            Axis::Limit => probe.planner.limit = p[0],
            Axis::LambdaW => (probe.guidance.lambda, probe.guidance.w) = (p[0], p[1]),
            Axis::F => {
                if p[0] < 0.0 || p[0].fract() != 0.0 {
                    return Err(validation(format!("values: f must be a non-negative integer, got {}", p[0])));
                }
                probe.guidance.f = (p[0] as usize).max(1);
            }
        }
        probe.planner.schedule = None;
        probe.validate()?;
    }
    let ck = Checkpoints::load(ckpt)?;
    let mut out = Vec::new();
    let mut checksums = Vec::new();
    let columns: &[&str] = match axis {
        Axis::LambdaW => &["axis", "lambda", "w"],
        _ => &["axis", "value"],
    };
    let mut table = table_with(columns);
    let ds = if axis == Axis::F { Some(load_dataset(run, dataset)?) } else { None };
    for p in points {
        let mut c = cfg.clone();
        let mut reward_override = None;
        match axis {
            Axis::Limit => c.planner.limit = p[0],
            Axis::LambdaW => (c.guidance.lambda, c.guidance.w) = (p[0], p[1]),
            Axis::F => {
                let f = p[0] as usize;
                if f == 0 {
                    reward_override = Some(load_reward(&ck.dir, "reward_raw")?);
                } else {
                    let mut ds = ds.clone().expect("dataset loaded for the f axis");
                    ds.relabel(f, c.guidance.r_us)?;
                    c.guidance.f = f;
                    run.log(format!("sweep: training reward model for f = {f}"));
                    let (model, _, _) =
                        train_reward_model(&ds, &ck.schedule, RewardMode::Ftr, &c.aux_train_config(stream::F_SWEEP + f as u64))?;
                    reward_override = Some(model);
                }
            }
        }
        let schedule = BudgetSchedule::constant(c.planner.limit, c.env.t_ep)?;
        let mut ev = Evaluator::new(&c, &ck, None)?;
        if let Some(r) = &reward_override {
            ev.models.reward = Some(r);
        }
        let evaluation = ev.evaluate(&c.planner_config(Variant::Sdgd), &schedule)?;
        checksums.push(ck.denoiser_checksum());
        let prefix: Vec<String> = std::iter::once(axis.as_str().to_string()).chain(p.iter().map(|v| fmt_f64(*v))).collect();
        push_rows(&mut table, &prefix, &evaluation);
        run.log(format!(
            "sweep {} {:?}: normalized cost {:.3}, normalized reward {:.3}",
            axis.as_str(),
            p,
            evaluation.normalized_cost_mean,
            evaluation.normalized_reward_mean
        ));
        out.push(SweepPoint { values: p, evaluation });
    }
    let dir = run.out.join("sweep");
    let name = axis.as_str().replace('-', "_");
    run.write_table(&dir, &name, &table, "sweep", json!({"axis": axis.as_str(), "denoiser_sha256": checksums}))?;
    Ok(out)
}

// ---------------------------------------------------------------- ablation

/// Return-conditioned denoiser and cost model for the swapped baseline,
/// trained into `ckpt` if absent.
pub fn swapped_models(run: &Run, dataset: &Path, ckpt: &Path) -> Result<(Denoiser, CostModel)> {
    let cfg = &run.config;
    let need_den = !has_checkpoint(ckpt, "return_denoiser");
    let need_cost = !has_checkpoint(ckpt, "cost");
    if need_den || need_cost {
        let ds = load_dataset(run, dataset)?;
        let schedule = make_schedule(cfg.diffusion.n_steps)?;
        if need_den {
            run.log("ablate: training return-conditioned denoiser");
            let (den, trace) = train_denoiser(&ReturnConditioned(&ds), &schedule, &cfg.train_config(stream::RETURN_DENOISER))?;
            save_net(ckpt, "return_denoiser", &den.net, &denoiser_meta(&ds, &den, DenoiserKind::ReturnConditioned))?;
            run.write_table(&run.out.join("train"), "return_denoiser_loss", &loss_table(&trace), "ablate", json!({}))?;
        }
        if need_cost {
            run.log("ablate: training cost model");
            let (cost, _, report) = train_cost_model(&ds, &schedule, &cfg.aux_train_config(stream::COST))?;
            save_net(ckpt, "cost", &cost.regressor.net, &regressor_meta("cost", &ds, &cost.regressor, &report))?;
        }
    }
    let (net, meta): (_, DenoiserMeta) = load_net(ckpt, "return_denoiser")?;
    let den = Denoiser::from_net(net, meta.n_steps)?.with_clean_prefix(meta.clean_prefix)?.with_x0_bound(meta.x0_bound)?;
    let (regressor, _) = load_regressor(ckpt, "cost")?;
    Ok((den, CostModel { regressor }))
}

pub fn ablate(run: &Run, dataset: &Path, ckpt: &Path) -> Result<Vec<Evaluation>> {
    let cfg = &run.config;
    let ck = Checkpoints::load(ckpt)?;
    let (ret_den, cost) = swapped_models(run, dataset, ckpt)?;
    let swapped = SwappedModels { denoiser: &ret_den, cost: &cost };
    let ev = Evaluator::new(cfg, &ck, Some(swapped))?;
    let schedule = cfg.budget_schedule()?;
    let mut table = table_with(&["variant", "w", "lambda", "limit"]);
    let mut out = Vec::new();
    for variant in Variant::ALL {
        let e = ev.evaluate(&cfg.planner_config(variant), &schedule)?;
        push_rows(&mut table, &[variant.as_str().into(), fmt_f64(e.w), fmt_f64(e.lambda), fmt_f64(e.limit)], &e);
        run.log(format!("ablate {}: normalized cost {:.3}, mean return {:.3}", variant.as_str(), e.normalized_cost_mean, e.overall.mean_return));
        out.push(e);
    }
    run.write_table(&run.out.join("ablate"), "ablate", &table, "ablate", json!({"schedule": schedule.to_string()}))?;
    Ok(out)
}

// ---------------------------------------------------------------- diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    Drift,
    Alignment,
    Correlation,
    Rollout,
}

impl std::str::FromStr for Diagnostic {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, ValidationError> {
        match s {
            "drift" => Ok(Diagnostic::Drift),
            "alignment" => Ok(Diagnostic::Alignment),
            "correlation" => Ok(Diagnostic::Correlation),
            "rollout" => Ok(Diagnostic::Rollout),
            other => Err(ValidationError(format!("which: expected drift, alignment, correlation or rollout, got {other:?}"))),
        }
    }
}

/// Held-out segments used by every diagnostic.
fn held_out(ds: &Dataset) -> Vec<usize> {
    split_indices(ds.len()).1
}

fn coupled(cfg: &RunConfig, s: u64) -> CoupledConfig {
    CoupledConfig {
        limit: cfg.diagnostics.limit,
        w: cfg.guidance.w,
        lambda: cfg.guidance.lambda,
        n_trials: cfg.diagnostics.trials,
        seed: mix_seed(cfg.seed, s),
    }
}

pub fn diagnose(run: &Run, which: Diagnostic, dataset: &Path, ckpt: &Path) -> Result<Value> {
    let cfg = &run.config;
    let ck = Checkpoints::load(ckpt)?;
    ck.check_config(cfg)?;
    let ds = load_dataset(run, dataset)?;
    let spec = ck.env_spec();
    let held = held_out(&ds);
    let starts: Vec<Vec<f64>> = held.iter().map(|&i| ds.segments[i].state(0).to_vec()).collect();
    let dir = run.out.join("diagnose");
    let stats = &ck.meta.stats;
    let summary = match which {
        Diagnostic::Drift => {
            let raw = load_reward(&ck.dir, "reward_raw")?;
            let r = diagnostics::coupled_drift_experiment(
                &spec,
                &ck.schedule,
                &ck.denoiser,
                stats,
                &raw,
                &ck.reward_ftr,
                &starts,
                &coupled(cfg, stream::DRIFT),
            )?;
            let mut t = Table::new(&["trial", "seed", "cost_c", "cost_r", "cost_r_hat", "delta_r", "delta_r_hat"]);
            for tr in &r.trials {
                t.push(vec![
                    tr.trial.to_string(),
                    tr.seed.to_string(),
                    fmt_f64(tr.cost_c),
                    fmt_f64(tr.cost_r),
                    fmt_f64(tr.cost_r_hat),
                    fmt_f64(tr.delta_r()),
                    fmt_f64(tr.delta_r_hat()),
                ]);
            }
            let summary = json!({
                "which": "drift",
                "trials": r.trials.len(),
                "mean_delta_r": r.mean_delta_r,
                "mean_delta_r_hat": r.mean_delta_r_hat,
                "mean_paired_diff": r.mean_paired_diff,
                "se_paired_diff": r.se_paired_diff,
                "sign_negatives": r.sign_negatives,
                "sign_positives": r.sign_positives,
                "sign_ties": r.sign_ties,
                "p_value": r.p_value,
            });
            run.write_table(&dir, "drift", &t, "diagnose", summary.clone())?;
            summary
        }
        Diagnostic::Alignment => {
            let r = diagnostics::estimate_alignment(
                &spec,
                &ck.schedule,
                &ck.denoiser,
                stats,
                cfg.guidance.f,
                &starts,
                &coupled(cfg, stream::ALIGNMENT),
            )?;
            let mut t = Table::new(&["trial", "seed", "a_hat"]);
            for tr in &r.trials {
                t.push(vec![tr.trial.to_string(), tr.seed.to_string(), fmt_f64(tr.a_hat)]);
            }
            let summary = json!({
                "which": "alignment",
                "trials": r.trials.len(),
                "f": cfg.guidance.f,
                "mean_a_hat": r.mean_a_hat,
                "se_a_hat": r.se_a_hat,
                "fraction_positive": r.fraction_positive,
            });
            run.write_table(&dir, "alignment", &t, "diagnose", summary.clone())?;
            summary
        }
        Diagnostic::Correlation => {
            let (regressor, _) = load_regressor(&ck.dir, "cost").context("cost model checkpoint")?;
            let cost = CostModel { regressor };
            let segs: Vec<Vec<f64>> = held.iter().map(|&i| ds.normalized[i].clone()).collect();
            let truth: Vec<f64> = held.iter().map(|&i| ds.labels[i].cost).collect();
            let curve = diagnostics::cost_classifier_correlation(&cost, &segs, &truth, &ck.schedule, mix_seed(cfg.seed, stream::CORRELATION))?;
            let mut t = Table::new(&["s", "pearson"]);
            for (i, r) in curve.pearson.iter().enumerate() {
                t.push(vec![(i + 1).to_string(), fmt_opt(*r)]);
            }
            let summary = json!({"which": "correlation", "segments": segs.len(), "spearman_r_vs_s": curve.spearman_r_vs_s});
            run.write_table(&dir, "correlation", &t, "diagnose", summary.clone())?;
            summary
        }
        Diagnostic::Rollout => {
            let dynamics = dynamics_model(run, &ds, &ck.dir)?;
            let segs: Vec<_> = held.iter().map(|&i| ds.segments[i].clone()).collect();
            let rows = diagnostics::rollout_error_experiment(
                &spec,
                &dynamics,
                &ck.schedule,
                &ck.denoiser,
                stats,
                &segs,
                &cfg.diagnostics.horizons,
                mix_seed(cfg.seed, stream::ROLLOUT),
            )?;
            let mut t = Table::new(&["horizon", "autoregressive", "joint"]);
            for r in &rows {
                t.push(vec![r.horizon.to_string(), fmt_f64(r.autoregressive), fmt_f64(r.joint)]);
            }
            let summary = json!({"which": "rollout", "segments": segs.len(), "rows": rows});
            run.write_table(&dir, "rollout", &t, "diagnose", summary.clone())?;
            summary
        }
    };
    Ok(summary)
}

/// One-step dynamics model, trained into the checkpoint directory on first use.
pub fn dynamics_model(run: &Run, ds: &Dataset, ckpt: &Path) -> Result<DynamicsModel> {
    if has_checkpoint(ckpt, "dynamics") {
        let (net, stats) = load_net(ckpt, "dynamics")?;
        return Ok(DynamicsModel { net, stats });
    }
    run.log("diagnose: training dynamics model");
    let (model, trace) = diagnostics::train_dynamics(ds, &run.config.aux_train_config(stream::DYNAMICS))?;
    save_net(ckpt, "dynamics", &model.net, &model.stats)?;
    run.write_table(&run.out.join("train"), "dynamics_loss", &loss_table(&trace), "diagnose", json!({}))?;
    Ok(model)
}
