//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! [env]
//! env_id = ChainVel1D
//! T_ep = 64
//! [guidance]
//! r_us = auto
//! [planner]
//! schedule = 0:1,20:3,40:10
//! ```
//!
//! Missing keys take their defaults; unknown sections or keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};
use sdgd_core::dataset::{DatasetConfig, DEFAULT_FEASIBLE_LEN, DEFAULT_HORIZON, DEFAULT_P_UNCOND};
use sdgd_core::diffusion::{TrainConfig, DEFAULT_STEPS};
use sdgd_core::env::{EnvId, EnvSpec, DEFAULT_EPISODE_LEN};
use sdgd_core::guidance::{GuidanceConfig, DEFAULT_LAMBDA, DEFAULT_W};
use sdgd_core::planner::{BudgetMode, BudgetSchedule, PlannerConfig, Variant};
use sha2::{Digest, Sha256};

use crate::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSection {
    pub env_id: EnvId,
    pub t_ep: usize,
}

/// Fractions of behavior episodes per policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMix {
    pub safe: f64,
    pub greedy: f64,
    pub random: f64,
}

impl PolicyMix {
    /// Episode counts per policy (safe, greedy, random); rounding leftovers go to random.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let safe = ((self.safe * n as f64).round() as usize).min(n);
        let greedy = ((self.greedy * n as f64).round() as usize).min(n - safe);
        [safe, greedy, n - safe - greedy]
    }
}

impl std::fmt::Display for PolicyMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "safe:{},greedy:{},random:{}", self.safe, self.greedy, self.random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub n_episodes: usize,
    pub policy_mix: PolicyMix,
    pub horizon: usize,
    pub stride: usize,
    pub gamma: f64,
    pub gamma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSection {
    pub n_steps: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub p_uncond: f64,
    pub hidden: Vec<usize>,
    /// Training steps for the reward, cost and dynamics regressors.
    pub aux_steps: usize,
    pub aux_hidden: Vec<usize>,
    /// Weight-averaging decay applied to every trained network; `None` keeps the last iterate.
    pub ema: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSection {
    pub w: f64,
    pub lambda: f64,
    pub f: usize,
    /// `None` means `auto`.
    pub r_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSection {
    pub limit: f64,
    pub schedule: Option<String>,
    pub episodes: usize,
    pub seeds: usize,
    pub mode: BudgetMode,
    pub target_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    pub trials: usize,
    pub limit: f64,
    pub horizons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSection,
    pub data: DataSection,
    pub diffusion: DiffusionSection,
    pub guidance: GuidanceSection,
    pub planner: PlannerSection,
    pub diagnostics: DiagnosticsSection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvSection { env_id: EnvId::ChainVel1D, t_ep: DEFAULT_EPISODE_LEN },
            data: DataSection {
                n_episodes: 100,
                policy_mix: PolicyMix { safe: 0.4, greedy: 0.3, random: 0.3 },
                horizon: DEFAULT_HORIZON,
                stride: 4,
                gamma: 1.0,
                gamma_c: 1.0,
            },
            diffusion: DiffusionSection {
                n_steps: DEFAULT_STEPS,
                steps: 30_000,
                lr: 3e-4,
                batch: 128,
                p_uncond: DEFAULT_P_UNCOND,
                hidden: vec![256, 256, 256],
                aux_steps: 10_000,
                aux_hidden: vec![256, 256, 256],
                ema: Some(0.999),
            },
            guidance: GuidanceSection { w: DEFAULT_W, lambda: DEFAULT_LAMBDA, f: DEFAULT_FEASIBLE_LEN, r_us: None },
            planner: PlannerSection {
                limit: 8.0,
                schedule: None,
                episodes: 20,
                seeds: 3,
                mode: BudgetMode::Decrement,
                target_return: 0.9,
            },
            diagnostics: DiagnosticsSection { trials: 100, limit: 2.0, horizons: vec![4, 8, 16, 31] },
            seed: 0,
        }
    }
}

fn invalid(msg: String) -> ValidationError {
    ValidationError(msg)
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T, ValidationError> {
    value.trim().parse().map_err(|_| invalid(format!("{key}: expected {what}, got {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ValidationError> {
    value.split(',').map(|v| parse_value(key, v, "a comma-separated list of integers")).collect()
}

fn parse_mix(key: &str, value: &str) -> Result<PolicyMix, ValidationError> {
    let mut mix = PolicyMix { safe: 0.0, greedy: 0.0, random: 0.0 };
    for part in value.split(',') {
        let (name, frac) = part
            .split_once(':')
            .ok_or_else(|| invalid(format!("{key}: expected policy:fraction pairs, got {part:?}")))?;
        let frac: f64 = parse_value(key, frac, "a number")?;
        match name.trim() {
            "safe" => mix.safe = frac,
            "greedy" => mix.greedy = frac,
            "random" => mix.random = frac,
            other => return Err(invalid(format!("{key}: unknown policy {other:?}"))),
        }
    }
    Ok(mix)
}

fn list_to_string(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_str_checked(text: &str) -> Result<Self, ValidationError> {
        let ini = Ini::load_from_str(text).map_err(|e| invalid(format!("config syntax: {e}")))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(invalid(format!("{k}: key outside any [section]")));
                }
                continue;
            };
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        Self::from_str_checked(&text)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ValidationError> {
        let name = format!("{section}.{key}");
        let k = name.as_str();
        let v = value.trim();
        match (section, key) {
            ("env", "env_id") => self.env.env_id = parse_value(k, v, "PointHazard2D or ChainVel1D")?,
            ("env", "T_ep") => self.env.t_ep = parse_value(k, v, "an integer")?,
            ("data", "n_episodes") => self.data.n_episodes = parse_value(k, v, "an integer")?,
            ("data", "policy_mix") => self.data.policy_mix = parse_mix(k, v)?,
            ("data", "L") => self.data.horizon = parse_value(k, v, "an integer")?,
            ("data", "stride") => self.data.stride = parse_value(k, v, "an integer")?,
            ("data", "gamma") => self.data.gamma = parse_value(k, v, "a number")?,
            ("data", "gamma_c") => self.data.gamma_c = parse_value(k, v, "a number")?,
            ("diffusion", "N") => self.diffusion.n_steps = parse_value(k, v, "an integer")?,
            ("diffusion", "steps") => self.diffusion.steps = parse_value(k, v, "an integer")?,
            ("diffusion", "lr") => self.diffusion.lr = parse_value(k, v, "a number")?,
            ("diffusion", "batch") => self.diffusion.batch = parse_value(k, v, "an integer")?,
            ("diffusion", "p_uncond") => self.diffusion.p_uncond = parse_value(k, v, "a number")?,
            ("diffusion", "hidden") => self.diffusion.hidden = parse_list(k, v)?,
            ("diffusion", "aux_steps") => self.diffusion.aux_steps = parse_value(k, v, "an integer")?,
            ("diffusion", "aux_hidden") => self.diffusion.aux_hidden = parse_list(k, v)?,
            ("diffusion", "ema") => {
                self.diffusion.ema = if v == "off" { None } else { Some(parse_value(k, v, "a number or off")?) }
            }
            ("guidance", "w") => self.guidance.w = parse_value(k, v, "a number")?,
            ("guidance", "lambda") => self.guidance.lambda = parse_value(k, v, "a number")?,
            ("guidance", "f") => self.guidance.f = parse_value(k, v, "an integer")?,
            ("guidance", "r_us") => {
                self.guidance.r_us = if v == "auto" { None } else { Some(parse_value(k, v, "a number or auto")?) }
            }
            ("planner", "limit") => self.planner.limit = parse_value(k, v, "a number")?,
            ("planner", "schedule") => self.planner.schedule = Some(v.to_string()),
            ("planner", "episodes") => self.planner.episodes = parse_value(k, v, "an integer")?,
            ("planner", "seeds") => self.planner.seeds = parse_value(k, v, "an integer")?,
            ("planner", "mode") => self.planner.mode = parse_value(k, v, "static or decrement")?,
            ("planner", "target_return") => self.planner.target_return = parse_value(k, v, "a number")?,
            ("diagnostics", "trials") => self.diagnostics.trials = parse_value(k, v, "an integer")?,
            ("diagnostics", "limit") => self.diagnostics.limit = parse_value(k, v, "a number")?,
            ("diagnostics", "horizons") => self.diagnostics.horizons = parse_list(k, v)?,
            ("seed", "value") => self.seed = parse_value(k, v, "an unsigned integer")?,
            ("env" | "data" | "diffusion" | "guidance" | "planner" | "diagnostics" | "seed", _) => {
                return Err(invalid(format!("{k}: unknown key")))
            }
            _ => return Err(invalid(format!("[{section}]: unknown section"))),
        }
        Ok(())
    }

    /// Check every field; the message names the offending key.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(invalid(msg.to_string())) };
        let d = &self.data;
        check(self.env.t_ep >= 1, "env.T_ep must be at least 1")?;
        check(d.n_episodes >= 1, "data.n_episodes must be at least 1")?;
        let m = &d.policy_mix;
        check(m.safe >= 0.0 && m.greedy >= 0.0 && m.random >= 0.0, "data.policy_mix fractions must be non-negative")?;
        check((m.safe + m.greedy + m.random - 1.0).abs() < 1e-9, "data.policy_mix must sum to 1")?;
        check(d.horizon >= 2 && d.horizon <= self.env.t_ep, "data.L must lie in [2, T_ep]")?;
        check(d.stride >= 1, "data.stride must be at least 1")?;
        check(d.gamma > 0.0 && d.gamma <= 1.0, "data.gamma must lie in (0, 1]")?;
        check(d.gamma_c > 0.0 && d.gamma_c <= 1.0, "data.gamma_c must lie in (0, 1]")?;
        let df = &self.diffusion;
        check(df.n_steps >= 1, "diffusion.N must be at least 1")?;
        check(df.steps >= 1, "diffusion.steps must be at least 1")?;
        check(df.aux_steps >= 1, "diffusion.aux_steps must be at least 1")?;
        check(df.lr > 0.0 && df.lr.is_finite(), "diffusion.lr must be positive")?;
        check(df.batch >= 1, "diffusion.batch must be at least 1")?;
        check((0.0..=1.0).contains(&df.p_uncond), "diffusion.p_uncond must lie in [0, 1]")?;
        check(!df.hidden.is_empty() && !df.hidden.contains(&0), "diffusion.hidden needs positive widths")?;
        check(!df.aux_hidden.is_empty() && !df.aux_hidden.contains(&0), "diffusion.aux_hidden needs positive widths")?;
        check(df.ema.is_none_or(|d| (0.0..1.0).contains(&d)), "diffusion.ema must lie in [0, 1) or be off")?;
        self.guidance_config()
            .validate(d.horizon)
            .map_err(|e| invalid(format!("guidance.{}", strip_invalid(&e.to_string()))))?;
        let p = &self.planner;
        check(p.limit >= 0.0 && p.limit.is_finite(), "planner.limit must be >= 0")?;
        check(p.episodes >= 1, "planner.episodes must be at least 1")?;
        check(p.seeds >= 1, "planner.seeds must be at least 1")?;
        check((0.0..=1.0).contains(&p.target_return), "planner.target_return must lie in [0, 1]")?;
        if let Some(text) = &p.schedule {
            BudgetSchedule::parse(text, self.env.t_ep)
                .map_err(|e| invalid(format!("planner.schedule: {}", strip_invalid(&e.to_string()))))?;
        }
        let g = &self.diagnostics;
        check(g.trials >= 1, "diagnostics.trials must be at least 1")?;
        check(g.limit >= 0.0 && g.limit.is_finite(), "diagnostics.limit must be >= 0")?;
        check(
            !g.horizons.is_empty() && g.horizons.iter().all(|h| *h >= 1 && *h < d.horizon),
            "diagnostics.horizons must lie in [1, L - 1]",
        )?;
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::with_episode_len(self.env.env_id, self.env.t_ep)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            horizon: self.data.horizon,
            stride: self.data.stride,
            gamma: self.data.gamma,
            gamma_c: self.data.gamma_c,
            feasible_len: self.guidance.f,
            r_us: self.guidance.r_us,
        }
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        GuidanceConfig {
            w: self.guidance.w,
            lambda: self.guidance.lambda,
            feasible_len: self.guidance.f,
            r_us: self.guidance.r_us,
            p_uncond: self.diffusion.p_uncond,
        }
    }

    pub fn planner_config(&self, variant: Variant) -> PlannerConfig {
        PlannerConfig {
            horizon: self.data.horizon,
            replan: self.guidance.f,
            guidance: self.guidance_config(),
            mode: self.planner.mode,
            variant,
            target_return: self.planner.target_return,
        }
    }

    /// Denoiser training settings; `stream` separates the seeds of the models.
    pub fn train_config(&self, stream: u64) -> TrainConfig {
        TrainConfig {
            steps: self.diffusion.steps,
            batch: self.diffusion.batch,
            lr: self.diffusion.lr,
            p_uncond: self.diffusion.p_uncond,
            seed: sdgd_core::math::mix_seed(self.seed, stream),
            hidden: self.diffusion.hidden.clone(),
            log_every: 100,
            ema_decay: self.diffusion.ema,
        }
    }

    pub fn aux_train_config(&self, stream: u64) -> TrainConfig {
        TrainConfig { steps: self.diffusion.aux_steps, hidden: self.diffusion.aux_hidden.clone(), ..self.train_config(stream) }
    }

    /// The budget schedule used by `eval`: `schedule` if set, else the constant limit.
    pub fn budget_schedule(&self) -> Result<BudgetSchedule, ValidationError> {
        let r = match &self.planner.schedule {
            Some(text) => BudgetSchedule::parse(text, self.env.t_ep),
            None => BudgetSchedule::constant(self.planner.limit, self.env.t_ep),
        };
        r.map_err(|e| invalid(format!("planner: {}", strip_invalid(&e.to_string()))))
    }

    /// Canonical text form; parsing it yields `self`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let df = &self.diffusion;
        let g = &self.guidance;
        let p = &self.planner;
        let _ = writeln!(s, "[env]\nenv_id = {}\nT_ep = {}", self.env.env_id, self.env.t_ep);
        let _ = writeln!(
            s,
            "\n[data]\nn_episodes = {}\npolicy_mix = {}\nL = {}\nstride = {}\ngamma = {}\ngamma_c = {}",
            d.n_episodes, d.policy_mix, d.horizon, d.stride, d.gamma, d.gamma_c
        );
        let _ = writeln!(
            s,
            "\n[diffusion]\nN = {}\nsteps = {}\nlr = {}\nbatch = {}\np_uncond = {}\nhidden = {}\naux_steps = {}\naux_hidden = {}\nema = {}",
            df.n_steps,
            df.steps,
            df.lr,
            df.batch,
            df.p_uncond,
            list_to_string(&df.hidden),
            df.aux_steps,
            list_to_string(&df.aux_hidden),
            df.ema.map(|v| v.to_string()).unwrap_or_else(|| "off".into())
        );
        let r_us = g.r_us.map(|v| v.to_string()).unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "\n[guidance]\nw = {}\nlambda = {}\nf = {}\nr_us = {r_us}", g.w, g.lambda, g.f);
        let _ = writeln!(s, "\n[planner]\nlimit = {}", p.limit);
        if let Some(text) = &p.schedule {
            let _ = writeln!(s, "schedule = {text}");
        }
        let mode = match p.mode {
            BudgetMode::Static => "static",
            BudgetMode::Decrement => "decrement",
        };
        let _ = writeln!(
            s,
            "episodes = {}\nseeds = {}\nmode = {mode}\ntarget_return = {}",
            p.episodes, p.seeds, p.target_return
        );
        let _ = writeln!(
            s,
            "\n[diagnostics]\ntrials = {}\nlimit = {}\nhorizons = {}",
            self.diagnostics.trials,
            self.diagnostics.limit,
            list_to_string(&self.diagnostics.horizons)
        );
        let _ = writeln!(s, "\n[seed]\nvalue = {}", self.seed);
        s
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn strip_invalid(msg: &str) -> &str {
    msg.strip_prefix("invalid argument: ").unwrap_or(msg)
}
