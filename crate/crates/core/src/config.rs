//! Plain `key=value` training configuration.
//!
//! One pair per line, `#` starts a comment. Absent keys take the defaults
//! below; `--set key=value` overrides are applied after the file. Keys of
//! the form `env.<name>` override a physical constant of the environment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::envs::{self, Environment};
use crate::error::{Error, Result};
use crate::numerics::DEFAULT_RANK_TOL;
use crate::replay::DEFAULT_CAPACITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `α_i = α / √(i + 1)`
    InvSqrt,
}

impl LrSchedule {
    fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::InvSqrt => "inv_sqrt",
        }
    }
}

/// Step sizes for the lifting, critic and actor parameters at one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub lift: f64,
    pub critic: f64,
    pub actor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub env_overrides: BTreeMap<String, f64>,
    pub gamma: f64,
    pub alpha_f: f64,
    pub alpha_j: f64,
    pub alpha_mu: f64,
    pub lr_schedule: LrSchedule,
    pub episodes: usize,
    /// Steps per episode; `None` uses the environment's default.
    pub horizon: Option<usize>,
    pub batch: usize,
    /// Network output width of the lifting; `None` means `max(2n, 8)`.
    pub lift_dim: Option<usize>,
    pub lift_augment: bool,
    pub lift_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub noise_sigma0: f64,
    pub noise_decay: f64,
    pub seed: u64,
    pub grad_clip: f64,
    pub buffer_capacity: usize,
    pub rank_tol: f64,
    pub dump_buffer: bool,
    /// Gradient steps on the lifting during `sysid`.
    pub sysid_iters: usize,
    /// Fraction of a dump held out for `sysid` evaluation.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: "double_integrator".into(),
            env_overrides: BTreeMap::new(),
            gamma: 0.99,
            alpha_f: 40.0,
            alpha_j: 20.0,
            alpha_mu: 3e-3,
            lr_schedule: LrSchedule::Constant,
            episodes: 300,
            horizon: None,
            batch: 64,
            lift_dim: None,
            lift_augment: false,
            lift_hidden: vec![32],
            critic_hidden: vec![64],
            actor_hidden: vec![32],
            noise_sigma0: 0.3,
            noise_decay: 0.99,
            seed: 0,
            grad_clip: 0.01,
            buffer_capacity: DEFAULT_CAPACITY,
            rank_tol: DEFAULT_RANK_TOL,
            dump_buffer: false,
            sysid_iters: 2000,
            holdout: 0.2,
        }
    }
}

/// Every key `parse_config` accepts, besides `env.<constant>`.
pub const KEYS: &[&str] = &[
    "env",
    "gamma",
    "alpha_f",
    "alpha_J",
    "alpha_mu",
    "lr_schedule",
    "episodes",
    "horizon",
    "batch",
    "lift_dim",
    "lift_augment",
    "lift_hidden",
    "critic_hidden",
    "actor_hidden",
    "noise_sigma0",
    "noise_decay",
    "seed",
    "grad_clip",
    "buffer_capacity",
    "rank_tol",
    "dump_buffer",
    "sysid_iters",
    "holdout",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} for {key}"))
}

fn parse_widths(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
    if value.is_empty() || value == "-" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("{key}: bad width {w:?}")),
            Ok(v) => Ok(v),
        })
        .collect()
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("cannot parse {value:?} for {key} as a boolean")),
    }
}

impl TrainConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if let Some(constant) = key.strip_prefix("env.") {
            let v: f64 = parse_num(key, value)?;
            self.env_overrides.insert(constant.to_string(), v);
            return Ok(());
        }
        match key {
            "env" => self.env = value.to_string(),
            "gamma" => self.gamma = parse_num(key, value)?,
            "alpha_f" => self.alpha_f = parse_num(key, value)?,
            "alpha_J" => self.alpha_j = parse_num(key, value)?,
            "alpha_mu" => self.alpha_mu = parse_num(key, value)?,
            "lr_schedule" => {
                self.lr_schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "inv_sqrt" => LrSchedule::InvSqrt,
                    _ => return Err(format!("lr_schedule must be constant or inv_sqrt, got {value:?}")),
                }
            }
            "episodes" => self.episodes = parse_num(key, value)?,
            "horizon" => {
                self.horizon = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "batch" => self.batch = parse_num(key, value)?,
            "lift_dim" => {
                self.lift_dim = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "lift_augment" => self.lift_augment = parse_bool(key, value)?,
            "lift_hidden" => self.lift_hidden = parse_widths(key, value)?,
            "critic_hidden" => self.critic_hidden = parse_widths(key, value)?,
            "actor_hidden" => self.actor_hidden = parse_widths(key, value)?,
            "noise_sigma0" => self.noise_sigma0 = parse_num(key, value)?,
            "noise_decay" => self.noise_decay = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "grad_clip" => self.grad_clip = parse_num(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, value)?,
            "rank_tol" => self.rank_tol = parse_num(key, value)?,
            "dump_buffer" => self.dump_buffer = parse_bool(key, value)?,
            "sysid_iters" => self.sysid_iters = parse_num(key, value)?,
            "holdout" => self.holdout = parse_num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Step sizes at update iteration `i` (0-based).
    pub fn step_sizes(&self, i: usize) -> StepSizes {
        let s = match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::InvSqrt => 1.0 / ((i + 1) as f64).sqrt(),
        };
        StepSizes {
            lift: self.alpha_f * s,
            critic: self.alpha_j * s,
            actor: self.alpha_mu * s,
        }
    }

    pub fn make_env(&self) -> Result<Box<dyn Environment + Send + Sync>> {
        envs::make_env(&self.env, &self.env_overrides).map_err(|e| Error::config(None, e.to_string()))
    }

    /// Network output width of the lifting for state dimension `n`.
    pub fn lift_net_dim(&self, n: usize) -> usize {
        self.lift_dim.unwrap_or((2 * n).max(8))
    }

    /// Lifted dimension `r` including the appended state, if any.
    pub fn lifted_dim(&self, n: usize) -> usize {
        self.lift_net_dim(n) + if self.lift_augment { n } else { 0 }
    }

    pub fn horizon_for(&self, env: &dyn Environment) -> usize {
        self.horizon.unwrap_or(env.spec().horizon)
    }

    /// Checks value ranges, the step-size ordering, and `N ≥ r + m`.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::config(None, msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for (k, v) in [("alpha_f", self.alpha_f), ("alpha_J", self.alpha_j), ("alpha_mu", self.alpha_mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{k} must be positive, got {v}"));
            }
        }
        // Both schedules scale all three rates by the same factor, so the
        // ordering at i = 0 implies it at every iteration.
        if !(self.alpha_f > self.alpha_j && self.alpha_j > self.alpha_mu) {
            return err(format!(
                "learning rates must satisfy alpha_f > alpha_J > alpha_mu (convergence order of lifting, critic, actor); got {} , {} , {}",
                self.alpha_f, self.alpha_j, self.alpha_mu
            ));
        }
        if !(self.noise_sigma0 >= 0.0 && self.noise_sigma0.is_finite()) {
            return err(format!("noise_sigma0 must be >= 0, got {}", self.noise_sigma0));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return err(format!("noise_decay must lie in (0, 1], got {}", self.noise_decay));
        }
        if !(self.grad_clip > 0.0) {
            return err(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.rank_tol >= 0.0) {
            return err(format!("rank_tol must be >= 0, got {}", self.rank_tol));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return err(format!("holdout must lie in (0, 1), got {}", self.holdout));
        }
        if self.lift_dim == Some(0) {
            return err("lift_dim must be positive".into());
        }
        if self.horizon == Some(0) {
            return err("horizon must be at least 1".into());
        }
        if self.batch == 0 {
            return err("batch must be positive".into());
        }
        if self.buffer_capacity < self.batch {
            return err(format!(
                "buffer_capacity {} smaller than batch {}",
                self.buffer_capacity, self.batch
            ));
        }
        let env = self.make_env()?;
        let (n, m) = (env.spec().state_dim, env.spec().action_dim);
        let need = self.lifted_dim(n) + m;
        if self.batch < need {
            return err(format!(
                "batch {} must be at least r + m = {need} for the least-squares fit",
                self.batch
            ));
        }
        Ok(())
    }

    /// Resolved configuration as `key=value` lines, parseable by [`parse_config_str`].
    pub fn to_kv(&self) -> String {
        let widths = |w: &[usize]| {
            if w.is_empty() {
                "-".to_string()
            } else {
                w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            }
        };
        let mut s = String::new();
        let _ = writeln!(s, "env={}", self.env);
        for (k, v) in &self.env_overrides {
            let _ = writeln!(s, "env.{k}={v:?}");
        }
        let _ = writeln!(s, "gamma={:?}", self.gamma);
        let _ = writeln!(s, "alpha_f={:?}", self.alpha_f);
        let _ = writeln!(s, "alpha_J={:?}", self.alpha_j);
        let _ = writeln!(s, "alpha_mu={:?}", self.alpha_mu);
        let _ = writeln!(s, "lr_schedule={}", self.lr_schedule.name());
        let _ = writeln!(s, "episodes={}", self.episodes);
        let _ = writeln!(s, "horizon={}", self.horizon.map_or("auto".into(), |h| h.to_string()));
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "lift_dim={}", self.lift_dim.map_or("auto".into(), |h| h.to_string()));
        let _ = writeln!(s, "lift_augment={}", self.lift_augment);
        let _ = writeln!(s, "lift_hidden={}", widths(&self.lift_hidden));
        let _ = writeln!(s, "critic_hidden={}", widths(&self.critic_hidden));
        let _ = writeln!(s, "actor_hidden={}", widths(&self.actor_hidden));
        let _ = writeln!(s, "noise_sigma0={:?}", self.noise_sigma0);
        let _ = writeln!(s, "noise_decay={:?}", self.noise_decay);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "grad_clip={:?}", self.grad_clip);
        let _ = writeln!(s, "buffer_capacity={}", self.buffer_capacity);
        let _ = writeln!(s, "rank_tol={:?}", self.rank_tol);
        let _ = writeln!(s, "dump_buffer={}", self.dump_buffer);
        let _ = writeln!(s, "sysid_iters={}", self.sysid_iters);
        let _ = writeln!(s, "holdout={:?}", self.holdout);
        s
    }
}

/// Parses configuration text, then applies `overrides` (`key=value` strings).
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line_no), format!("expected key=value, got {line:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|msg| Error::config(Some(line_no), msg))?;
    }
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(None, format!("override {ov:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|msg| Error::config(None, format!("override {ov:?}: {msg}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}
