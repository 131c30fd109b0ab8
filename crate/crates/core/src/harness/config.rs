//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Unknown keys, duplicate keys and
//! malformed values are reported with the offending key as the field path.
//! Missing keys keep their defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SpinError};
use crate::gflownet::SubTbConfig;
use crate::optim::Method;
use crate::selfplay::{AlphaSpinConfig, HistoryLength, LoserSource, LossKind};
use crate::task::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Vanilla SPIN: reference and losers from the previous iterate.
    Spin,
    AlphaSpin,
    /// Losers drawn from the reference policy.
    Consistent,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Spin => "spin",
            Mode::AlphaSpin => "alpha-spin",
            Mode::Consistent => "consistent",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spin" => Ok(Mode::Spin),
            "alpha-spin" => Ok(Mode::AlphaSpin),
            "consistent" => Ok(Mode::Consistent),
            _ => Err(format!("unknown mode {s:?} (spin, alpha-spin, consistent)")),
        }
    }
}

pub fn loss_name(l: LossKind) -> &'static str {
    match l {
        LossKind::Dpo => "dpo",
        LossKind::Ipo => "ipo",
        LossKind::Slic => "slic",
    }
}

pub fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    match s {
        "dpo" => Ok(LossKind::Dpo),
        "ipo" => Ok(LossKind::Ipo),
        "slic" => Ok(LossKind::Slic),
        _ => Err(format!("unknown loss {s:?} (dpo, ipo, slic)")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Single source of randomness for the task and the run.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub task: TaskSpec,
    pub spin: AlphaSpinConfig,
    /// In consistent mode, sample losers from a trained token-level sampler instead of the exact reference.
    pub gfn_enabled: bool,
    pub gfn: SubTbConfig,
    /// Seeded instances per loss for gradient checks.
    pub grad_check_instances: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            mode: Mode::AlphaSpin,
            task: TaskSpec::default(),
            spin: AlphaSpinConfig::default(),
            gfn_enabled: false,
            gfn: SubTbConfig::default(),
            grad_check_instances: 100,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> SpinError {
    SpinError::config(key, msg)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, format!("cannot parse {v:?}: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v:?}"))),
    }
}

fn method(key: &str, v: &str) -> Result<Method> {
    match v {
        "sgd" => Ok(Method::Sgd),
        "adam" => Ok(Method::Adam),
        _ => Err(bad(key, format!("expected sgd or adam, got {v:?}"))),
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Sgd => "sgd",
        Method::Adam => "adam",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                bad(
                    &format!("line {}", no + 1),
                    format!("expected `key = value`, got {line:?}"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(key, "set more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.spin;
        let g = &mut self.gfn;
        match key {
            "seed" => self.seed = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "mode" => self.mode = v.parse().map_err(|e: String| bad(key, e))?,
            "loss" => s.loss = parse_loss(v).map_err(|e| bad(key, e))?,
            "task.prompts" => self.task.prompts = num(key, v)?,
            "task.vocab_size" => self.task.vocab_size = num(key, v)?,
            "task.max_len" => self.task.max_len = num(key, v)?,
            "task.sft_size" => self.task.sft_size = num(key, v)?,
            "task.logit_scale" => self.task.logit_scale = num(key, v)?,
            "task.separation" => self.task.separation = num(key, v)?,
            "spin.alpha" => s.alpha = num(key, v)?,
            "spin.beta" => s.beta = num(key, v)?,
            "spin.history" => {
                s.history = if v == "inf" {
                    HistoryLength::Infinite
                } else {
                    HistoryLength::Finite(num(key, v)?)
                }
            }
            "spin.iterations" => s.iterations = num(key, v)?,
            "spin.triplets_iter0" => s.triplets_iter0 = num(key, v)?,
            "spin.triplets_per_iter" => s.triplets_per_iter = num(key, v)?,
            "spin.exact" => s.exact = boolean(key, v)?,
            "spin.record_wall_time" => s.record_wall_time = boolean(key, v)?,
            "loss.ipo_tau" => s.ipo.tau = num(key, v)?,
            "loss.slic_delta" => s.slic.delta = num(key, v)?,
            "loss.slic_lambda" => s.slic.lambda = num(key, v)?,
            "optim.method" => s.optimizer.method = method(key, v)?,
            "optim.lr" => s.optimizer.learning_rate = num(key, v)?,
            "optim.epochs" => s.optimizer.epochs = num(key, v)?,
            "optim.batch_size" => s.optimizer.batch_size = num(key, v)?,
            "optim.clip" => s.optimizer.clip_norm = if v == "none" { None } else { Some(num(key, v)?) },
            "gfn.enabled" => self.gfn_enabled = boolean(key, v)?,
            "gfn.lambda" => g.lambda_subtb = num(key, v)?,
            "gfn.method" => g.method = method(key, v)?,
            "gfn.lr" => g.learning_rate = num(key, v)?,
            "gfn.adam_eps" => g.adam_eps = num(key, v)?,
            "gfn.epochs" => g.epochs = num(key, v)?,
            "gfn.trajectories" => g.trajectories_per_epoch = num(key, v)?,
            "gfn.temperature" => g.exploration_temperature = num(key, v)?,
            "gfn.uniform_mix" => g.uniform_mix = num(key, v)?,
            "grad_check.instances" => self.grad_check_instances = num(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Propagates the run seed to every seeded component.
    pub fn sync_seed(&mut self) {
        self.task.seed = self.seed;
        self.spin.seed = self.seed;
        self.spin.optimizer.seed = self.seed;
        self.gfn.seed = self.seed;
        self.spin.losers = match (self.mode, self.gfn_enabled) {
            (Mode::Consistent, false) => LoserSource::ReferenceExact,
            (Mode::Consistent, true) => LoserSource::ReferenceGFlowNet(self.gfn),
            _ => LoserSource::History,
        };
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.spin.validate()?;
        self.gfn.validate()?;
        if self.grad_check_instances == 0 {
            return Err(bad("grad_check.instances", "must be at least 1"));
        }
        Ok(())
    }

    /// Text that [`ExperimentConfig::parse`] maps back to this configuration.
    pub fn to_text(&self) -> String {
        let s = &self.spin;
        let g = &self.gfn;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("mode", self.mode.as_str().into());
        kv("loss", loss_name(s.loss).into());
        kv("task.prompts", self.task.prompts.to_string());
        kv("task.vocab_size", self.task.vocab_size.to_string());
        kv("task.max_len", self.task.max_len.to_string());
        kv("task.sft_size", self.task.sft_size.to_string());
        kv("task.logit_scale", self.task.logit_scale.to_string());
        kv("task.separation", self.task.separation.to_string());
        kv("spin.alpha", s.alpha.to_string());
        kv("spin.beta", s.beta.to_string());
        kv(
            "spin.history",
            match s.history {
                HistoryLength::Infinite => "inf".into(),
                HistoryLength::Finite(h) => h.to_string(),
            },
        );
        kv("spin.iterations", s.iterations.to_string());
        kv("spin.triplets_iter0", s.triplets_iter0.to_string());
        kv("spin.triplets_per_iter", s.triplets_per_iter.to_string());
        kv("spin.exact", s.exact.to_string());
        kv("spin.record_wall_time", s.record_wall_time.to_string());
        kv("loss.ipo_tau", s.ipo.tau.to_string());
        kv("loss.slic_delta", s.slic.delta.to_string());
        kv("loss.slic_lambda", s.slic.lambda.to_string());
        kv("optim.method", method_name(s.optimizer.method).into());
        kv("optim.lr", s.optimizer.learning_rate.to_string());
        kv("optim.epochs", s.optimizer.epochs.to_string());
        kv("optim.batch_size", s.optimizer.batch_size.to_string());
        kv(
            "optim.clip",
            s.optimizer.clip_norm.map_or("none".into(), |c| c.to_string()),
        );
        kv("gfn.enabled", self.gfn_enabled.to_string());
        kv("gfn.lambda", g.lambda_subtb.to_string());
        kv("gfn.method", method_name(g.method).into());
        kv("gfn.lr", g.learning_rate.to_string());
        kv("gfn.adam_eps", g.adam_eps.to_string());
        kv("gfn.epochs", g.epochs.to_string());
        kv("gfn.trajectories", g.trajectories_per_epoch.to_string());
        kv("gfn.temperature", g.exploration_temperature.to_string());
        kv("gfn.uniform_mix", g.uniform_mix.to_string());
        kv("grad_check.instances", self.grad_check_instances.to_string());
        o
    }
}
