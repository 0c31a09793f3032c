//! Training configuration and its plain-text `key = value` file form.
//!
//! ```text
//! # comments start with '#'
//! env = empty-room
//! variant = ppo_esil
//! epochs = 100
//! ```
//!
//! `env` is applied first, so per-environment defaults are in place before
//! the remaining keys override them. Unknown keys are rejected.

use std::fmt;
use std::str::FromStr;

use crate::env::EnvKind;
use crate::error::{EsilError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ppo,
    PpoSil,
    PpoSilHer,
    PpoEsil,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ppo, Variant::PpoSil, Variant::PpoSilHer, Variant::PpoEsil];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ppo => "ppo",
            Variant::PpoSil => "ppo_sil",
            Variant::PpoSilHer => "ppo_sil_her",
            Variant::PpoEsil => "ppo_esil",
        }
    }

    pub fn uses_sil(self) -> bool {
        matches!(self, Variant::PpoSil | Variant::PpoSilHer)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected ppo, ppo_sil, ppo_sil_her or ppo_esil)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub variant: Variant,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub updates_per_epoch: usize,
    pub minibatch_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub clip_ratio: f64,
    pub alpha: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub advantage_normalization: bool,
    pub selection_module: bool,
    /// Replaces the computed imitation weight when set.
    pub beta_override: Option<f64>,
    pub worker_count: usize,
    pub master_seed: u64,
    pub eval_episodes: usize,
    /// Grid world only: probability of executing a random action.
    pub random_action_prob: f64,
    pub sil_capacity: usize,
    pub sil_batch_size: usize,
    pub sil_value_loss: bool,
    pub sil_value_coef: f64,
    /// Write wall-clock seconds into the metrics file. Off by default so the
    /// file is a deterministic function of the config.
    pub record_timing: bool,
}

/// Every accepted key, in the order used by [`TrainConfig::to_config_text`].
pub const KEYS: &[&str] = &[
    "env",
    "variant",
    "epochs",
    "episodes_per_epoch",
    "updates_per_epoch",
    "minibatch_size",
    "hidden_sizes",
    "gamma",
    "learning_rate",
    "adam_epsilon",
    "clip_ratio",
    "alpha",
    "value_coef",
    "entropy_coef",
    "advantage_normalization",
    "selection_module",
    "beta_override",
    "worker_count",
    "master_seed",
    "eval_episodes",
    "random_action_prob",
    "sil_capacity",
    "sil_batch_size",
    "sil_value_loss",
    "sil_value_coef",
    "record_timing",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{value}`")),
    }
}

fn suggest(key: &str) -> String {
    let best = KEYS
        .iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3);
    match best {
        Some((_, k)) => format!("unknown key `{key}` (did you mean `{k}`?)"),
        None => format!("unknown key `{key}`"),
    }
}

impl TrainConfig {
    /// Defaults for `env`: the grid world uses 100 episodes per epoch,
    /// minibatches of 160 and one worker; the point tasks use 48 episodes,
    /// minibatches of 125, four workers and 300 epochs.
    pub fn for_env(env: EnvKind) -> Self {
        let grid = env == EnvKind::EmptyRoom;
        Self {
            env,
            variant: Variant::PpoEsil,
            epochs: if grid { 100 } else { 300 },
            episodes_per_epoch: if grid { 100 } else { 48 },
            updates_per_epoch: 10,
            minibatch_size: if grid { 160 } else { 125 },
            hidden_sizes: vec![256, 256, 256],
            gamma: 0.98,
            learning_rate: 3e-4,
            adam_epsilon: 1e-5,
            clip_ratio: 0.2,
            alpha: 1.0,
            value_coef: 1.0,
            entropy_coef: 0.0,
            advantage_normalization: false,
            selection_module: true,
            beta_override: None,
            worker_count: if grid { 1 } else { 4 },
            master_seed: 0,
            eval_episodes: 10,
            random_action_prob: 0.2,
            sil_capacity: crate::baselines::DEFAULT_CAPACITY,
            sil_batch_size: crate::baselines::DEFAULT_BATCH_SIZE,
            sil_value_loss: true,
            sil_value_coef: 0.01,
            record_timing: false,
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "env" => {
                let env: EnvKind = value.parse().map_err(|e: EsilError| e.to_string())?;
                if env != self.env {
                    *self = TrainConfig {
                        variant: self.variant,
                        master_seed: self.master_seed,
                        ..TrainConfig::for_env(env)
                    };
                }
            }
            "variant" => self.variant = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse_num(key, value)?,
            "updates_per_epoch" => self.updates_per_epoch = parse_num(key, value)?,
            "minibatch_size" => self.minibatch_size = parse_num(key, value)?,
            "hidden_sizes" => {
                self.hidden_sizes = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "gamma" => self.gamma = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(key, value)?,
            "clip_ratio" => self.clip_ratio = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "value_coef" => self.value_coef = parse_num(key, value)?,
            "entropy_coef" => self.entropy_coef = parse_num(key, value)?,
            "advantage_normalization" => self.advantage_normalization = parse_bool(key, value)?,
            "selection_module" => self.selection_module = parse_bool(key, value)?,
            "beta_override" => {
                self.beta_override = match value {
                    "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "worker_count" => self.worker_count = parse_num(key, value)?,
            "master_seed" => self.master_seed = parse_num(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, value)?,
            "random_action_prob" => self.random_action_prob = parse_num(key, value)?,
            "sil_capacity" => self.sil_capacity = parse_num(key, value)?,
            "sil_batch_size" => self.sil_batch_size = parse_num(key, value)?,
            "sil_value_loss" => self.sil_value_loss = parse_bool(key, value)?,
            "sil_value_coef" => self.sil_value_coef = parse_num(key, value)?,
            "record_timing" => self.record_timing = parse_bool(key, value)?,
            _ => return Err(suggest(key)),
        }
        Ok(())
    }

    /// Parses a config file body. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| EsilError::Config {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if entries.iter().any(|(_, k, _): &(usize, &str, &str)| *k == key) {
                return Err(EsilError::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            entries.push((line, key, value));
        }
        let mut config = TrainConfig::for_env(EnvKind::EmptyRoom);
        // `env` first so its defaults do not clobber explicit keys.
        entries.sort_by_key(|(_, k, _)| *k != "env");
        for (line, key, value) in entries {
            config
                .set(key, value)
                .map_err(|message| EsilError::Config { line, message })?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies `KEY=VALUE` overrides (e.g. from the command line) in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| EsilError::InvalidConfig(format!("override `{ov}` is not KEY=VALUE")))?;
            self.set(key.trim(), value.trim())
                .map_err(|m| EsilError::InvalidConfig(format!("override `{ov}`: {m}")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EsilError::InvalidConfig(m));
        for (name, v) in [
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("updates_per_epoch", self.updates_per_epoch),
            ("minibatch_size", self.minibatch_size),
            ("worker_count", self.worker_count),
            ("sil_capacity", self.sil_capacity),
            ("sil_batch_size", self.sil_batch_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.episodes_per_epoch.is_multiple_of(self.worker_count) {
            return fail(format!(
                "episodes_per_epoch ({}) must be divisible by worker_count ({})",
                self.episodes_per_epoch, self.worker_count
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return fail(format!("hidden_sizes must be non-empty and positive, got {:?}", self.hidden_sizes));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0) {
            return fail("learning_rate and adam_epsilon must be positive".into());
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return fail(format!("clip_ratio must lie in (0, 1), got {}", self.clip_ratio));
        }
        if self.alpha < 0.0 || self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.sil_value_coef < 0.0 {
            return fail("alpha, value_coef, entropy_coef and sil_value_coef must be non-negative".into());
        }
        if let Some(b) = self.beta_override {
            if !(0.0..=1.0).contains(&b) {
                return fail(format!("beta_override must lie in [0, 1], got {b}"));
            }
        }
        if !(0.0..=1.0).contains(&self.random_action_prob) {
            return fail(format!("random_action_prob must lie in [0, 1], got {}", self.random_action_prob));
        }
        Ok(())
    }

    /// Value of `key` in its text form.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "env" => self.env.to_string(),
            "variant" => self.variant.to_string(),
            "epochs" => self.epochs.to_string(),
            "episodes_per_epoch" => self.episodes_per_epoch.to_string(),
            "updates_per_epoch" => self.updates_per_epoch.to_string(),
            "minibatch_size" => self.minibatch_size.to_string(),
            "hidden_sizes" => self
                .hidden_sizes
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "gamma" => self.gamma.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adam_epsilon" => self.adam_epsilon.to_string(),
            "clip_ratio" => self.clip_ratio.to_string(),
            "alpha" => self.alpha.to_string(),
            "value_coef" => self.value_coef.to_string(),
            "entropy_coef" => self.entropy_coef.to_string(),
            "advantage_normalization" => self.advantage_normalization.to_string(),
            "selection_module" => self.selection_module.to_string(),
            "beta_override" => self.beta_override.map_or("none".into(), |b| b.to_string()),
            "worker_count" => self.worker_count.to_string(),
            "master_seed" => self.master_seed.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "random_action_prob" => self.random_action_prob.to_string(),
            "sil_capacity" => self.sil_capacity.to_string(),
            "sil_batch_size" => self.sil_batch_size.to_string(),
            "sil_value_loss" => self.sil_value_loss.to_string(),
            "sil_value_coef" => self.sil_value_coef.to_string(),
            "record_timing" => self.record_timing.to_string(),
            _ => return None,
        })
    }

    /// Fully resolved config; parsing it back yields an equal config.
    pub fn to_config_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_env(EnvKind::EmptyRoom)
    }
}
