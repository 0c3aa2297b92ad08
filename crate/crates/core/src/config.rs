//! Training configuration: flat `key = value` files, validation, and the
//! fixed set of ablation switches.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::distributional::ReturnSupport;
use crate::envs::{env_spec, EnvSpec};
use crate::error::{Error, Result};
use crate::network::{EncoderConfig, InitOverrides, InputProjection};
use crate::sac::{SacConfig, TargetMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticLoss {
    Categorical,
    Mse,
}

/// Every tunable of a run. `None` fields mean "derive from the
/// environment" and are filled in by [`TrainConfig::resolve`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    pub learning_starts: u64,
    pub utd: u32,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: Option<f64>,
    pub lr_init: f64,
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub tau: f64,
    pub hard_target: bool,
    pub hard_target_period: u64,
    pub initial_alpha: f64,
    pub target_entropy: Option<f64>,
    pub bc_lambda: f64,
    pub n_atom: usize,
    pub g_min: f64,
    pub g_max: f64,
    pub c_shift: f64,
    pub actor_hidden: usize,
    pub actor_blocks: usize,
    pub critic_hidden: usize,
    pub critic_blocks: usize,
    pub no_shift: bool,
    pub no_l2: bool,
    pub resize_projection: bool,
    pub use_layernorm: bool,
    pub critic_loss: CriticLoss,
    pub reward_scaling: bool,
    pub reward_bounding: bool,
    pub s_init_one: bool,
    pub s_scale_one: bool,
    pub alpha_init: Option<f64>,
    pub alpha_scale_one: bool,
    pub clipped_double_q: Option<bool>,
    pub eval_every: u64,
    pub eval_episodes: u32,
    pub telemetry_every: u64,
    pub checkpoint_every: u64,
    pub norm_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            seed: 0,
            total_steps: 30_000,
            learning_starts: 5_000,
            utd: 2,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            gamma: None,
            lr_init: 1e-4,
            lr_final: 3e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            tau: 5e-3,
            hard_target: false,
            hard_target_period: 200,
            initial_alpha: 1e-2,
            target_entropy: None,
            bc_lambda: 0.0,
            n_atom: 101,
            g_min: -5.0,
            g_max: 5.0,
            c_shift: 3.0,
            actor_hidden: 128,
            actor_blocks: 1,
            critic_hidden: 512,
            critic_blocks: 2,
            no_shift: false,
            no_l2: false,
            resize_projection: false,
            use_layernorm: false,
            critic_loss: CriticLoss::Categorical,
            reward_scaling: true,
            reward_bounding: true,
            s_init_one: false,
            s_scale_one: false,
            alpha_init: None,
            alpha_scale_one: false,
            clipped_double_q: None,
            eval_every: 1_000,
            eval_episodes: 10,
            telemetry_every: 100,
            checkpoint_every: 0,
            norm_eps: 1e-8,
        }
    }
}

/// Names accepted by [`TrainConfig::ablate`].
pub const ABLATIONS: &[&str] = &[
    "no_l2",
    "no_shift",
    "c_shift_1",
    "resize_projection",
    "mse_loss",
    "no_reward_scaling",
    "no_reward_bounding",
    "hard_target",
    "no_lr_decay",
    "s_init_1",
    "s_scale_1",
    "alpha_init_half",
    "alpha_scale_1",
    "use_layernorm",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{v}' for key '{key}'"))),
    }
}

fn parse_auto<T: std::str::FromStr>(
    key: &str,
    v: &str,
    inner: impl Fn(&str, &str) -> Result<T>,
) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        inner(key, v).map(Some)
    }
}

fn show_auto<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => {
                env_spec(v)?;
                self.env = v.to_string();
            }
            "seed" => self.seed = parse_num(key, v)?,
            "total_steps" => self.total_steps = parse_num(key, v)?,
            "learning_starts" => self.learning_starts = parse_num(key, v)?,
            "utd" => self.utd = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(key, v)?,
            "gamma" => self.gamma = parse_auto(key, v, parse_num)?,
            "lr_init" => self.lr_init = parse_num(key, v)?,
            "lr_final" => self.lr_final = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "hard_target" => self.hard_target = parse_bool(key, v)?,
            "hard_target_period" => self.hard_target_period = parse_num(key, v)?,
            "initial_alpha" => self.initial_alpha = parse_num(key, v)?,
            "target_entropy" => self.target_entropy = parse_auto(key, v, parse_num)?,
            "bc_lambda" => self.bc_lambda = parse_num(key, v)?,
            "n_atom" => self.n_atom = parse_num(key, v)?,
            "g_min" => self.g_min = parse_num(key, v)?,
            "g_max" => self.g_max = parse_num(key, v)?,
            "c_shift" => self.c_shift = parse_num(key, v)?,
            "actor_hidden" => self.actor_hidden = parse_num(key, v)?,
            "actor_blocks" => self.actor_blocks = parse_num(key, v)?,
            "critic_hidden" => self.critic_hidden = parse_num(key, v)?,
            "critic_blocks" => self.critic_blocks = parse_num(key, v)?,
            "no_shift" => self.no_shift = parse_bool(key, v)?,
            "no_l2" => self.no_l2 = parse_bool(key, v)?,
            "resize_projection" => self.resize_projection = parse_bool(key, v)?,
            "use_layernorm" => self.use_layernorm = parse_bool(key, v)?,
            "critic_loss" => {
                self.critic_loss = match v {
                    "categorical" => CriticLoss::Categorical,
                    "mse" => CriticLoss::Mse,
                    _ => {
                        return Err(Error::Config(format!(
                            "critic_loss must be categorical or mse, got '{v}'"
                        )))
                    }
                }
            }
            "reward_scaling" => self.reward_scaling = parse_bool(key, v)?,
            "reward_bounding" => self.reward_bounding = parse_bool(key, v)?,
            "s_init_one" => self.s_init_one = parse_bool(key, v)?,
            "s_scale_one" => self.s_scale_one = parse_bool(key, v)?,
            "alpha_init" => self.alpha_init = parse_auto(key, v, parse_num)?,
            "alpha_scale_one" => self.alpha_scale_one = parse_bool(key, v)?,
            "clipped_double_q" => self.clipped_double_q = parse_auto(key, v, parse_bool)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, v)?,
            "telemetry_every" => self.telemetry_every = parse_num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "norm_eps" => self.norm_eps = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{raw}'", n + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes every key; parsing the output gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.clone());
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("learning_starts", self.learning_starts.to_string());
        kv("utd", self.utd.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("gamma", show_auto(&self.gamma));
        kv("lr_init", self.lr_init.to_string());
        kv("lr_final", self.lr_final.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("tau", self.tau.to_string());
        kv("hard_target", self.hard_target.to_string());
        kv("hard_target_period", self.hard_target_period.to_string());
        kv("initial_alpha", self.initial_alpha.to_string());
        kv("target_entropy", show_auto(&self.target_entropy));
        kv("bc_lambda", self.bc_lambda.to_string());
        kv("n_atom", self.n_atom.to_string());
        kv("g_min", self.g_min.to_string());
        kv("g_max", self.g_max.to_string());
        kv("c_shift", self.c_shift.to_string());
        kv("actor_hidden", self.actor_hidden.to_string());
        kv("actor_blocks", self.actor_blocks.to_string());
        kv("critic_hidden", self.critic_hidden.to_string());
        kv("critic_blocks", self.critic_blocks.to_string());
        kv("no_shift", self.no_shift.to_string());
        kv("no_l2", self.no_l2.to_string());
        kv("resize_projection", self.resize_projection.to_string());
        kv("use_layernorm", self.use_layernorm.to_string());
        kv(
            "critic_loss",
            match self.critic_loss {
                CriticLoss::Categorical => "categorical".into(),
                CriticLoss::Mse => "mse".into(),
            },
        );
        kv("reward_scaling", self.reward_scaling.to_string());
        kv("reward_bounding", self.reward_bounding.to_string());
        kv("s_init_one", self.s_init_one.to_string());
        kv("s_scale_one", self.s_scale_one.to_string());
        kv("alpha_init", show_auto(&self.alpha_init));
        kv("alpha_scale_one", self.alpha_scale_one.to_string());
        kv("clipped_double_q", show_auto(&self.clipped_double_q));
        kv("eval_every", self.eval_every.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("telemetry_every", self.telemetry_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("norm_eps", self.norm_eps.to_string());
        s
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        env_spec(&self.env)?;
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity must hold at least one batch".into());
        }
        if !(self.lr_init >= 0.0 && self.lr_final >= 0.0) {
            return fail("learning rates must be non-negative".into());
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return fail(format!("gamma must lie in [0, 1), got {g}"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.hard_target_period == 0 {
            return fail("hard_target_period must be positive".into());
        }
        if !(self.initial_alpha > 0.0) {
            return fail("initial_alpha must be positive".into());
        }
        if self.n_atom < 2 || !(self.g_max > self.g_min) {
            return fail("return support needs n_atom >= 2 and g_max > g_min".into());
        }
        if !self.no_shift && !(self.c_shift > 0.0) {
            return fail(format!("c_shift must be positive, got {}", self.c_shift));
        }
        if self.actor_hidden == 0
            || self.critic_hidden == 0
            || self.actor_blocks == 0
            || self.critic_blocks == 0
        {
            return fail("network widths and depths must be positive".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be positive".into());
        }
        if !(self.adam_beta1 >= 0.0
            && self.adam_beta1 < 1.0
            && self.adam_beta2 >= 0.0
            && self.adam_beta2 < 1.0)
        {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.norm_eps > 0.0) {
            return fail("norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Applies one ablation switch by name.
    pub fn ablate(&self, flag: &str) -> Result<Self> {
        let mut c = self.clone();
        match flag {
            "no_l2" => c.no_l2 = true,
            "no_shift" => c.no_shift = true,
            "c_shift_1" => c.c_shift = 1.0,
            "resize_projection" => c.resize_projection = true,
            "mse_loss" => c.critic_loss = CriticLoss::Mse,
            "no_reward_scaling" => c.reward_scaling = false,
            "no_reward_bounding" => c.reward_bounding = false,
            "hard_target" => c.hard_target = true,
            "no_lr_decay" => c.lr_final = c.lr_init,
            "s_init_1" => c.s_init_one = true,
            "s_scale_1" => c.s_scale_one = true,
            "alpha_init_half" => c.alpha_init = Some(0.5),
            "alpha_scale_1" => c.alpha_scale_one = true,
            "use_layernorm" => c.use_layernorm = true,
            other => {
                return Err(Error::Usage(format!(
                    "unknown ablation '{other}'; known: {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Applies a `+`-joined list of ablations, e.g. `mse_loss+no_l2`.
    pub fn ablate_all(&self, flags: &str) -> Result<Self> {
        flags
            .split('+')
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .try_fold(self.clone(), |c, f| c.ablate(f))
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        env_spec(&self.env)
    }

    /// Replaces every `auto` field with its environment-derived value.
    pub fn resolve(&self) -> Result<Self> {
        let spec = self.spec()?;
        let mut c = self.clone();
        c.gamma.get_or_insert(spec.default_gamma);
        c.target_entropy
            .get_or_insert(-(spec.action_dim as f64) / 2.0);
        c.clipped_double_q
            .get_or_insert(spec.has_failure_termination);
        c.validate()?;
        Ok(c)
    }

    pub fn support(&self) -> Result<ReturnSupport> {
        ReturnSupport::new(self.g_min, self.g_max, self.n_atom)
    }

    fn projection(&self) -> InputProjection {
        if self.resize_projection && !self.no_shift {
            InputProjection::Resize
        } else {
            InputProjection::from_switches(self.no_shift, self.no_l2)
        }
    }

    fn encoder(&self, input_dim: usize, hidden: usize, blocks: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden,
            blocks,
            c_shift: self.c_shift,
            projection: self.projection(),
            use_layernorm: self.use_layernorm,
            init: InitOverrides {
                s_init_one: self.s_init_one,
                s_scale_one: self.s_scale_one,
                alpha_init: self.alpha_init,
                alpha_scale_one: self.alpha_scale_one,
            },
        }
    }

    pub fn actor_encoder(&self, spec: &EnvSpec) -> EncoderConfig {
        self.encoder(spec.obs_dim, self.actor_hidden, self.actor_blocks)
    }

    pub fn critic_encoder(&self, spec: &EnvSpec) -> EncoderConfig {
        self.encoder(
            spec.obs_dim + spec.action_dim,
            self.critic_hidden,
            self.critic_blocks,
        )
    }

    pub fn sac(&self, spec: &EnvSpec) -> SacConfig {
        SacConfig {
            gamma: self.gamma.unwrap_or(spec.default_gamma),
            target: if self.hard_target {
                TargetMode::Hard {
                    period: self.hard_target_period,
                }
            } else {
                TargetMode::Soft { tau: self.tau }
            },
            clipped: self
                .clipped_double_q
                .unwrap_or(spec.has_failure_termination),
            target_entropy: self
                .target_entropy
                .unwrap_or(-(spec.action_dim as f64) / 2.0),
            initial_alpha: self.initial_alpha,
            bc_lambda: self.bc_lambda,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
        }
    }
}
