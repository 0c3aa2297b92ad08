//! Replay buffer, the update-to-data training loop and evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{CriticLoss, TrainConfig};
use crate::envs::{make_env, Env, EnvSpec};
use crate::error::{dim_err, Error, Result};
use crate::network::{Actor, Critic, CriticKind};
use crate::normalizers::{RewardScaler, RunningStat};
use crate::optim::lr_schedule;
use crate::sac::{sample_actions, Agent, Batch, UpdateInfo};
use crate::telemetry::{self, Feature, TelemetryRecord};
use crate::tensor::Tensor;

/// One stored step. Observations are raw; the reward is already scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub scaled_reward: f64,
    pub next_obs: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

/// Ring buffer with uniform sampling over the filled part.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    terminated: Vec<bool>,
    truncated: Vec<bool>,
    /// Next slot to overwrite once full.
    pos: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            terminated: Vec::new(),
            truncated: Vec::new(),
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim
            || t.next_obs.len() != self.obs_dim
            || t.action.len() != self.act_dim
        {
            return Err(dim_err(
                "replay push",
                "transition does not match the buffer dimensions",
            ));
        }
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.rewards.push(t.scaled_reward);
            self.terminated.push(t.terminated);
            self.truncated.push(t.truncated);
        } else {
            let i = self.pos;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(&t.obs);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(&t.next_obs);
            self.rewards[i] = t.scaled_reward;
            self.terminated[i] = t.terminated;
            self.truncated[i] = t.truncated;
        }
        self.pos = (self.pos + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (o, a) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            scaled_reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            terminated: self.terminated[i],
            truncated: self.truncated[i],
        }
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::Usage("sampling from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.len())).collect())
    }

    /// Gathers rows `idx` into a batch, normalizing observations with `stat`.
    pub fn batch(&self, idx: &[usize], stat: &RunningStat, eps: f64) -> Result<Batch> {
        let (o, a, b) = (self.obs_dim, self.act_dim, idx.len());
        let mut obs = Vec::with_capacity(b * o);
        let mut next = Vec::with_capacity(b * o);
        let mut act = Vec::with_capacity(b * a);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            next.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            act.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
        }
        stat.normalize_batch(&mut obs, eps)?;
        stat.normalize_batch(&mut next, eps)?;
        Ok(Batch {
            obs: Tensor::new(vec![b, o], obs)?,
            actions: Tensor::new(vec![b, a], act)?,
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Tensor::new(vec![b, o], next)?,
            terminated: idx.iter().map(|&i| self.terminated[i]).collect(),
        })
    }

    /// Flat arrays for checkpoints: `(name, values)`.
    pub fn arrays(&self) -> Vec<(&'static str, Vec<f64>)> {
        let flags = |v: &[bool]| v.iter().map(|&b| f64::from(u8::from(b))).collect();
        vec![
            ("replay.obs", self.obs.clone()),
            ("replay.actions", self.actions.clone()),
            ("replay.rewards", self.rewards.clone()),
            ("replay.next_obs", self.next_obs.clone()),
            ("replay.terminated", flags(&self.terminated)),
            ("replay.truncated", flags(&self.truncated)),
            ("replay.pos", vec![self.pos as f64]),
        ]
    }

    pub fn load_arrays(&mut self, get: &dyn Fn(&str) -> Result<Vec<f64>>) -> Result<()> {
        let flags = |v: Vec<f64>| v.into_iter().map(|x| x != 0.0).collect::<Vec<bool>>();
        self.obs = get("replay.obs")?;
        self.actions = get("replay.actions")?;
        self.rewards = get("replay.rewards")?;
        self.next_obs = get("replay.next_obs")?;
        self.terminated = flags(get("replay.terminated")?);
        self.truncated = flags(get("replay.truncated")?);
        self.pos = get("replay.pos")?.first().copied().unwrap_or(0.0) as usize;
        let n = self.rewards.len();
        if self.obs.len() != n * self.obs_dim
            || self.next_obs.len() != n * self.obs_dim
            || self.actions.len() != n * self.act_dim
            || self.terminated.len() != n
            || self.truncated.len() != n
            || n > self.capacity
        {
            return Err(Error::Checkpoint("replay arrays are inconsistent".into()));
        }
        Ok(())
    }
}

/// One evaluation snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub env_step: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub alpha: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "env_step,eval_return_mean,eval_return_std,alpha,lr";

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        use telemetry::fmt_sig9 as f;
        format!(
            "{},{},{},{},{}",
            self.env_step,
            f(self.return_mean),
            f(self.return_std),
            f(self.alpha),
            f(self.lr)
        )
    }
}

/// Receives everything a run produces, in order.
pub trait Sink {
    fn eval(&mut self, _rec: &EvalRecord) -> Result<()> {
        Ok(())
    }
    fn telemetry(&mut self, _rec: &TelemetryRecord) -> Result<()> {
        Ok(())
    }
    /// Called every `checkpoint_every` env steps.
    fn checkpoint(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Keeps records in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub evals: Vec<EvalRecord>,
    pub telemetry: Vec<TelemetryRecord>,
}

impl Sink for MemorySink {
    fn eval(&mut self, rec: &EvalRecord) -> Result<()> {
        self.evals.push(*rec);
        Ok(())
    }
    fn telemetry(&mut self, rec: &TelemetryRecord) -> Result<()> {
        self.telemetry.push(*rec);
        Ok(())
    }
}

/// Hook run after every gradient update.
pub type Observer<'a> = dyn FnMut(&Agent, &UpdateInfo) -> Result<()> + 'a;

/// Full mutable state of a training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub spec: EnvSpec,
    pub agent: Agent,
    pub obs_stat: RunningStat,
    pub reward_scaler: RewardScaler,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub env: Box<dyn Env>,
    pub env_step: u64,
    pub(crate) current_obs: Vec<f64>,
    pub(crate) episode_start: bool,
}

/// Deterministic per-episode seed for evaluation rollouts.
fn eval_seed(seed: u64, env_step: u64, episode: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ env_step.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (episode as u64).wrapping_add(0x5851_F42D_4C95_7F2D)
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

impl Trainer {
    /// Builds networks, optimizer state and the first episode.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let spec = cfg.spec()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sac = cfg.sac(&spec);
        let actor = Actor::create(&cfg.actor_encoder(&spec), spec.action_dim, &mut rng)?;
        let kind = match cfg.critic_loss {
            CriticLoss::Categorical => CriticKind::Categorical(cfg.support()?),
            CriticLoss::Mse => CriticKind::Mse,
        };
        let n_critics = if sac.clipped { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|_| {
                Critic::create(
                    &cfg.critic_encoder(&spec),
                    spec.obs_dim,
                    kind.clone(),
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let agent = Agent::new(sac.clone(), actor, critics)?;
        let mut reward_scaler = RewardScaler::new(sac.gamma, cfg.g_max, cfg.norm_eps)?;
        if !cfg.reward_bounding {
            reward_scaler = reward_scaler.without_bounding();
        }
        let mut env = make_env(&cfg.env)?;
        let first = env.reset(rng.gen());
        let mut obs_stat = RunningStat::new(spec.obs_dim);
        obs_stat.update(&first)?;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity, spec.obs_dim, spec.action_dim),
            agent,
            obs_stat,
            reward_scaler,
            rng,
            env,
            env_step: 0,
            current_obs: first,
            episode_start: true,
            spec,
            cfg,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(
            self.env_step,
            self.cfg.total_steps,
            self.cfg.lr_init,
            self.cfg.lr_final,
        )
    }

    fn act(&mut self) -> Result<Vec<f64>> {
        let a = self.spec.action_dim;
        if self.env_step < self.cfg.learning_starts {
            return Ok((0..a).map(|_| self.rng.gen_range(-1.0..1.0)).collect());
        }
        let o = self
            .obs_stat
            .normalize(&self.current_obs, self.cfg.norm_eps)?;
        let noise: Vec<f64> = (0..a).map(|_| self.rng.sample(StandardNormal)).collect();
        let (act, _) = sample_actions(
            &self.agent.actor,
            &Tensor::new(vec![1, self.spec.obs_dim], o)?,
            &Tensor::new(vec![1, a], noise)?,
        )?;
        Ok(act.into_data())
    }

    /// Average undiscounted return of the deterministic policy `tanh(mean)`.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let mut env = make_env(&self.cfg.env)?;
        let mut returns = Vec::with_capacity(self.cfg.eval_episodes as usize);
        for ep in 0..self.cfg.eval_episodes {
            let mut obs = env.reset(eval_seed(self.cfg.seed, self.env_step, ep));
            let mut total = 0.0;
            loop {
                let o = self.obs_stat.normalize(&obs, self.cfg.norm_eps)?;
                let a = self.agent.actor.act_deterministic(&o)?;
                let r = env.step(&a);
                total += r.reward;
                obs = r.obs;
                if r.terminated || r.truncated {
                    break;
                }
            }
            returns.push(total);
        }
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok((mean, std_dev(&returns)))
    }

    fn telemetry_record(&self, info: &UpdateInfo) -> Result<Option<TelemetryRecord>> {
        let Some(cap) = &info.capture else {
            return Ok(None);
        };
        let critic = &self.agent.critics[0];
        let enc_counts = critic.encoder.feature_param_counts(&critic.store);
        let head_counts = critic.head.feature_param_counts(&critic.store);
        let enc: Vec<Feature> = cap
            .critic_encoder_features
            .iter()
            .zip(enc_counts)
            .map(|(v, n)| Feature {
                value: v.clone(),
                layer_params: n,
            })
            .collect();
        let pred: Vec<Feature> = cap
            .critic_predictor_features
            .iter()
            .zip(head_counts)
            .map(|(v, n)| Feature {
                value: v.clone(),
                layer_params: n,
            })
            .collect();
        let store = &cap.critic_params;
        telemetry::record(self.agent.updates, store, &cap.critic_grads, &enc, &pred).map(Some)
    }

    /// Runs until `stop_step` env steps (capped at `total_steps`).
    pub fn run_until(
        &mut self,
        stop_step: u64,
        sink: &mut dyn Sink,
        mut observer: Option<&mut Observer<'_>>,
    ) -> Result<()> {
        let stop = stop_step.min(self.cfg.total_steps);
        while self.env_step < stop {
            let action = self.act()?;
            let r = self.env.step(&action);
            let scaled = if self.cfg.reward_scaling {
                self.reward_scaler.step(r.reward, self.episode_start)
            } else {
                r.reward
            };
            self.buffer.push(&Transition {
                obs: std::mem::take(&mut self.current_obs),
                action,
                scaled_reward: scaled,
                next_obs: r.obs.clone(),
                terminated: r.terminated,
                truncated: r.truncated,
            })?;
            self.obs_stat.update(&r.obs)?;
            if r.terminated || r.truncated {
                let seed = self.rng.gen();
                self.current_obs = self.env.reset(seed);
                self.obs_stat.update(&self.current_obs)?;
                self.episode_start = true;
            } else {
                self.current_obs = r.obs;
                self.episode_start = false;
            }
            self.env_step += 1;

            if self.env_step > self.cfg.learning_starts {
                let lr = self.lr();
                for _ in 0..self.cfg.utd {
                    let idx = self
                        .buffer
                        .sample_indices(self.cfg.batch_size, &mut self.rng)?;
                    let batch = self.buffer.batch(&idx, &self.obs_stat, self.cfg.norm_eps)?;
                    let every = self.cfg.telemetry_every;
                    let capture = every > 0 && self.agent.updates % every == 0;
                    let info = self.agent.train_step(&batch, lr, &mut self.rng, capture)?;
                    if let Some(rec) = self.telemetry_record(&info)? {
                        sink.telemetry(&rec)?;
                    }
                    if let Some(obs) = observer.as_deref_mut() {
                        obs(&self.agent, &info)?;
                    }
                }
            }

            if self.cfg.eval_every > 0 && self.env_step % self.cfg.eval_every == 0 {
                let (mean, std) = self.evaluate()?;
                sink.eval(&EvalRecord {
                    env_step: self.env_step,
                    return_mean: mean,
                    return_std: std,
                    alpha: self.agent.alpha(),
                    lr: self.lr(),
                })?;
            }
            if self.cfg.checkpoint_every > 0 && self.env_step % self.cfg.checkpoint_every == 0 {
                sink.checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self, sink: &mut dyn Sink, observer: Option<&mut Observer<'_>>) -> Result<()> {
        self.run_until(self.cfg.total_steps, sink, observer)
    }
}
