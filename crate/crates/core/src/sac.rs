//! Soft actor-critic objectives and the combined update step.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributional::{kl_critic_loss, ReturnSupport};
use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::network::{actor_sample, Actor, Critic, CriticKind};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetMode {
    /// Exponential moving average with rate `tau`.
    Soft { tau: f64 },
    /// Full copy every `period` updates.
    Hard { period: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub target: TargetMode,
    /// Two critics with the lower-expected-Q target; one critic otherwise.
    pub clipped: bool,
    pub target_entropy: f64,
    pub initial_alpha: f64,
    /// Behavior-cloning weight; zero for online training.
    pub bc_lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        match self.target {
            TargetMode::Soft { tau } if !(tau > 0.0 && tau <= 1.0) => {
                return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")))
            }
            TargetMode::Hard { period: 0 } => {
                return Err(Error::Config("hard target period must be positive".into()))
            }
            _ => {}
        }
        if !(self.initial_alpha > 0.0) {
            return Err(Error::Config("initial temperature must be positive".into()));
        }
        if self.bc_lambda < 0.0 {
            return Err(Error::Config("bc weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// A sampled minibatch. Observations are already normalized and rewards
/// already scaled.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor,
    pub terminated: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self) -> Result<()> {
        let b = self.rewards.len();
        if b == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        if self.obs.rows() != b
            || self.actions.rows() != b
            || self.next_obs.rows() != b
            || self.terminated.len() != b
        {
            return Err(dim_err("batch", "row counts disagree"));
        }
        Ok(())
    }
}

/// Bootstrapped target for one critic family.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticTarget {
    /// `[b, n_atom]` projected target probabilities.
    Categorical(Tensor),
    /// `[b, 1]` scalar regression targets.
    Scalar(Tensor),
}

/// Projected target distribution of a single transition: the next-state
/// atoms become `r + (1 - terminated) * gamma * (atom - alpha_logp)`.
pub fn categorical_target(
    support: &ReturnSupport,
    next_probs: &[f64],
    reward: f64,
    terminated: bool,
    gamma: f64,
    alpha_logp: f64,
) -> Vec<f64> {
    let values: Vec<f64> = if terminated {
        vec![reward; support.len()]
    } else {
        support
            .atoms()
            .iter()
            .map(|z| reward + gamma * (z - alpha_logp))
            .collect()
    };
    support.project(&values, next_probs)
}

/// Policy sample without a gradient tape: `(actions, log_probs)`.
pub fn sample_actions(actor: &Actor, obs: &Tensor, noise: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = actor.store.bind(&mut g, false);
    let x = g.constant(obs.clone());
    let out = actor.forward(&mut g, &bound, x)?;
    let s = actor_sample(&mut g, out.mean, out.log_std, noise)?;
    Ok((
        g.value(s.action).clone(),
        g.value(s.log_prob).data().to_vec(),
    ))
}

struct TargetEval {
    q: Vec<f64>,
    probs: Option<Tensor>,
}

fn eval_target(critic: &Critic, obs: &Tensor, actions: &Tensor) -> Result<TargetEval> {
    let mut g = Graph::new();
    let bound = critic.store.bind(&mut g, false);
    let o = g.constant(obs.clone());
    let a = g.constant(actions.clone());
    let out = critic.forward(&mut g, &bound, o, a)?;
    Ok(TargetEval {
        q: g.value(out.q).data().to_vec(),
        probs: out.probs.map(|p| g.value(p).clone()),
    })
}

/// Target for the critic loss given next actions and their log-densities.
/// With several target critics the one with the lower expected Q is used
/// for each sample, whole distribution included.
#[allow(clippy::too_many_arguments)]
pub fn critic_target_dist(
    targets: &[Critic],
    next_obs: &Tensor,
    next_actions: &Tensor,
    next_log_probs: &[f64],
    rewards: &[f64],
    terminated: &[bool],
    gamma: f64,
    alpha: f64,
) -> Result<CriticTarget> {
    if targets.is_empty() {
        return Err(Error::Usage("no target critic".into()));
    }
    let evals = targets
        .iter()
        .map(|c| eval_target(c, next_obs, next_actions))
        .collect::<Result<Vec<_>>>()?;
    let b = rewards.len();
    let pick = |i: usize| {
        (0..evals.len())
            .min_by(|&x, &y| evals[x].q[i].total_cmp(&evals[y].q[i]))
            .expect("non-empty")
    };
    match targets[0].support() {
        Some(support) => {
            let n = support.len();
            let mut out = Vec::with_capacity(b * n);
            for i in 0..b {
                let probs = evals[pick(i)].probs.as_ref().expect("categorical");
                out.extend(categorical_target(
                    support,
                    probs.row(i),
                    rewards[i],
                    terminated[i],
                    gamma,
                    alpha * next_log_probs[i],
                ));
            }
            Ok(CriticTarget::Categorical(Tensor::new(vec![b, n], out)?))
        }
        None => {
            let y = (0..b)
                .map(|i| {
                    let boot = if terminated[i] { 0.0 } else { 1.0 };
                    let q = evals[pick(i)].q[i];
                    rewards[i] + boot * gamma * (q - alpha * next_log_probs[i])
                })
                .collect();
            Ok(CriticTarget::Scalar(Tensor::new(vec![b, 1], y)?))
        }
    }
}

/// Loss value, parameter gradients and captured activations of one
/// critic pass.
pub struct CriticPass {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Residual-stream features `h^0..h^L`.
    pub encoder_features: Vec<Tensor>,
    /// Scaled head projection and head output.
    pub predictor_features: Vec<Tensor>,
    pub q: Vec<f64>,
}

/// Forward and backward pass of the critic loss.
pub fn critic_loss(
    critic: &Critic,
    obs: &Tensor,
    actions: &Tensor,
    target: &CriticTarget,
) -> Result<CriticPass> {
    let mut g = Graph::new();
    let bound = critic.store.bind(&mut g, true);
    let o = g.constant(obs.clone());
    let a = g.constant(actions.clone());
    let out = critic.forward(&mut g, &bound, o, a)?;
    let loss = match (target, out.probs) {
        (CriticTarget::Categorical(t), Some(p)) => kl_critic_loss(&mut g, p, t)?,
        (CriticTarget::Scalar(y), None) => {
            let y = g.constant(y.clone());
            let d = g.sub(out.q, y)?;
            let sq = g.square(d);
            g.mean(sq)
        }
        _ => return Err(Error::Usage("critic head and target kind disagree".into())),
    };
    g.backward(loss)?;
    Ok(CriticPass {
        loss: g.value(loss).data()[0],
        grads: critic.store.grads(&g, &bound),
        encoder_features: out
            .encoder
            .features
            .iter()
            .map(|v| g.value(*v).clone())
            .collect(),
        predictor_features: vec![
            g.value(out.head.hidden).clone(),
            g.value(out.head.out).clone(),
        ],
        q: g.value(out.q).data().to_vec(),
    })
}

/// Result of an actor pass.
pub struct ActorPass {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub log_probs: Vec<f64>,
    pub encoder_features: Vec<Tensor>,
}

/// `mean(alpha * log pi(a|o) - Q_min(o, a))` with `a` reparameterized from
/// `noise`, plus `lambda * |mean Q| * mean_b ||a - a_data||^2` when a
/// behavior-cloning term is given. The Q magnitude is treated as a constant.
pub fn actor_loss(
    actor: &Actor,
    critics: &[Critic],
    obs: &Tensor,
    noise: &Tensor,
    alpha: f64,
    bc: Option<(&Tensor, f64)>,
) -> Result<ActorPass> {
    if critics.is_empty() {
        return Err(Error::Usage("no critic".into()));
    }
    let mut g = Graph::new();
    let bound = actor.store.bind(&mut g, true);
    let o = g.constant(obs.clone());
    let pol = actor.forward(&mut g, &bound, o)?;
    let s = actor_sample(&mut g, pol.mean, pol.log_std, noise)?;
    let mut q_min = None;
    for c in critics {
        let cb = c.store.bind(&mut g, false);
        let q = c.forward(&mut g, &cb, o, s.action)?.q;
        q_min = Some(match q_min {
            None => q,
            Some(m) => g.minimum(m, q)?,
        });
    }
    let q_min = q_min.expect("non-empty");
    let ent = g.scale(s.log_prob, alpha);
    let per = g.sub(ent, q_min)?;
    let mut loss = g.mean(per);
    if let Some((data_actions, lambda)) = bc {
        if lambda > 0.0 {
            let q_mag = g.value(q_min).data().iter().sum::<f64>().abs() / obs.rows() as f64;
            let bc_term = bc_penalty(&mut g, s.action, data_actions, lambda * q_mag)?;
            loss = g.add(loss, bc_term)?;
        }
    }
    g.backward(loss)?;
    Ok(ActorPass {
        loss: g.value(loss).data()[0],
        grads: actor.store.grads(&g, &bound),
        log_probs: g.value(s.log_prob).data().to_vec(),
        encoder_features: pol
            .encoder
            .features
            .iter()
            .map(|v| g.value(*v).clone())
            .collect(),
    })
}

/// `weight * mean_b sum_j (action - data_action)^2`.
pub fn bc_penalty(g: &mut Graph, action: Var, data_actions: &Tensor, weight: f64) -> Result<Var> {
    let target = g.constant(data_actions.clone());
    let d = g.sub(action, target)?;
    let sq = g.square(d);
    let per_row = g.sum_lastaxis(sq);
    let m = g.mean(per_row);
    Ok(g.scale(m, weight))
}

/// `-exp(log_alpha) * mean(log_pi + target_entropy)` and its derivative
/// with respect to `log_alpha` (log-probabilities are constants).
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    let m =
        log_probs.iter().map(|l| l + target_entropy).sum::<f64>() / log_probs.len().max(1) as f64;
    let loss = -log_alpha.exp() * m;
    (loss, loss)
}

/// `target <- (1 - tau) * target + tau * online`, then re-projection of the
/// constrained rows.
pub fn ema_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Usage(format!("tau must lie in (0, 1], got {tau}")));
    }
    target.lerp_from(online, tau);
    target.project_constrained();
    Ok(())
}

/// What one update produced.
pub struct UpdateInfo {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    /// Temperature used during this update.
    pub alpha: f64,
    pub mean_log_prob: f64,
    pub capture: Option<Capture>,
}

/// Activations and gradients kept for telemetry and invariant checks,
/// recorded after the backward passes and before any optimizer step.
pub struct Capture {
    /// First critic's parameters at the time the gradients were taken.
    pub critic_params: ParamStore,
    pub critic_grads: Vec<Tensor>,
    pub critic_encoder_features: Vec<Tensor>,
    pub critic_predictor_features: Vec<Tensor>,
    pub actor_encoder_features: Vec<Tensor>,
    pub q: Vec<f64>,
}

/// Online networks, targets, temperature and optimizer state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: SacConfig,
    pub actor: Actor,
    pub critics: Vec<Critic>,
    pub targets: Vec<Critic>,
    pub log_alpha: f64,
    pub actor_opt: Adam,
    pub critic_opts: Vec<Adam>,
    pub alpha_opt: Adam,
    pub updates: u64,
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("noise")
}

fn ensure_finite(v: f64, what: &str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: format!("{what} = {v}"),
            update_step: step,
        })
    }
}

impl Agent {
    /// `critics` must hold two networks when `cfg.clipped`, one otherwise.
    pub fn new(cfg: SacConfig, actor: Actor, critics: Vec<Critic>) -> Result<Self> {
        cfg.validate()?;
        let want = if cfg.clipped { 2 } else { 1 };
        if critics.len() != want {
            return Err(Error::Config(format!(
                "expected {want} critics, got {}",
                critics.len()
            )));
        }
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        Ok(Self {
            actor_opt: Adam::for_store(&actor.store, b1, b2),
            critic_opts: critics
                .iter()
                .map(|c| Adam::for_store(&c.store, b1, b2))
                .collect(),
            alpha_opt: Adam::new([1], b1, b2),
            log_alpha: cfg.initial_alpha.ln(),
            targets: critics.clone(),
            critics,
            actor,
            cfg,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Critic step, actor step, temperature step, weight projection on all
    /// online networks, then the target update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        lr: f64,
        rng: &mut R,
        capture: bool,
    ) -> Result<UpdateInfo> {
        batch.check()?;
        let step = self.updates;
        let b = batch.len();
        let act_dim = self.actor.action_dim();
        let alpha = self.alpha();

        let next_noise = gaussian(b, act_dim, rng);
        let (next_actions, next_logp) = sample_actions(&self.actor, &batch.next_obs, &next_noise)?;
        let target = critic_target_dist(
            &self.targets,
            &batch.next_obs,
            &next_actions,
            &next_logp,
            &batch.rewards,
            &batch.terminated,
            self.cfg.gamma,
            alpha,
        )?;

        let mut critic_total = 0.0;
        let mut captured = None;
        for (k, critic) in self.critics.iter_mut().enumerate() {
            let pass = critic_loss(critic, &batch.obs, &batch.actions, &target)?;
            ensure_finite(pass.loss, "critic loss", step)?;
            critic_total += pass.loss;
            let before = (capture && k == 0).then(|| critic.store.clone());
            self.critic_opts[k].step(&mut critic.store, &pass.grads, lr)?;
            if let Some(before) = before {
                captured = Some((pass, before));
            }
        }

        let noise = gaussian(b, act_dim, rng);
        let bc = (self.cfg.bc_lambda > 0.0).then_some((&batch.actions, self.cfg.bc_lambda));
        let apass = actor_loss(&self.actor, &self.critics, &batch.obs, &noise, alpha, bc)?;
        ensure_finite(apass.loss, "actor loss", step)?;
        self.actor_opt
            .step(&mut self.actor.store, &apass.grads, lr)?;

        let (alpha_loss, alpha_grad) =
            temperature_loss(self.log_alpha, &apass.log_probs, self.cfg.target_entropy);
        ensure_finite(alpha_loss, "temperature loss", step)?;
        let mut la = [self.log_alpha];
        self.alpha_opt
            .step_slices(&mut [&mut la[..]], &[&[alpha_grad][..]], lr)?;
        self.log_alpha = la[0];

        self.actor.store.project_constrained();
        for c in &mut self.critics {
            c.store.project_constrained();
        }

        self.updates += 1;
        let tau = match self.cfg.target {
            TargetMode::Soft { tau } => Some(tau),
            TargetMode::Hard { period } => (self.updates % period == 0).then_some(1.0),
        };
        if let Some(tau) = tau {
            for (t, c) in self.targets.iter_mut().zip(&self.critics) {
                ema_update(&mut t.store, &c.store, tau)?;
            }
        }

        let mean_log_prob = apass.log_probs.iter().sum::<f64>() / b as f64;
        Ok(UpdateInfo {
            critic_loss: critic_total / self.critics.len() as f64,
            actor_loss: apass.loss,
            alpha_loss,
            alpha,
            mean_log_prob,
            capture: captured.map(|(p, params)| Capture {
                critic_params: params,
                critic_grads: p.grads,
                critic_encoder_features: p.encoder_features,
                critic_predictor_features: p.predictor_features,
                actor_encoder_features: apass.encoder_features,
                q: p.q,
            }),
        })
    }

    /// Every constrained matrix of the online and target networks.
    pub fn max_row_norm_deviation(&self) -> f64 {
        std::iter::once(&self.actor.store)
            .chain(self.critics.iter().map(|c| &c.store))
            .chain(self.targets.iter().map(|c| &c.store))
            .map(ParamStore::max_row_norm_deviation)
            .fold(0.0, f64::max)
    }

    /// Distributional critics need a support; used to check configs.
    pub fn support(&self) -> Option<&ReturnSupport> {
        self.critics[0].support()
    }

    pub fn critic_kind(&self) -> &CriticKind {
        &self.critics[0].kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::EncoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(clipped: bool) -> SacConfig {
        SacConfig {
            gamma: 0.99,
            target: TargetMode::Soft { tau: 5e-3 },
            clipped,
            target_entropy: -0.5,
            initial_alpha: 1e-2,
            bc_lambda: 0.0,
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    fn agent(clipped: bool, kind: CriticKind, seed: u64) -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Actor::create(&EncoderConfig::new(3, 16, 1), 1, &mut rng).unwrap();
        let n = if clipped { 2 } else { 1 };
        let critics = (0..n)
            .map(|_| {
                Critic::create(&EncoderConfig::new(4, 16, 1), 3, kind.clone(), &mut rng).unwrap()
            })
            .collect();
        Agent::new(cfg(clipped), actor, critics).unwrap()
    }

    fn batch(b: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |c: usize, s: f64| {
            Tensor::new(
                vec![b, c],
                (0..b * c).map(|_| s * rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let obs = t(3, 1.5);
        let actions = t(1, 0.9);
        let next_obs = t(3, 1.5);
        let rewards = t(1, 0.5).into_data();
        Batch {
            obs,
            actions,
            rewards,
            next_obs,
            terminated: (0..b).map(|i| i % 5 == 0).collect(),
        }
    }

    fn support() -> ReturnSupport {
        ReturnSupport::new(-5.0, 5.0, 101).unwrap()
    }

    #[test]
    fn terminal_target_is_point_mass_at_reward() {
        let s = support();
        let probs = vec![1.0 / 101.0; 101];
        let t = categorical_target(&s, &probs, 0.0, true, 0.99, 0.3);
        assert!((t[50] - 1.0).abs() < 1e-12);
        let t0 = categorical_target(&s, &probs, 0.25, false, 0.0, 0.3);
        let mut onehot = vec![0.0; 101];
        onehot[3] = 1.0;
        let t1 = categorical_target(&s, &onehot, 0.25, false, 0.0, 0.3);
        assert!(t0.iter().zip(&t1).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn two_atom_hand_example() {
        // atoms {0, 1}; next probs (0.4, 0.6); r = 0.1, gamma = 0.5,
        // alpha log pi = -0.2 -> shifted atoms 0.2 and 0.7.
        let s = ReturnSupport::new(0.0, 1.0, 2).unwrap();
        let t = categorical_target(&s, &[0.4, 0.6], 0.1, false, 0.5, -0.2);
        let want0 = 0.4 * 0.8 + 0.6 * 0.3;
        assert!((t[0] - want0).abs() < 1e-12 && (t[1] - (1.0 - want0)).abs() < 1e-12);
    }

    #[test]
    fn ema_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online =
            Critic::create(&EncoderConfig::new(4, 8, 1), 3, CriticKind::Mse, &mut rng).unwrap();
        let mut target =
            Critic::create(&EncoderConfig::new(4, 8, 1), 3, CriticKind::Mse, &mut rng).unwrap();
        assert!(ema_update(&mut target.store, &online.store, 0.0).is_err());
        ema_update(&mut target.store, &online.store, 1.0).unwrap();
        for (a, b) in target.store.iter().zip(online.store.iter()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_contracts_towards_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online =
            Critic::create(&EncoderConfig::new(4, 8, 1), 3, CriticKind::Mse, &mut rng).unwrap();
        let mut target =
            Critic::create(&EncoderConfig::new(4, 8, 1), 3, CriticKind::Mse, &mut rng).unwrap();
        let dist = |t: &ParamStore| -> f64 {
            t.iter()
                .zip(online.store.iter())
                .map(|(a, b)| {
                    a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = dist(&target.store);
        for _ in 0..50 {
            ema_update(&mut target.store, &online.store, 0.2).unwrap();
            let d = dist(&target.store);
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn temperature_fixed_point_and_sign() {
        let (_, g) = temperature_loss(0.3, &[0.5, 0.5], -0.5);
        assert_eq!(g, 0.0);
        // entropy below target: log pi large, so the gradient is negative and
        // a descent step raises log_alpha
        let (_, g) = temperature_loss(0.3, &[2.0, 1.0], -0.5);
        assert!(g < 0.0);
        let h = 1e-6;
        let lp = [0.3, -1.2, 0.7];
        let fd = (temperature_loss(0.1 + h, &lp, -1.0).0 - temperature_loss(0.1 - h, &lp, -1.0).0)
            / (2.0 * h);
        let g = temperature_loss(0.1, &lp, -1.0).1;
        assert!(((fd - g) / g).abs() < 1e-6);
    }

    #[test]
    fn zero_alpha_frozen_critic_gives_minus_q() {
        let a = agent(false, CriticKind::Categorical(support()), 3);
        let bt = batch(8, 4);
        let noise = gaussian(8, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let pass = actor_loss(&a.actor, &a.critics, &bt.obs, &noise, 0.0, None).unwrap();
        let (acts, _) = sample_actions(&a.actor, &bt.obs, &noise).unwrap();
        let q = eval_target(&a.critics[0], &bt.obs, &acts).unwrap().q;
        let mean_q = q.iter().sum::<f64>() / 8.0;
        assert!((pass.loss + mean_q).abs() < 1e-12);
        // alpha raises the weight of the entropy term linearly
        let p1 = actor_loss(&a.actor, &a.critics, &bt.obs, &noise, 0.5, None).unwrap();
        let mean_lp = pass.log_probs.iter().sum::<f64>() / 8.0;
        assert!((p1.loss - pass.loss - 0.5 * mean_lp).abs() < 1e-12);
    }

    #[test]
    fn bc_term_hand_example_and_reductions() {
        let a = agent(false, CriticKind::Mse, 5);
        let bt = batch(4, 6);
        let noise = gaussian(4, 1, &mut ChaCha8Rng::seed_from_u64(2));
        let base = actor_loss(&a.actor, &a.critics, &bt.obs, &noise, 0.1, None).unwrap();
        let l0 = actor_loss(
            &a.actor,
            &a.critics,
            &bt.obs,
            &noise,
            0.1,
            Some((&bt.actions, 0.0)),
        )
        .unwrap();
        assert_eq!(base.loss, l0.loss);
        let (acts, _) = sample_actions(&a.actor, &bt.obs, &noise).unwrap();
        let same = actor_loss(
            &a.actor,
            &a.critics,
            &bt.obs,
            &noise,
            0.1,
            Some((&acts, 0.1)),
        )
        .unwrap();
        assert!((same.loss - base.loss).abs() < 1e-12);
        let q = eval_target(&a.critics[0], &bt.obs, &acts).unwrap().q;
        let qmag = (q.iter().sum::<f64>() / 4.0).abs();
        let msq: f64 = acts
            .data()
            .iter()
            .zip(bt.actions.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 4.0;
        let with = actor_loss(
            &a.actor,
            &a.critics,
            &bt.obs,
            &noise,
            0.1,
            Some((&bt.actions, 0.1)),
        )
        .unwrap();
        assert!((with.loss - base.loss - 0.1 * qmag * msq).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut a = agent(true, CriticKind::Categorical(support()), 7);
        let before = a.clone();
        a.train_step(&batch(16, 8), 0.0, &mut ChaCha8Rng::seed_from_u64(0), false)
            .unwrap();
        for (x, y) in a.actor.store.iter().zip(before.actor.store.iter()) {
            for (p, q) in x.value.data().iter().zip(y.value.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        assert!(a.max_row_norm_deviation() < 1e-9);
    }

    #[test]
    fn rows_stay_unit_after_steps() {
        let mut a = agent(true, CriticKind::Categorical(support()), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..5 {
            a.train_step(&batch(32, 10 + i), 1e-2, &mut rng, false)
                .unwrap();
            assert!(a.max_row_norm_deviation() < 1e-9);
        }
    }

    #[test]
    fn critic_overfits_frozen_batch() {
        let mut a = agent(false, CriticKind::Categorical(support()), 11);
        let bt = batch(1, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = gaussian(1, 1, &mut rng);
        let (na, nl) = sample_actions(&a.actor, &bt.next_obs, &noise).unwrap();
        let target = critic_target_dist(
            &a.targets,
            &bt.next_obs,
            &na,
            &nl,
            &bt.rewards,
            &bt.terminated,
            0.99,
            0.01,
        )
        .unwrap();
        let mut losses = Vec::new();
        for _ in 0..100 {
            let pass = critic_loss(&a.critics[0], &bt.obs, &bt.actions, &target).unwrap();
            losses.push(pass.loss);
            a.critic_opts[0]
                .step(&mut a.critics[0].store, &pass.grads, 1e-3)
                .unwrap();
            a.critics[0].store.project_constrained();
        }
        let violations = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(violations <= 5, "{violations} increases");
        assert!(losses[99] < losses[0]);
    }

    #[test]
    fn mse_target_hand_arithmetic() {
        let a = agent(false, CriticKind::Mse, 13);
        let bt = batch(3, 14);
        let na = Tensor::new(vec![3, 1], vec![0.1, -0.2, 0.3]).unwrap();
        let nl = vec![-0.5, 0.2, 0.0];
        let CriticTarget::Scalar(y) = critic_target_dist(
            &a.targets,
            &bt.next_obs,
            &na,
            &nl,
            &bt.rewards,
            &bt.terminated,
            0.9,
            0.1,
        )
        .unwrap() else {
            panic!()
        };
        let q = eval_target(&a.targets[0], &bt.next_obs, &na).unwrap().q;
        for i in 0..3 {
            let boot = if bt.terminated[i] { 0.0 } else { 1.0 };
            let want = bt.rewards[i] + boot * 0.9 * (q[i] - 0.1 * nl[i]);
            assert!((y.data()[i] - want).abs() < 1e-15);
        }
        let pass = critic_loss(
            &a.critics[0],
            &bt.obs,
            &bt.actions,
            &CriticTarget::Scalar(y.clone()),
        )
        .unwrap();
        let want: f64 = pass
            .q
            .iter()
            .zip(y.data())
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / 3.0;
        assert!((pass.loss - want).abs() < 1e-15);
    }

    #[test]
    fn clipped_target_picks_lower_critic() {
        let a = agent(true, CriticKind::Categorical(support()), 15);
        let bt = batch(6, 16);
        let na = Tensor::new(vec![6, 1], vec![0.0; 6]).unwrap();
        let nl = vec![0.0; 6];
        let CriticTarget::Categorical(t) = critic_target_dist(
            &a.targets,
            &bt.next_obs,
            &na,
            &nl,
            &bt.rewards,
            &bt.terminated,
            0.9,
            0.0,
        )
        .unwrap() else {
            panic!()
        };
        let e0 = eval_target(&a.targets[0], &bt.next_obs, &na).unwrap();
        let e1 = eval_target(&a.targets[1], &bt.next_obs, &na).unwrap();
        let s = support();
        for i in 0..6 {
            let low = if e0.q[i] <= e1.q[i] { &e0 } else { &e1 };
            let want = categorical_target(
                &s,
                low.probs.as_ref().unwrap().row(i),
                bt.rewards[i],
                bt.terminated[i],
                0.9,
                0.0,
            );
            assert_eq!(t.row(i), &want[..]);
        }
    }
}
