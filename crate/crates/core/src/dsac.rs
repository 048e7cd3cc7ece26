//! Discrete soft actor-critic with a diffusion policy: replay buffer,
//! vector-output twin critics, entropy-regularized Bellman targets, soft
//! target updates, and the per-thought training loop.
//!
//! Critics map an encoded state to one Q-value per action, so both the
//! Bellman target and the actor objective take exact expectations over the
//! categorical policy instead of sampling actions. The same trainer drives
//! the diffusion actor and the plain-MLP actor baseline; only the logits
//! path differs.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    chain_backward, log_policy_distribution, sample_action, sample_action_logits, sample_traced,
    DenoiserNet, DiffusionSchedule, DiffusionTape,
};
use crate::env::{Encoder, Env, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, blend_params, Activation, AdamState, Checkpoint, DenseNet, Gradients, Tape,
};
use crate::rng::{stream, stream_rng};

/// Which critic feeds the actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorQMode {
    /// Minimum of both critics (overestimation control).
    #[default]
    Min,
    /// First critic only.
    Q1,
}

impl std::str::FromStr for ActorQMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(ActorQMode::Min),
            "q1" => Ok(ActorQMode::Q1),
            other => Err(Error::Config(format!(
                "actor_q must be `min` or `q1`, got `{other}`"
            ))),
        }
    }
}

/// Trainer hyperparameters. Defaults follow the standard setup: 1000
/// episodes, γ = 0.99, τ = 0.005, K = 5 with β ∈ [0.1, 10].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Entropy temperature.
    pub temperature: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions gathered before updates begin.
    pub warmup_transitions: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub k_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub actor_width: usize,
    pub critic_width: usize,
    pub actor_q: ActorQMode,
    pub seed: u64,
    /// ε-greedy bounds for the value-based baseline.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 1000,
            gamma: 0.99,
            tau: 0.005,
            temperature: 0.05,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup_transitions: 500,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            k_steps: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            actor_width: 400,
            critic_width: 256,
            actor_q: ActorQMode::Min,
            seed: 0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("train.episodes must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("train.gamma must lie in (0, 1]".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("train.tau must lie in (0, 1]".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("train.temperature must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config(
                "train.buffer_capacity must be >= batch_size".into(),
            ));
        }
        if self.k_steps == 0 {
            return Err(Error::Config("train.k_steps must be >= 1".into()));
        }
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min) {
            return Err(Error::Config(
                "train.beta_min/beta_max must satisfy 0 < min < max".into(),
            ));
        }
        if self.actor_width == 0 || self.critic_width == 0 {
            return Err(Error::Config("train widths must be >= 1".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("train learning rates must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_end > self.epsilon_start
        {
            return Err(Error::Config(
                "train epsilon bounds must satisfy 0 <= end <= start <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// FIFO ring of transitions with uniform without-replacement batches.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            write: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(transition);
        } else {
            self.items[self.write] = transition;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Uniform batch without replacement (partial Fisher–Yates over the
    /// index set).
    pub fn sample(&self, batch: usize, rng: &mut ChaCha12Rng) -> Result<Vec<Transition>> {
        use rand::RngExt;
        if self.items.len() < batch {
            return Err(Error::BufferNotReady {
                size: self.items.len(),
                batch,
            });
        }
        let mut indices: Vec<usize> = (0..self.items.len()).collect();
        let mut out = Vec::with_capacity(batch);
        for i in 0..batch {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
            out.push(self.items[indices[i]].clone());
        }
        Ok(out)
    }
}

/// The policy network behind the trainer: a K-step diffusion sampler or a
/// single-pass MLP over the encoded state.
pub enum PolicyActor {
    Diffusion {
        denoiser: DenoiserNet,
        schedule: DiffusionSchedule,
    },
    Direct {
        net: DenseNet,
    },
}

/// Tape(s) of one traced logits evaluation.
pub enum ActorTape {
    Diffusion(DiffusionTape),
    Direct(Tape),
}

impl PolicyActor {
    pub fn diffusion(
        action_dim: usize,
        state_dim: usize,
        width: usize,
        k_steps: usize,
        beta_min: f64,
        beta_max: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        Ok(PolicyActor::Diffusion {
            denoiser: DenoiserNet::new(action_dim, state_dim, width, rng)?,
            schedule: DiffusionSchedule::new(k_steps, beta_min, beta_max)?,
        })
    }

    pub fn direct(
        action_dim: usize,
        state_dim: usize,
        width: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        Ok(PolicyActor::Direct {
            net: DenseNet::mlp(
                state_dim,
                &[width, width],
                action_dim,
                Activation::Mish,
                rng,
            )?,
        })
    }

    pub fn action_dim(&self) -> usize {
        match self {
            PolicyActor::Diffusion { denoiser, .. } => denoiser.action_dim,
            PolicyActor::Direct { net } => net.output_dim(),
        }
    }

    pub fn net(&self) -> &DenseNet {
        match self {
            PolicyActor::Diffusion { denoiser, .. } => &denoiser.net,
            PolicyActor::Direct { net } => net,
        }
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        match self {
            PolicyActor::Diffusion { denoiser, .. } => &mut denoiser.net,
            PolicyActor::Direct { net } => net,
        }
    }

    /// Scale dividing sampled chain outputs before the softmax head, so
    /// the categorical policy starts unsaturated. Argmax actions are
    /// unaffected.
    pub fn logit_scale(&self) -> f64 {
        match self {
            PolicyActor::Diffusion { schedule, .. } => schedule.propagated_std(),
            PolicyActor::Direct { .. } => 1.0,
        }
    }

    /// Action logits for one encoded state. Stochastic for the diffusion
    /// actor (fresh reverse-chain noise), deterministic for the MLP.
    pub fn logits(&self, encoded_state: &[f64], rng: &mut ChaCha12Rng) -> Result<Vec<f64>> {
        match self {
            PolicyActor::Diffusion { denoiser, schedule } => {
                let scale = self.logit_scale();
                let sampled = sample_action_logits(denoiser, encoded_state, schedule, rng)?;
                Ok(sampled.logits.iter().map(|v| v / scale).collect())
            }
            PolicyActor::Direct { net } => net.forward(encoded_state),
        }
    }

    fn logits_traced(
        &self,
        encoded_state: &[f64],
        rng: &mut ChaCha12Rng,
    ) -> Result<(Vec<f64>, ActorTape)> {
        match self {
            PolicyActor::Diffusion { denoiser, schedule } => {
                let scale = self.logit_scale();
                let (sampled, tape) = sample_traced(denoiser, encoded_state, schedule, rng)?;
                Ok((
                    sampled.logits.iter().map(|v| v / scale).collect(),
                    ActorTape::Diffusion(tape),
                ))
            }
            PolicyActor::Direct { net } => {
                let (logits, tape) = net.forward_traced(encoded_state)?;
                Ok((logits, ActorTape::Direct(tape)))
            }
        }
    }

    fn backward(&self, tape: &mut ActorTape, logits_adjoint: &[f64]) -> Result<Gradients> {
        match (self, tape) {
            (PolicyActor::Diffusion { denoiser, schedule }, ActorTape::Diffusion(t)) => {
                let scale = schedule.propagated_std();
                let raw_adjoint: Vec<f64> = logits_adjoint.iter().map(|g| g / scale).collect();
                chain_backward(denoiser, schedule, t, &raw_adjoint)
            }
            (PolicyActor::Direct { net }, ActorTape::Direct(t)) => net.backward(t, logits_adjoint),
            _ => Err(Error::Config("actor tape kind mismatch".into())),
        }
    }
}

/// Entropy-regularized Bellman targets: `y = r` on terminal transitions,
/// otherwise `r + γ·Σ_a' π(a'|s')·(min_n Q̄_n(s')[a'] − α·log π(a'|s'))`
/// with the expectation taken exactly over the categorical policy.
pub fn critic_targets<F>(
    batch: &[Transition],
    encoder: &Encoder,
    target1: &DenseNet,
    target2: &DenseNet,
    mut next_policy: F,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut ys = Vec::with_capacity(batch.len());
    for t in batch {
        if t.done {
            ys.push(t.reward);
            continue;
        }
        let next = encoder.encode(&t.next_state);
        let logits = next_policy(&next)?;
        let log_probs = log_policy_distribution(&logits)?;
        let q1 = target1.forward(&next)?;
        let q2 = target2.forward(&next)?;
        let mut value = 0.0;
        for a in 0..log_probs.len() {
            let p = log_probs[a].exp();
            value += p * (q1[a].min(q2[a]) - alpha * log_probs[a]);
        }
        if !value.is_finite() {
            return Err(Error::Domain("non-finite Bellman target".into()));
        }
        ys.push(t.reward + gamma * value);
    }
    Ok(ys)
}

/// Half mean-squared Bellman residual of one critic on a batch.
pub fn critic_loss(
    batch: &[Transition],
    encoder: &Encoder,
    targets: &[f64],
    critic: &DenseNet,
) -> Result<f64> {
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let q = critic.forward(&encoder.encode(&t.state))?;
        let residual = q[t.action] - y;
        loss += 0.5 * residual * residual;
    }
    Ok(loss / batch.len() as f64)
}

/// One optimizer step on a critic toward the given targets; returns the
/// pre-update loss.
pub fn update_critic(
    batch: &[Transition],
    encoder: &Encoder,
    targets: &[f64],
    critic: &mut DenseNet,
    adam: &mut AdamState,
) -> Result<f64> {
    let inv = 1.0 / batch.len() as f64;
    let mut grads = critic.zero_gradients();
    let mut loss = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let encoded = encoder.encode(&t.state);
        let (q, mut tape) = critic.forward_traced(&encoded)?;
        let residual = q[t.action] - y;
        loss += 0.5 * residual * residual;
        let mut adjoint = vec![0.0; q.len()];
        adjoint[t.action] = residual * inv;
        grads.accumulate(&critic.backward(&mut tape, &adjoint)?);
    }
    adam_step(critic, &grads, adam)?;
    Ok(loss * inv)
}

/// Actor objective on a batch: `E_s Σ_a π(a|s)(α·log π(a|s) − Q(s,a))`
/// with fresh sampling noise from `rng`. Returns (loss, mean entropy).
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    batch: &[Transition],
    encoder: &Encoder,
    actor: &PolicyActor,
    critic1: &DenseNet,
    critic2: &DenseNet,
    mode: ActorQMode,
    alpha: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    let (loss, entropy, _) = actor_loss_and_grads(
        batch, encoder, actor, critic1, critic2, mode, alpha, rng, false,
    )?;
    Ok((loss, entropy))
}

/// Actor objective plus (optionally) its parameter gradients, without
/// taking an optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_and_grads(
    batch: &[Transition],
    encoder: &Encoder,
    actor: &PolicyActor,
    critic1: &DenseNet,
    critic2: &DenseNet,
    mode: ActorQMode,
    alpha: f64,
    rng: &mut ChaCha12Rng,
    with_grads: bool,
) -> Result<(f64, f64, Option<Gradients>)> {
    let inv = 1.0 / batch.len() as f64;
    let mut grads = if with_grads {
        Some(actor.net().zero_gradients())
    } else {
        None
    };
    let mut loss = 0.0;
    let mut entropy = 0.0;
    for t in batch {
        let encoded = encoder.encode(&t.state);
        let (logits, mut tape) = actor.logits_traced(&encoded, rng)?;
        let log_probs = log_policy_distribution(&logits)?;
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let q1 = critic1.forward(&encoded)?;
        let q = match mode {
            ActorQMode::Q1 => q1,
            ActorQMode::Min => {
                let q2 = critic2.forward(&encoded)?;
                q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect()
            }
        };
        let objective: Vec<f64> = log_probs
            .iter()
            .zip(&q)
            .map(|(lp, qa)| alpha * lp - qa)
            .collect();
        let sample_loss: f64 = probs.iter().zip(&objective).map(|(p, f)| p * f).sum();
        loss += sample_loss;
        entropy -= log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>();
        if let Some(acc) = grads.as_mut() {
            // d/d logits of Σ p_a(α log p_a − Q_a): the entropy part of
            // the chain cancels, leaving p_b(f_b − Σ p f).
            let adjoint: Vec<f64> = probs
                .iter()
                .zip(&objective)
                .map(|(p, f)| p * (f - sample_loss) * inv)
                .collect();
            acc.accumulate(&actor.backward(&mut tape, &adjoint)?);
        }
    }
    Ok((loss * inv, entropy * inv, grads))
}

/// One optimizer step on the actor; returns (pre-update loss, entropy).
#[allow(clippy::too_many_arguments)]
pub fn update_actor(
    batch: &[Transition],
    encoder: &Encoder,
    actor: &mut PolicyActor,
    adam: &mut AdamState,
    critic1: &DenseNet,
    critic2: &DenseNet,
    mode: ActorQMode,
    alpha: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    let (loss, entropy, grads) = actor_loss_and_grads(
        batch, encoder, actor, critic1, critic2, mode, alpha, rng, true,
    )?;
    adam_step(actor.net_mut(), &grads.expect("grads requested"), adam)?;
    Ok((loss, entropy))
}

/// Soft target blend `θ̄ ← τ·θ + (1−τ)·θ̄`.
pub fn soft_update(source: &DenseNet, target: &mut DenseNet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config("tau must lie in (0, 1]".into()));
    }
    blend_params(source, target, tau)
}

/// Per-episode training metrics, one CSV row each.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward_sum: f64,
    pub t_tot_s: f64,
    pub score_tot: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

pub const METRICS_CSV_HEADER: &str =
    "episode,reward_sum,t_tot_s,score_tot,critic1_loss,critic2_loss,actor_loss,entropy";

impl EpisodeMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode,
            self.reward_sum,
            self.t_tot_s,
            self.score_tot,
            self.critic1_loss,
            self.critic2_loss,
            self.actor_loss,
            self.entropy
        )
    }
}

pub fn metrics_to_csv(metrics: &[EpisodeMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// Output of one training run.
pub struct TrainOutput {
    pub metrics: Vec<EpisodeMetrics>,
    pub checkpoint: Checkpoint,
}

/// Soft actor-critic trainer over one environment.
pub struct SacTrainer {
    pub actor: PolicyActor,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
    pub target1: DenseNet,
    pub target2: DenseNet,
    actor_adam: AdamState,
    critic1_adam: AdamState,
    critic2_adam: AdamState,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    encoder: Encoder,
    action_rng: ChaCha12Rng,
    update_rng: ChaCha12Rng,
    buffer_rng: ChaCha12Rng,
    pub updates_done: u64,
    pub transitions_seen: u64,
}

impl SacTrainer {
    /// Builds actor and critics sized for `env`; `diffusion_actor` selects
    /// the K-step sampler or the single-pass MLP policy.
    pub fn new(env: &Env, cfg: TrainConfig, diffusion_actor: bool) -> Result<Self> {
        cfg.validate()?;
        let encoder = env.encoder();
        let state_dim = encoder.encoded_dim(env.internal_count());
        let action_dim = env.action_count();
        let mut init_rng = stream_rng(cfg.seed, stream::NET_INIT);
        let actor = if diffusion_actor {
            PolicyActor::diffusion(
                action_dim,
                state_dim,
                cfg.actor_width,
                cfg.k_steps,
                cfg.beta_min,
                cfg.beta_max,
                &mut init_rng,
            )?
        } else {
            PolicyActor::direct(action_dim, state_dim, cfg.actor_width, &mut init_rng)?
        };
        let critic_dims = [cfg.critic_width, cfg.critic_width];
        let critic1 = DenseNet::mlp(
            state_dim,
            &critic_dims,
            action_dim,
            Activation::Mish,
            &mut init_rng,
        )?;
        let critic2 = DenseNet::mlp(
            state_dim,
            &critic_dims,
            action_dim,
            Activation::Mish,
            &mut init_rng,
        )?;
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        let actor_adam = AdamState::new(actor.net(), cfg.actor_lr);
        let critic1_adam = AdamState::new(&critic1, cfg.critic_lr);
        let critic2_adam = AdamState::new(&critic2, cfg.critic_lr);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        Ok(SacTrainer {
            actor,
            critic1,
            critic2,
            target1,
            target2,
            actor_adam,
            critic1_adam,
            critic2_adam,
            buffer,
            encoder,
            action_rng: stream_rng(cfg.seed, stream::ACTION_SAMPLING),
            update_rng: stream_rng(cfg.seed, stream::UPDATE_NOISE),
            buffer_rng: stream_rng(cfg.seed, stream::BUFFER_SAMPLING),
            cfg,
            updates_done: 0,
            transitions_seen: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    fn ready_to_update(&self) -> bool {
        self.buffer.len() >= self.cfg.batch_size && self.buffer.len() >= self.cfg.warmup_transitions
    }

    /// One critic/actor/target update round on a sampled batch.
    fn update_round(&mut self) -> Result<(f64, f64, f64, f64)> {
        let batch = self
            .buffer
            .sample(self.cfg.batch_size, &mut self.buffer_rng)?;
        let actor = &self.actor;
        let update_rng = &mut self.update_rng;
        let ys = critic_targets(
            &batch,
            &self.encoder,
            &self.target1,
            &self.target2,
            |next| actor.logits(next, update_rng),
            self.cfg.gamma,
            self.cfg.temperature,
        )?;
        let l1 = update_critic(
            &batch,
            &self.encoder,
            &ys,
            &mut self.critic1,
            &mut self.critic1_adam,
        )?;
        let l2 = update_critic(
            &batch,
            &self.encoder,
            &ys,
            &mut self.critic2,
            &mut self.critic2_adam,
        )?;
        let (al, entropy) = update_actor(
            &batch,
            &self.encoder,
            &mut self.actor,
            &mut self.actor_adam,
            &self.critic1,
            &self.critic2,
            self.cfg.actor_q,
            self.cfg.temperature,
            &mut self.update_rng,
        )?;
        let max_entropy = (self.actor.action_dim() as f64).ln();
        assert!(
            entropy >= -1e-9 && entropy <= max_entropy + 1e-9,
            "policy entropy {entropy} outside [0, {max_entropy}]"
        );
        soft_update(&self.critic1, &mut self.target1, self.cfg.tau)?;
        soft_update(&self.critic2, &mut self.target2, self.cfg.tau)?;
        self.updates_done += 1;
        Ok((l1, l2, al, entropy))
    }

    fn check_finite(&self, episode: usize, step: usize) -> Result<()> {
        for net in [
            self.actor.net(),
            &self.critic1,
            &self.critic2,
            &self.target1,
            &self.target2,
        ] {
            if let Err(Error::NonFiniteParam { layer, .. }) = net.check_finite() {
                return Err(Error::NonFiniteParam {
                    layer,
                    episode,
                    step,
                });
            }
        }
        Ok(())
    }

    /// Runs the full training loop: per thought, sample an action from the
    /// policy, step the environment, store the transition, and (once the
    /// buffer is warm) run one update round.
    pub fn run(&mut self, env: &mut Env) -> Result<Vec<EpisodeMetrics>> {
        let mut all = Vec::with_capacity(self.cfg.episodes);
        for episode in 0..self.cfg.episodes {
            let mut state = env.reset()?;
            let mut reward_sum = 0.0;
            let mut losses = (0.0, 0.0, 0.0, 0.0);
            let mut update_rounds = 0usize;
            let mut step_idx = 0usize;
            loop {
                let encoded = self.encoder.encode(&state);
                let logits = self.actor.logits(&encoded, &mut self.action_rng)?;
                let action = sample_action(&logits, &mut self.action_rng)?;
                let outcome = env.step(action)?;
                reward_sum += outcome.reward;
                self.buffer.push(Transition {
                    state,
                    action,
                    reward: outcome.reward,
                    next_state: outcome.state.clone(),
                    done: outcome.done,
                });
                self.transitions_seen += 1;
                if self.ready_to_update() {
                    let (l1, l2, al, en) = self.update_round()?;
                    losses.0 += l1;
                    losses.1 += l2;
                    losses.2 += al;
                    losses.3 += en;
                    update_rounds += 1;
                    self.check_finite(episode, step_idx)?;
                }
                state = outcome.state;
                step_idx += 1;
                if outcome.done {
                    break;
                }
            }
            let (t_tot, score_tot) = env.episode_totals()?;
            if !env.config().literal_reward {
                // Rewards telescope: Σ r = −T_tot − Σ penalties, up to
                // floating-point summation.
                let expected = -t_tot - env.penalties_total();
                assert!(
                    (reward_sum - expected).abs() <= 1e-9 * t_tot.abs().max(1.0),
                    "episode {episode}: reward sum {reward_sum} vs {expected}"
                );
            }
            let denom = update_rounds.max(1) as f64;
            all.push(EpisodeMetrics {
                episode,
                reward_sum,
                t_tot_s: t_tot,
                score_tot,
                critic1_loss: losses.0 / denom,
                critic2_loss: losses.1 / denom,
                actor_loss: losses.2 / denom,
                entropy: losses.3 / denom,
            });
        }
        Ok(all)
    }

    /// Packages the trained policy (and critics) with the metadata needed
    /// to rebuild it at evaluation time.
    pub fn checkpoint(&self, env_cfg: &EnvConfig, kind: &str) -> Checkpoint {
        let mut meta = vec![
            ("kind".to_string(), kind.to_string()),
            ("num_sps".to_string(), env_cfg.num_sps.to_string()),
            ("tot_steps".to_string(), env_cfg.tot_steps.to_string()),
            (
                "thoughts_per_step".to_string(),
                env_cfg.thoughts_per_step.to_string(),
            ),
            ("bs_tokens".to_string(), env_cfg.bs_tokens.to_string()),
            ("seed".to_string(), self.cfg.seed.to_string()),
        ];
        if let PolicyActor::Diffusion { schedule, .. } = &self.actor {
            meta.push(("k_steps".to_string(), schedule.k_steps().to_string()));
            meta.push(("beta_min".to_string(), schedule.beta_min.to_string()));
            meta.push(("beta_max".to_string(), schedule.beta_max.to_string()));
        }
        Checkpoint {
            meta,
            nets: vec![
                ("actor".to_string(), self.actor.net().clone()),
                ("critic1".to_string(), self.critic1.clone()),
                ("critic2".to_string(), self.critic2.clone()),
            ],
        }
    }
}

/// Trains the diffusion-actor scheduler on the configured environment.
pub fn train_dsac(env_cfg: &EnvConfig, train_cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_actor(env_cfg, train_cfg, true, "dsac")
}

/// Shared trainer entry; the MLP-actor baseline reuses it verbatim.
pub fn train_with_actor(
    env_cfg: &EnvConfig,
    train_cfg: &TrainConfig,
    diffusion_actor: bool,
    kind: &str,
) -> Result<TrainOutput> {
    let mut env = Env::new(env_cfg.clone())?;
    let mut trainer = SacTrainer::new(&env, train_cfg.clone(), diffusion_actor)?;
    let metrics = trainer.run(&mut env)?;
    Ok(TrainOutput {
        metrics,
        checkpoint: trainer.checkpoint(env_cfg, kind),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::lg_reference;
    use rand::RngExt;

    fn tiny_env_cfg(seed: u64) -> EnvConfig {
        EnvConfig {
            num_sps: 2,
            tot_steps: 2,
            thoughts_per_step: 2,
            seed,
            score_min: Some(0.0),
            ..EnvConfig::default()
        }
    }

    fn tiny_train_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: 2,
            batch_size: 4,
            warmup_transitions: 4,
            buffer_capacity: 64,
            actor_width: 16,
            critic_width: 16,
            k_steps: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Rolls random-action transitions out of a tiny environment.
    fn collect_transitions(n: usize, seed: u64) -> (Vec<Transition>, Encoder, usize) {
        let mut env = Env::new(tiny_env_cfg(seed)).unwrap();
        let encoder = env.encoder();
        let actions = env.action_count();
        let mut rng = stream_rng(seed, 99);
        let mut out = Vec::new();
        let mut state = env.reset().unwrap();
        while out.len() < n {
            let action = rng.random_range(0..actions);
            let step = env.step(action).unwrap();
            out.push(Transition {
                state: state.clone(),
                action,
                reward: step.reward,
                done: step.done,
                next_state: step.state.clone(),
            });
            state = if step.done {
                env.reset().unwrap()
            } else {
                step.state
            };
        }
        (out, encoder, actions)
    }

    #[test]
    fn buffer_evicts_fifo() {
        let (ts, _, _) = collect_transitions(3, 1);
        let mut buf = ReplayBuffer::new(2).unwrap();
        for t in ts.iter().cloned() {
            buf.push(t);
        }
        assert_eq!(buf.len(), 2);
        // Oldest (reward of ts[0]) evicted.
        let rewards: Vec<f64> = buf.items.iter().map(|t| t.reward).collect();
        assert!(rewards.contains(&ts[1].reward));
        assert!(rewards.contains(&ts[2].reward));
        assert!(!rewards.contains(&ts[0].reward) || ts[0].reward == ts[1].reward);
    }

    #[test]
    fn full_buffer_batch_is_a_permutation() {
        let (ts, _, _) = collect_transitions(8, 2);
        let mut buf = ReplayBuffer::new(8).unwrap();
        for t in ts.iter().cloned() {
            buf.push(t);
        }
        let mut rng = stream_rng(3, 0);
        let batch = buf.sample(8, &mut rng).unwrap();
        let mut got: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let mut want: Vec<f64> = ts.iter().map(|t| t.reward).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        let (ts, _, _) = collect_transitions(10, 4);
        let mut buf = ReplayBuffer::new(10).unwrap();
        for (i, mut t) in ts.into_iter().enumerate() {
            t.action = i % 3;
            t.reward = i as f64;
            buf.push(t);
        }
        let mut rng = stream_rng(5, 0);
        let n = 100_000;
        let mut counts = vec![0usize; 10];
        for _ in 0..n {
            let b = buf.sample(1, &mut rng).unwrap();
            counts[b[0].reward as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.1).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn undersized_buffer_reports_not_ready() {
        let (ts, _, _) = collect_transitions(2, 6);
        let mut buf = ReplayBuffer::new(8).unwrap();
        for t in ts {
            buf.push(t);
        }
        let mut rng = stream_rng(6, 0);
        assert!(matches!(
            buf.sample(4, &mut rng),
            Err(Error::BufferNotReady { size: 2, batch: 4 })
        ));
    }

    #[test]
    fn terminal_targets_equal_reward() {
        let (mut ts, encoder, actions) = collect_transitions(6, 7);
        for t in &mut ts {
            t.done = true;
        }
        let mut rng = stream_rng(7, 0);
        let state_dim = encoder.encoded_dim(4);
        let q = DenseNet::mlp(state_dim, &[8], actions, Activation::Mish, &mut rng).unwrap();
        let ys = critic_targets(&ts, &encoder, &q, &q, |_| unreachable!(), 0.99, 0.1).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            assert_eq!(*y, t.reward);
        }
    }

    #[test]
    fn one_hot_policy_zero_alpha_targets() {
        let (ts, encoder, actions) = collect_transitions(5, 8);
        let mut rng = stream_rng(8, 0);
        let state_dim = encoder.encoded_dim(4);
        let t1 = DenseNet::mlp(state_dim, &[8], actions, Activation::Tanh, &mut rng).unwrap();
        let t2 = DenseNet::mlp(state_dim, &[8], actions, Activation::Tanh, &mut rng).unwrap();
        // Near-one-hot policy on action 1 via extreme logits.
        let star = 1usize;
        let ys = critic_targets(
            &ts,
            &encoder,
            &t1,
            &t2,
            |_| {
                let mut l = vec![-1e6; actions];
                l[star] = 1e6;
                Ok(l)
            },
            0.9,
            0.0,
        )
        .unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            if t.done {
                assert_eq!(*y, t.reward);
                continue;
            }
            let next = encoder.encode(&t.next_state);
            let q1 = t1.forward(&next).unwrap()[star];
            let q2 = t2.forward(&next).unwrap()[star];
            let expect = t.reward + 0.9 * q1.min(q2);
            assert!((y - expect).abs() < 1e-9, "{y} vs {expect}");
        }
    }

    #[test]
    fn targets_match_exhaustive_sum_oracle() {
        let (ts, encoder, actions) = collect_transitions(6, 9);
        let mut rng = stream_rng(9, 0);
        let state_dim = encoder.encoded_dim(4);
        let t1 = DenseNet::mlp(state_dim, &[8], actions, Activation::Mish, &mut rng).unwrap();
        let t2 = DenseNet::mlp(state_dim, &[8], actions, Activation::Mish, &mut rng).unwrap();
        let logits_for: Vec<Vec<f64>> = (0..ts.len())
            .map(|_| (0..actions).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut call = 0usize;
        let gamma = 0.95;
        let alpha = 0.07;
        let ys = critic_targets(
            &ts,
            &encoder,
            &t1,
            &t2,
            |_| {
                let l = logits_for[call].clone();
                call += 1;
                Ok(l)
            },
            gamma,
            alpha,
        )
        .unwrap();
        // Scalar re-implementation with explicit softmax and loops.
        let mut call2 = 0usize;
        for (t, y) in ts.iter().zip(&ys) {
            if t.done {
                assert_eq!(*y, t.reward);
                continue;
            }
            let logits = &logits_for[call2];
            call2 += 1;
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            let next = encoder.encode(&t.next_state);
            let q1 = t1.forward(&next).unwrap();
            let q2 = t2.forward(&next).unwrap();
            let mut value = 0.0;
            for a in 0..actions {
                let p = (logits[a] - m).exp() / z;
                let logp = logits[a] - m - z.ln();
                value += p * (q1[a].min(q2[a]) - alpha * logp);
            }
            let expect = t.reward + gamma * value;
            assert!((y - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_critic_stays_put() {
        let (ts, encoder, actions) = collect_transitions(5, 10);
        let mut rng = stream_rng(10, 0);
        let state_dim = encoder.encoded_dim(4);
        let mut critic =
            DenseNet::mlp(state_dim, &[8], actions, Activation::Mish, &mut rng).unwrap();
        // Targets equal to the critic's own predictions: zero residual.
        let ys: Vec<f64> = ts
            .iter()
            .map(|t| critic.forward(&encoder.encode(&t.state)).unwrap()[t.action])
            .collect();
        let before = critic.flat_params();
        let mut adam = AdamState::new(&critic, 1e-3);
        let loss = update_critic(&ts, &encoder, &ys, &mut critic, &mut adam).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(critic.flat_params(), before);
    }

    #[test]
    fn critic_loss_descends_on_frozen_batch() {
        let (ts, encoder, actions) = collect_transitions(8, 11);
        let mut rng = stream_rng(11, 0);
        let state_dim = encoder.encoded_dim(4);
        let mut critic =
            DenseNet::mlp(state_dim, &[16], actions, Activation::Mish, &mut rng).unwrap();
        let ys: Vec<f64> = ts.iter().map(|t| t.reward).collect();
        let mut adam = AdamState::new(&critic, 1e-2);
        let first = critic_loss(&ts, &encoder, &ys, &critic).unwrap();
        for _ in 0..50 {
            update_critic(&ts, &encoder, &ys, &mut critic, &mut adam).unwrap();
        }
        let last = critic_loss(&ts, &encoder, &ys, &critic).unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let (ts, encoder, actions) = collect_transitions(4, 12);
        let mut rng = stream_rng(12, 0);
        let state_dim = encoder.encoded_dim(4);
        let critic = DenseNet::mlp(state_dim, &[6], actions, Activation::Mish, &mut rng).unwrap();
        let ys: Vec<f64> = ts.iter().map(|t| t.reward * 0.1).collect();

        // Analytic batch gradient, replicated from the update path without
        // the optimizer step.
        let inv = 1.0 / ts.len() as f64;
        let mut grads = critic.zero_gradients();
        for (t, y) in ts.iter().zip(&ys) {
            let encoded = encoder.encode(&t.state);
            let (q, mut tape) = critic.forward_traced(&encoded).unwrap();
            let mut adjoint = vec![0.0; q.len()];
            adjoint[t.action] = (q[t.action] - y) * inv;
            grads.accumulate(&critic.backward(&mut tape, &adjoint).unwrap());
        }
        let flat = grads.flat();
        let params = critic.flat_params();
        let h = 1e-5;
        for p in (0..params.len()).step_by(5) {
            let mut cp = critic.clone();
            let mut plus = params.clone();
            plus[p] += h;
            cp.set_flat_params(&plus).unwrap();
            let mut cm = critic.clone();
            let mut minus = params.clone();
            minus[p] -= h;
            cm.set_flat_params(&minus).unwrap();
            let fd = (critic_loss(&ts, &encoder, &ys, &cp).unwrap()
                - critic_loss(&ts, &encoder, &ys, &cm).unwrap())
                / (2.0 * h);
            let denom = flat[p].abs().max(fd.abs()).max(1e-6);
            assert!((flat[p] - fd).abs() / denom < 1e-4, "param {p}");
        }
    }

    #[test]
    fn constant_q_zero_alpha_gives_zero_actor_gradient() {
        let (ts, encoder, actions) = collect_transitions(4, 13);
        let mut rng = stream_rng(13, 0);
        let state_dim = encoder.encoded_dim(4);
        let actor = PolicyActor::direct(actions, state_dim, 8, &mut rng).unwrap();
        // Zero-parameter critics output a constant zero Q for all actions.
        let mut critic =
            DenseNet::mlp(state_dim, &[4], actions, Activation::Mish, &mut rng).unwrap();
        critic
            .set_flat_params(&vec![0.0; critic.param_count()])
            .unwrap();
        let mut noise = stream_rng(13, 1);
        let (_, _, grads) = actor_loss_and_grads(
            &ts,
            &encoder,
            &actor,
            &critic,
            &critic,
            ActorQMode::Min,
            0.0,
            &mut noise,
            true,
        )
        .unwrap();
        for g in grads.unwrap().flat() {
            assert!(g.abs() < 1e-12, "grad {g}");
        }
    }

    #[test]
    fn large_alpha_update_increases_entropy() {
        let (ts, encoder, actions) = collect_transitions(6, 14);
        let mut rng = stream_rng(14, 0);
        let state_dim = encoder.encoded_dim(4);
        let mut actor = PolicyActor::direct(actions, state_dim, 12, &mut rng).unwrap();
        let critic = DenseNet::mlp(state_dim, &[6], actions, Activation::Mish, &mut rng).unwrap();
        let mut adam = AdamState::new(actor.net(), 1e-2);
        let alpha = 10.0;
        let mut noise = stream_rng(14, 1);
        let (_, before) = actor_loss(
            &ts,
            &encoder,
            &actor,
            &critic,
            &critic,
            ActorQMode::Q1,
            alpha,
            &mut noise,
        )
        .unwrap();
        for _ in 0..30 {
            update_actor(
                &ts,
                &encoder,
                &mut actor,
                &mut adam,
                &critic,
                &critic,
                ActorQMode::Q1,
                alpha,
                &mut noise,
            )
            .unwrap();
        }
        let (_, after) = actor_loss(
            &ts,
            &encoder,
            &actor,
            &critic,
            &critic,
            ActorQMode::Q1,
            alpha,
            &mut noise,
        )
        .unwrap();
        assert!(after > before, "{after} !> {before}");
    }

    #[test]
    fn diffusion_actor_gradient_matches_finite_differences() {
        let (ts, encoder, actions) = collect_transitions(3, 15);
        let mut rng = stream_rng(15, 0);
        let state_dim = encoder.encoded_dim(4);
        let actor = PolicyActor::diffusion(actions, state_dim, 6, 2, 0.1, 10.0, &mut rng).unwrap();
        let critic = DenseNet::mlp(state_dim, &[6], actions, Activation::Mish, &mut rng).unwrap();
        let alpha = 0.05;

        let seed_rng = || stream_rng(500, 0);
        let (_, _, grads) = actor_loss_and_grads(
            &ts,
            &encoder,
            &actor,
            &critic,
            &critic,
            ActorQMode::Min,
            alpha,
            &mut seed_rng(),
            true,
        )
        .unwrap();
        let flat = grads.unwrap().flat();

        let loss_at = |params: &[f64]| {
            let mut probe = match &actor {
                PolicyActor::Diffusion { denoiser, schedule } => PolicyActor::Diffusion {
                    denoiser: denoiser.clone(),
                    schedule: schedule.clone(),
                },
                _ => unreachable!(),
            };
            probe.net_mut().set_flat_params(params).unwrap();
            let (l, _) = actor_loss(
                &ts,
                &encoder,
                &probe,
                &critic,
                &critic,
                ActorQMode::Min,
                alpha,
                &mut seed_rng(),
            )
            .unwrap();
            l
        };
        let params = actor.net().flat_params();
        let h = 1e-5;
        for p in (0..params.len()).step_by(11) {
            let mut plus = params.clone();
            plus[p] += h;
            let mut minus = params.clone();
            minus[p] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = flat[p].abs().max(fd.abs()).max(1e-6);
            assert!(
                (flat[p] - fd).abs() / denom < 1e-4,
                "param {p}: {} vs {fd}",
                flat[p]
            );
        }
    }

    #[test]
    fn soft_update_blends() {
        let mut rng = stream_rng(16, 0);
        let src = DenseNet::mlp(2, &[3], 1, Activation::Tanh, &mut rng).unwrap();
        let mut tgt = DenseNet::mlp(2, &[3], 1, Activation::Tanh, &mut rng).unwrap();

        // τ = 1 copies.
        let mut hard = tgt.clone();
        soft_update(&src, &mut hard, 1.0).unwrap();
        assert_eq!(hard.flat_params(), src.flat_params());

        // τ = 0.005 from zeroed target against unit source.
        let mut unit = src.clone();
        unit.set_flat_params(&vec![1.0; unit.param_count()])
            .unwrap();
        tgt.set_flat_params(&vec![0.0; tgt.param_count()]).unwrap();
        soft_update(&unit, &mut tgt, 0.005).unwrap();
        for v in tgt.flat_params() {
            assert!((v - 0.005).abs() < 1e-15);
        }

        // Exact blend identity on every parameter.
        let before = hard.flat_params();
        let tau = 0.3;
        soft_update(&unit, &mut hard, tau).unwrap();
        for (after, b) in hard.flat_params().iter().zip(&before) {
            assert!((after - (tau * 1.0 + (1.0 - tau) * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_update_halves_gap_geometrically() {
        let mut rng = stream_rng(17, 0);
        let mut src = DenseNet::mlp(1, &[2], 1, Activation::Identity, &mut rng).unwrap();
        src.set_flat_params(&vec![1.0; src.param_count()]).unwrap();
        let mut tgt = src.clone();
        tgt.set_flat_params(&vec![0.0; tgt.param_count()]).unwrap();
        let tau = 0.005;
        // ln 2 / τ ≈ 139 updates per halving.
        let halving = (2f64.ln() / tau).round() as usize;
        let mut gap = 1.0;
        for _ in 0..3 {
            for _ in 0..halving {
                soft_update(&src, &mut tgt, tau).unwrap();
            }
            let new_gap = 1.0 - tgt.flat_params()[0];
            assert!(
                ((new_gap / gap) - 0.5).abs() < 0.025,
                "ratio {}",
                new_gap / gap
            );
            gap = new_gap;
        }
    }

    #[test]
    fn smoke_training_run_emits_metrics() {
        let out = train_dsac(
            &tiny_env_cfg(21),
            &TrainConfig {
                episodes: 1,
                ..tiny_train_cfg(21)
            },
        )
        .unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert!(out.metrics[0].t_tot_s > 0.0);
        assert_eq!(out.checkpoint.meta_value("kind"), Some("dsac"));
        assert!(out.checkpoint.net("actor").is_some());
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let a = train_dsac(&tiny_env_cfg(22), &tiny_train_cfg(22)).unwrap();
        let b = train_dsac(&tiny_env_cfg(22), &tiny_train_cfg(22)).unwrap();
        assert_eq!(metrics_to_csv(&a.metrics), metrics_to_csv(&b.metrics));
        assert_eq!(
            a.checkpoint.net("actor").unwrap().flat_params(),
            b.checkpoint.net("actor").unwrap().flat_params()
        );
    }

    #[test]
    fn update_counts_follow_warmup_rule() {
        let env_cfg = tiny_env_cfg(23);
        let train_cfg = TrainConfig {
            episodes: 3,
            batch_size: 2,
            warmup_transitions: 5,
            ..tiny_train_cfg(23)
        };
        let mut env = Env::new(env_cfg).unwrap();
        let mut trainer = SacTrainer::new(&env, train_cfg, true).unwrap();
        trainer.run(&mut env).unwrap();
        // 3 episodes × 4 thoughts = 12 transitions; updates start once the
        // buffer holds 5.
        assert_eq!(trainer.transitions_seen, 12);
        assert_eq!(trainer.updates_done, 12 - 4);
    }

    #[test]
    fn reward_sum_matches_lg_when_forced_local() {
        // Telescoping holds inside the trainer loop as well: a zero-width
        // environment (U = 0) forces every action to the BS.
        let env_cfg = EnvConfig {
            num_sps: 0,
            tot_steps: 2,
            thoughts_per_step: 2,
            seed: 24,
            score_min: Some(0.0),
            ..EnvConfig::default()
        };
        let out = train_with_actor(&env_cfg, &tiny_train_cfg(24), false, "sac_mlp").unwrap();
        let (t_lg, _) = lg_reference(&env_cfg);
        for m in &out.metrics {
            assert!((m.reward_sum + t_lg).abs() < 1e-9 * t_lg);
        }
    }
}
