//! Baseline policies, the value-based trainer, evaluation rollouts, and
//! experiment sweeps.
//!
//! Every policy implements the same act-on-environment interface. Learned
//! policies act greedily (argmax) at evaluation time; per-decision
//! wall-clock is measured around the action choice alone.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use rand::RngExt;

use crate::diffusion::{greedy_action, sample_action_logits, DenoiserNet, DiffusionSchedule};
use crate::dsac::{
    train_with_actor, update_critic, EpisodeMetrics, ReplayBuffer, TrainConfig, TrainOutput,
};
use crate::env::{Encoder, Env, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Checkpoint, DenseNet};
use crate::rng::{stream, stream_rng, sub_seed};
use crate::tot::BS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Dsac,
    SacMlp,
    Ddqn,
    GreedyEft,
    Random,
    LocalOnly,
}

impl PolicyKind {
    pub fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            PolicyKind::Dsac | PolicyKind::SacMlp | PolicyKind::Ddqn
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dsac => "dsac",
            PolicyKind::SacMlp => "sac_mlp",
            PolicyKind::Ddqn => "ddqn",
            PolicyKind::GreedyEft => "greedy_eft",
            PolicyKind::Random => "random",
            PolicyKind::LocalOnly => "local_only",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsac" => Ok(PolicyKind::Dsac),
            "sac_mlp" => Ok(PolicyKind::SacMlp),
            "ddqn" => Ok(PolicyKind::Ddqn),
            "greedy_eft" => Ok(PolicyKind::GreedyEft),
            "random" => Ok(PolicyKind::Random),
            "local_only" => Ok(PolicyKind::LocalOnly),
            "ppo" => Err(Error::Config(
                "policy `ppo` is reserved for external comparison data".into(),
            )),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

/// A ready-to-act policy instance.
pub enum Policy {
    Dsac {
        denoiser: DenoiserNet,
        schedule: DiffusionSchedule,
        encoder: Encoder,
        rng: ChaCha12Rng,
    },
    SacMlp {
        net: DenseNet,
        encoder: Encoder,
    },
    Ddqn {
        net: DenseNet,
        encoder: Encoder,
    },
    GreedyEft,
    Random {
        actions: usize,
        rng: ChaCha12Rng,
    },
    LocalOnly,
}

impl Policy {
    /// Instantiates a policy for `env`; learned kinds load their nets from
    /// `checkpoint`. `policy_seed` feeds the stochastic policies so runs
    /// replay deterministically.
    pub fn load(
        kind: PolicyKind,
        checkpoint: Option<&Path>,
        env: &Env,
        policy_seed: u64,
    ) -> Result<Policy> {
        let encoder = env.encoder();
        let state_dim = encoder.encoded_dim(env.internal_count());
        let action_dim = env.action_count();
        let rng = stream_rng(policy_seed, stream::POLICY_EVAL);
        match kind {
            PolicyKind::GreedyEft => Ok(Policy::GreedyEft),
            PolicyKind::LocalOnly => Ok(Policy::LocalOnly),
            PolicyKind::Random => Ok(Policy::Random {
                actions: action_dim,
                rng,
            }),
            PolicyKind::Dsac | PolicyKind::SacMlp | PolicyKind::Ddqn => {
                let path = checkpoint.ok_or_else(|| {
                    Error::Checkpoint(format!("policy {kind} requires a checkpoint path"))
                })?;
                let ckpt = Checkpoint::load(path)?;
                let stored_kind = ckpt.meta_value("kind").unwrap_or("");
                if stored_kind != kind.as_str() {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint holds a `{stored_kind}` policy, expected `{kind}`"
                    )));
                }
                let net_name = if kind == PolicyKind::Ddqn {
                    "qnet"
                } else {
                    "actor"
                };
                let net = ckpt
                    .net(net_name)
                    .ok_or_else(|| Error::Checkpoint(format!("checkpoint missing `{net_name}`")))?
                    .clone();
                if net.output_dim() != action_dim {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint action dim {} does not match environment {}",
                        net.output_dim(),
                        action_dim
                    )));
                }
                match kind {
                    PolicyKind::Dsac => {
                        let k_steps: usize = ckpt
                            .meta_value("k_steps")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| Error::Checkpoint("missing k_steps".into()))?;
                        let beta_min: f64 = ckpt
                            .meta_value("beta_min")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| Error::Checkpoint("missing beta_min".into()))?;
                        let beta_max: f64 = ckpt
                            .meta_value("beta_max")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| Error::Checkpoint("missing beta_max".into()))?;
                        let expected_in = action_dim + crate::diffusion::EMBED_DIM + state_dim;
                        if net.input_dim() != expected_in {
                            return Err(Error::Checkpoint(format!(
                                "checkpoint state layout {} does not match environment {}",
                                net.input_dim(),
                                expected_in
                            )));
                        }
                        Ok(Policy::Dsac {
                            denoiser: DenoiserNet {
                                net,
                                action_dim,
                                embed_dim: crate::diffusion::EMBED_DIM,
                                state_dim,
                            },
                            schedule: DiffusionSchedule::new(k_steps, beta_min, beta_max)?,
                            encoder,
                            rng,
                        })
                    }
                    PolicyKind::SacMlp => {
                        if net.input_dim() != state_dim {
                            return Err(Error::Checkpoint(
                                "checkpoint state layout does not match environment".into(),
                            ));
                        }
                        Ok(Policy::SacMlp { net, encoder })
                    }
                    _ => {
                        if net.input_dim() != state_dim {
                            return Err(Error::Checkpoint(
                                "checkpoint state layout does not match environment".into(),
                            ));
                        }
                        Ok(Policy::Ddqn { net, encoder })
                    }
                }
            }
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Dsac { .. } => PolicyKind::Dsac,
            Policy::SacMlp { .. } => PolicyKind::SacMlp,
            Policy::Ddqn { .. } => PolicyKind::Ddqn,
            Policy::GreedyEft => PolicyKind::GreedyEft,
            Policy::Random { .. } => PolicyKind::Random,
            Policy::LocalOnly => PolicyKind::LocalOnly,
        }
    }

    /// Chooses a server for the pending thought (greedy for learned
    /// policies).
    pub fn act(&mut self, env: &mut Env) -> Result<usize> {
        match self {
            Policy::Dsac {
                denoiser,
                schedule,
                encoder,
                rng,
            } => {
                let encoded = encoder.encode(env.state());
                let sampled = sample_action_logits(denoiser, &encoded, schedule, rng)?;
                Ok(greedy_action(&sampled.logits))
            }
            Policy::SacMlp { net, encoder } | Policy::Ddqn { net, encoder } => {
                let encoded = encoder.encode(env.state());
                Ok(greedy_action(&net.forward(&encoded)?))
            }
            Policy::GreedyEft => greedy_eft_action(env),
            Policy::Random { actions, rng } => Ok(rng.random_range(0..*actions)),
            Policy::LocalOnly => Ok(BS),
        }
    }
}

/// Earliest-finish-time heuristic: among servers whose predicted score
/// meets the per-thought threshold, pick the one finishing soonest; if
/// none qualifies, fall back to the highest predicted score. Ties break to
/// the lowest server id.
pub fn greedy_eft_action(env: &mut Env) -> Result<usize> {
    let threshold = env.per_thought_threshold();
    let mut best_finish: Option<(usize, f64)> = None;
    let mut best_score: Option<(usize, f64)> = None;
    for server in 0..env.action_count() {
        let p = env.predict_for(server)?;
        if p.score >= threshold && (best_finish.is_none() || p.finish < best_finish.unwrap().1) {
            best_finish = Some((server, p.finish));
        }
        if best_score.is_none() || p.score > best_score.unwrap().1 {
            best_score = Some((server, p.score));
        }
    }
    Ok(best_finish.or(best_score).map(|(m, _)| m).unwrap_or(BS))
}

/// ε at a given episode under the linear anneal from `start` to `end`
/// across the first half of training.
pub fn epsilon_at(episode: usize, total_episodes: usize, start: f64, end: f64) -> f64 {
    let half = (total_episodes / 2).max(1);
    if episode >= half {
        return end;
    }
    let frac = episode as f64 / half as f64;
    start + (end - start) * frac
}

/// Double-Q trainer: an online net selects the next action, the target net
/// evaluates it. ε-greedy with the linear anneal; soft target updates.
pub fn train_ddqn(env_cfg: &EnvConfig, train_cfg: &TrainConfig) -> Result<TrainOutput> {
    train_cfg.validate()?;
    let mut env = Env::new(env_cfg.clone())?;
    let encoder = env.encoder();
    let state_dim = encoder.encoded_dim(env.internal_count());
    let action_dim = env.action_count();
    let mut init_rng = stream_rng(train_cfg.seed, stream::NET_INIT);
    let mut qnet = DenseNet::mlp(
        state_dim,
        &[train_cfg.critic_width, train_cfg.critic_width],
        action_dim,
        Activation::Mish,
        &mut init_rng,
    )?;
    let mut target = qnet.clone();
    let mut adam = AdamState::new(&qnet, train_cfg.critic_lr);
    let mut buffer = ReplayBuffer::new(train_cfg.buffer_capacity)?;
    let mut action_rng = stream_rng(train_cfg.seed, stream::ACTION_SAMPLING);
    let mut buffer_rng = stream_rng(train_cfg.seed, stream::BUFFER_SAMPLING);

    let mut metrics = Vec::with_capacity(train_cfg.episodes);
    for episode in 0..train_cfg.episodes {
        let epsilon = epsilon_at(
            episode,
            train_cfg.episodes,
            train_cfg.epsilon_start,
            train_cfg.epsilon_end,
        );
        let mut state = env.reset()?;
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut update_rounds = 0usize;
        loop {
            let encoded = encoder.encode(&state);
            let explore: f64 = action_rng.random();
            let action = if explore < epsilon {
                action_rng.random_range(0..action_dim)
            } else {
                greedy_action(&qnet.forward(&encoded)?)
            };
            let outcome = env.step(action)?;
            reward_sum += outcome.reward;
            buffer.push(Transition {
                state,
                action,
                reward: outcome.reward,
                next_state: outcome.state.clone(),
                done: outcome.done,
            });
            if buffer.len() >= train_cfg.batch_size && buffer.len() >= train_cfg.warmup_transitions
            {
                let batch = buffer.sample(train_cfg.batch_size, &mut buffer_rng)?;
                let mut ys = Vec::with_capacity(batch.len());
                for t in &batch {
                    if t.done {
                        ys.push(t.reward);
                    } else {
                        let next = encoder.encode(&t.next_state);
                        let chosen = greedy_action(&qnet.forward(&next)?);
                        let q_eval = target.forward(&next)?[chosen];
                        ys.push(t.reward + train_cfg.gamma * q_eval);
                    }
                }
                loss_sum += update_critic(&batch, &encoder, &ys, &mut qnet, &mut adam)?;
                crate::dsac::soft_update(&qnet, &mut target, train_cfg.tau)?;
                update_rounds += 1;
                qnet.check_finite().map_err(|e| match e {
                    Error::NonFiniteParam { layer, .. } => Error::NonFiniteParam {
                        layer,
                        episode,
                        step: update_rounds,
                    },
                    other => other,
                })?;
            }
            state = outcome.state;
            if outcome.done {
                break;
            }
        }
        let (t_tot, score_tot) = env.episode_totals()?;
        metrics.push(EpisodeMetrics {
            episode,
            reward_sum,
            t_tot_s: t_tot,
            score_tot,
            critic1_loss: loss_sum / update_rounds.max(1) as f64,
            critic2_loss: 0.0,
            actor_loss: 0.0,
            entropy: 0.0,
        });
    }
    let checkpoint = Checkpoint {
        meta: vec![
            ("kind".to_string(), "ddqn".to_string()),
            ("num_sps".to_string(), env_cfg.num_sps.to_string()),
            ("tot_steps".to_string(), env_cfg.tot_steps.to_string()),
            (
                "thoughts_per_step".to_string(),
                env_cfg.thoughts_per_step.to_string(),
            ),
            ("seed".to_string(), train_cfg.seed.to_string()),
        ],
        nets: vec![("qnet".to_string(), qnet)],
    };
    Ok(TrainOutput {
        metrics,
        checkpoint,
    })
}

/// Soft actor-critic with a plain MLP actor: the diffusion trainer with
/// the sampler bypassed.
pub fn train_sac_mlp(env_cfg: &EnvConfig, train_cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_actor(env_cfg, train_cfg, false, "sac_mlp")
}

/// Per-thought trace entry of one finished episode.
#[derive(Debug, Clone, Serialize)]
pub struct ThoughtTrace {
    pub index: usize,
    pub step: usize,
    pub server: usize,
    pub ready_s: f64,
    pub start_s: f64,
    pub finish_s: f64,
    pub score: f64,
    pub tx_bits: f64,
    pub tx_s: f64,
}

/// Everything a single greedy rollout produced.
pub struct EpisodeRun {
    pub t_tot_s: f64,
    pub score_tot: f64,
    pub reward_sum: f64,
    pub decision_ms: Vec<f64>,
    pub thoughts: Vec<ThoughtTrace>,
}

/// Rolls one episode with the policy, timing each decision.
pub fn run_episode(policy: &mut Policy, env: &mut Env) -> Result<EpisodeRun> {
    env.reset()?;
    let mut decision_ms = Vec::with_capacity(env.internal_count());
    let mut reward_sum = 0.0;
    loop {
        let started = Instant::now();
        let action = policy.act(env)?;
        decision_ms.push(started.elapsed().as_secs_f64() * 1e3);
        let out = env.step(action)?;
        reward_sum += out.reward;
        if out.done {
            break;
        }
    }
    let (t_tot_s, score_tot) = env.episode_totals()?;
    let dag = env.dag();
    let schedule = env.schedule();
    let thoughts = (0..dag.thought_count())
        .map(|i| {
            let (tx_bits, tx_s) = schedule.tx_of(i);
            ThoughtTrace {
                index: i,
                step: dag.step_of(i),
                server: schedule.server_of(i).unwrap_or(BS),
                ready_s: schedule.ready_of(i),
                start_s: schedule.start_of(i),
                finish_s: schedule.finish_of(i).unwrap_or(f64::NAN),
                score: schedule.score_of(i),
                tx_bits,
                tx_s,
            }
        })
        .collect();
    Ok(EpisodeRun {
        t_tot_s,
        score_tot,
        reward_sum,
        decision_ms,
        thoughts,
    })
}

/// Trace report serialized by the `trace` command.
#[derive(Serialize)]
pub struct TraceReport {
    pub policy: String,
    pub seed: u64,
    pub t_tot_s: f64,
    pub score_tot: f64,
    pub score_min: f64,
    pub constraint_ok: bool,
    pub thoughts: Vec<ThoughtTrace>,
}

/// One evaluation row: a policy on one seeded environment.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub policy: PolicyKind,
    pub seed: u64,
    pub t_tot_s: f64,
    pub score_tot: f64,
    pub constraint_ok: bool,
    pub decision_ms_mean: f64,
}

pub const EVAL_CSV_HEADER: &str = "policy,seed,t_tot_s,score_tot,constraint_ok,decision_ms_mean";

impl EvalOutcome {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.policy,
            self.seed,
            self.t_tot_s,
            self.score_tot,
            self.constraint_ok,
            self.decision_ms_mean
        )
    }
}

/// Evaluates a policy on one freshly seeded environment per seed.
pub fn evaluate(
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    env_cfg: &EnvConfig,
    seeds: &[u64],
) -> Result<Vec<EvalOutcome>> {
    if seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = EnvConfig {
            seed,
            ..env_cfg.clone()
        };
        let mut env = Env::new(cfg)?;
        let mut policy = Policy::load(kind, checkpoint, &env, sub_seed(seed, 0x9a11))?;
        let run = run_episode(&mut policy, &mut env)?;
        let n = run.decision_ms.len().max(1) as f64;
        out.push(EvalOutcome {
            policy: kind,
            seed,
            t_tot_s: run.t_tot_s,
            score_tot: run.score_tot,
            constraint_ok: run.score_tot >= env.score_min(),
            decision_ms_mean: run.decision_ms.iter().sum::<f64>() / n,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NumSps,
    ThoughtsPerStep,
    TotSteps,
    QualityThresholdPct,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::NumSps => "num_sps",
            SweepAxis::ThoughtsPerStep => "thoughts_per_step",
            SweepAxis::TotSteps => "tot_steps",
            SweepAxis::QualityThresholdPct => "quality_threshold_pct",
        }
    }

    fn apply(self, base: &EnvConfig, value: f64) -> Result<EnvConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::NumSps => cfg.num_sps = non_negative_count(value, "num_sps")?,
            SweepAxis::ThoughtsPerStep => {
                cfg.thoughts_per_step = non_negative_count(value, "thoughts_per_step")?
            }
            SweepAxis::TotSteps => cfg.tot_steps = non_negative_count(value, "tot_steps")?,
            SweepAxis::QualityThresholdPct => {
                cfg.quality_threshold_pct = value;
                cfg.score_min = None;
            }
        }
        Ok(cfg)
    }
}

fn non_negative_count(value: f64, key: &str) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 {
        return Err(Error::Config(format!(
            "sweep value {value} for {key} must be a non-negative integer"
        )));
    }
    Ok(value as usize)
}

/// Declarative sweep: one axis, its values, the seed set, and the policy
/// set compared pairwise on identical seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
    /// Checkpoint path per learned policy name.
    #[serde(default)]
    pub checkpoints: HashMap<String, String>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep.seeds must not be empty".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("sweep.policies must not be empty".into()));
        }
        for p in &self.policies {
            if p.needs_checkpoint() && !self.checkpoints.contains_key(p.as_str()) {
                return Err(Error::Config(format!(
                    "sweep.checkpoints missing an entry for `{p}`"
                )));
            }
        }
        Ok(())
    }
}

/// One sweep cell result; `error` carries per-cell failures without
/// aborting the sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub t_tot_s: Option<f64>,
    pub score_tot: Option<f64>,
    pub constraint_ok: Option<bool>,
    pub timing_ms: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str =
    "policy,axis,value,seed,t_tot_s,score_tot,constraint_ok,timing_ms,error";

/// Runs the cartesian product (value × policy × seed) in deterministic
/// order. `include_timing` controls whether wall-clock means reach the
/// rows; leaving it off keeps the CSV bit-reproducible.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &EnvConfig,
    include_timing: bool,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len() * spec.policies.len() * spec.seeds.len());
    for &value in &spec.values {
        for &policy in &spec.policies {
            let ckpt = spec.checkpoints.get(policy.as_str()).map(Path::new);
            for &seed in &spec.seeds {
                let mut row = SweepRow {
                    policy,
                    axis: spec.axis,
                    value,
                    seed,
                    t_tot_s: None,
                    score_tot: None,
                    constraint_ok: None,
                    timing_ms: None,
                    error: None,
                };
                let cell = spec
                    .axis
                    .apply(base, value)
                    .and_then(|cfg| evaluate(policy, ckpt, &cfg, &[seed]));
                match cell {
                    Ok(outcomes) => {
                        let o = &outcomes[0];
                        row.t_tot_s = Some(o.t_tot_s);
                        row.score_tot = Some(o.score_tot);
                        row.constraint_ok = Some(o.constraint_ok);
                        if include_timing {
                            row.timing_ms = Some(o.decision_ms_mean);
                        }
                    }
                    Err(e) => row.error = Some(e.to_string().replace(',', ";")),
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fmt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let fmt_b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.policy,
            r.axis.as_str(),
            r.value,
            r.seed,
            fmt_f(r.t_tot_s),
            fmt_f(r.score_tot),
            fmt_b(r.constraint_ok),
            fmt_f(r.timing_ms),
            r.error.clone().unwrap_or_default()
        ));
    }
    out
}
