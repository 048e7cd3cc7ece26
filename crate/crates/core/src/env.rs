//! The decision process around the timeline engine: state encoding, token
//! dynamics, the per-thought reward, and the episode lifecycle.
//!
//! One episode assigns every internal thought of a freshly built DAG to a
//! server; the input and output sentinels auto-commit to the base station.
//! Rewards are the negated makespan increments minus a per-thought quality
//! penalty, so reward maximization minimizes total generation delay
//! subject to the quality constraint (a `literal_reward` switch keeps the
//! non-negated delay increment available for audits).

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use rand::{Rng, RngExt};

use crate::channel::{link_rate, sample_fading, DistanceUnit, LinkParams, NodePosition};
use crate::error::{Error, Result};
use crate::genai::{gen_delay, gen_quality, ServerProfile, SpProfileRanges};
use crate::rng::{stream, stream_rng, sub_seed};
use crate::tot::{Prediction, ScheduleState, ThoughtDag, TransferMedium, BS};

/// Finite-state Markov chain over per-SP output token counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTokenModel {
    values: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    stationary: Vec<f64>,
}

impl MarkovTokenModel {
    pub fn new(values: Vec<f64>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("token_values must not be empty".into()));
        }
        if matrix.len() != values.len() {
            return Err(Error::Config(format!(
                "token_matrix must be {n}x{n} to match token_values",
                n = values.len()
            )));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != values.len() {
                return Err(Error::Config(format!(
                    "token_matrix row {i} has wrong length"
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!(
                    "token_matrix row {i} has probabilities outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "token_matrix row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let stationary = power_iteration(&matrix);
        Ok(MarkovTokenModel {
            values,
            matrix,
            stationary,
        })
    }

    /// The default four-state chain over {125, 100, 75, 50} tokens.
    pub fn default_table() -> Self {
        MarkovTokenModel::new(
            vec![125.0, 100.0, 75.0, 50.0],
            vec![
                vec![0.4, 0.3, 0.2, 0.1],
                vec![0.3, 0.4, 0.2, 0.1],
                vec![0.1, 0.2, 0.4, 0.3],
                vec![0.1, 0.2, 0.3, 0.4],
            ],
        )
        .expect("default token chain is valid")
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.matrix[state]
    }

    /// One slot transition.
    pub fn advance<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (next, p) in self.matrix[state].iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        self.n_states() - 1
    }

    /// Evolves a state through `slots` independent row draws.
    pub fn advance_many<R: Rng + ?Sized>(&self, state: usize, rng: &mut R, slots: u64) -> usize {
        let mut s = state;
        for _ in 0..slots {
            s = self.advance(s, rng);
        }
        s
    }

    /// Stationary distribution (computed once by power iteration).
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Draws an initial state from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.stationary.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.n_states() - 1
    }
}

fn power_iteration(matrix: &[Vec<f64>]) -> Vec<f64> {
    let n = matrix.len();
    let mut dist = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (i, &p) in dist.iter().enumerate() {
            for j in 0..n {
                next[j] += p * matrix[i][j];
            }
        }
        let delta: f64 = next.iter().zip(&dist).map(|(a, b)| (a - b).abs()).sum();
        dist = next;
        if delta < 1e-15 {
            break;
        }
    }
    dist
}

/// Wireless and slotting parameters of the deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub bs_power_w: f64,
    pub sp_power_w: f64,
    pub noise_psd: f64,
    pub field_m: f64,
    pub distance_unit: DistanceUnit,
    pub slot_s: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth_hz: 2e6,
            bs_power_w: 1.0,
            sp_power_w: 0.1,
            noise_psd: 4e-21,
            field_m: 100.0,
            distance_unit: DistanceUnit::Km,
            slot_s: 1.0,
        }
    }
}

/// Base-station generation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsProfileConfig {
    pub sigma: f64,
    pub rho: f64,
    pub eta: f64,
    pub psi: f64,
}

impl Default for BsProfileConfig {
    fn default() -> Self {
        BsProfileConfig {
            sigma: 50.0,
            rho: 0.085,
            eta: 0.05,
            psi: 0.1,
        }
    }
}

/// Full environment configuration. Every field has a default matching the
/// standard setup, so an empty config section is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_sps: usize,
    pub tot_steps: usize,
    pub thoughts_per_step: usize,
    pub seed: u64,
    /// Absolute quality floor; when unset it is derived from
    /// `quality_threshold_pct` of the all-BS episode quality.
    pub score_min: Option<f64>,
    pub quality_threshold_pct: f64,
    pub score_max: f64,
    pub bs_profile: BsProfileConfig,
    pub bs_tokens: f64,
    pub sp_ranges: SpProfileRanges,
    pub token_values: Vec<f64>,
    pub token_matrix: Vec<Vec<f64>>,
    pub channel: ChannelConfig,
    /// Edge payload bounds in KB (1 KB = 8000 bits).
    pub edge_kb: (f64, f64),
    /// Pin every fading gain to 1 (used by oracle tests).
    pub freeze_fading: bool,
    /// Pin every SP's token capacity to its initial draw.
    pub freeze_tokens: bool,
    /// Rebuild the identical episode on every reset.
    pub frozen_episodes: bool,
    /// Emit the raw delay increment instead of its negation.
    pub literal_reward: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let token = MarkovTokenModel::default_table();
        EnvConfig {
            num_sps: 6,
            tot_steps: 6,
            thoughts_per_step: 6,
            seed: 0,
            score_min: None,
            quality_threshold_pct: 0.8,
            score_max: 10.0,
            bs_profile: BsProfileConfig::default(),
            bs_tokens: 150.0,
            sp_ranges: SpProfileRanges::default(),
            token_values: token.values.clone(),
            token_matrix: token.matrix.clone(),
            channel: ChannelConfig::default(),
            edge_kb: (5.0, 10.0),
            freeze_fading: false,
            freeze_tokens: false,
            frozen_episodes: false,
            literal_reward: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tot_steps == 0 {
            return Err(Error::Config("env.tot_steps must be >= 1".into()));
        }
        if self.thoughts_per_step == 0 {
            return Err(Error::Config("env.thoughts_per_step must be >= 1".into()));
        }
        if let Some(s) = self.score_min {
            if !(s >= 0.0) {
                return Err(Error::Config("env.score_min must be >= 0".into()));
            }
        }
        if !(self.quality_threshold_pct >= 0.0) {
            return Err(Error::Config(
                "env.quality_threshold_pct must be >= 0".into(),
            ));
        }
        if !(self.bs_tokens > 0.0) {
            return Err(Error::Config("env.bs_tokens must be > 0".into()));
        }
        if !(self.channel.field_m > 0.0) {
            return Err(Error::Config("env.channel.field_m must be > 0".into()));
        }
        if !(self.channel.slot_s > 0.0) {
            return Err(Error::Config("env.channel.slot_s must be > 0".into()));
        }
        LinkParams {
            bandwidth_hz: self.channel.bandwidth_hz,
            tx_power_w: self.channel.bs_power_w,
            noise_psd: self.channel.noise_psd,
        }
        .validate()?;
        if !(self.channel.sp_power_w > 0.0) {
            return Err(Error::Config("env.channel.sp_power_w must be > 0".into()));
        }
        if !(self.edge_kb.0 > 0.0 && self.edge_kb.1 >= self.edge_kb.0) {
            return Err(Error::Config(
                "env.edge_kb must satisfy 0 < lo <= hi".into(),
            ));
        }
        self.sp_ranges.validate()?;
        let model = self.token_model()?;
        // Token dominance: every SP capacity stays below the BS budget.
        for v in model.values() {
            if !(*v > 0.0) {
                return Err(Error::Config("env.token_values must be > 0".into()));
            }
            if *v >= self.bs_tokens {
                return Err(Error::Config(format!(
                    "env.token_values entry {v} must stay below bs_tokens {}",
                    self.bs_tokens
                )));
            }
        }
        let bs = self.bs_server_profile();
        bs.validate()?;
        Ok(())
    }

    pub fn token_model(&self) -> Result<MarkovTokenModel> {
        MarkovTokenModel::new(self.token_values.clone(), self.token_matrix.clone())
    }

    pub fn bs_server_profile(&self) -> ServerProfile {
        ServerProfile {
            score_max: self.score_max,
            sigma: self.bs_profile.sigma,
            rho: self.bs_profile.rho,
            eta: self.bs_profile.eta,
            psi: self.bs_profile.psi,
            role: crate::genai::ServerRole::Bs,
        }
    }

    pub fn internal_count(&self) -> usize {
        self.tot_steps * self.thoughts_per_step
    }

    /// Resolved quality floor: the explicit value if set, otherwise the
    /// configured percentage of the all-BS episode quality.
    pub fn resolved_score_min(&self) -> f64 {
        match self.score_min {
            Some(s) => s,
            None => self.quality_threshold_pct * lg_reference(self).1,
        }
    }
}

/// All-BS reference episode: serial makespan and total quality when every
/// thought (sentinels included) runs at the base station.
pub fn lg_reference(cfg: &EnvConfig) -> (f64, f64) {
    let bs = cfg.bs_server_profile();
    let n = (cfg.internal_count() + 2) as f64;
    (
        n * gen_delay(&bs, cfg.bs_tokens),
        n * gen_quality(&bs, cfg.bs_tokens),
    )
}

/// Raw observation handed to policies: all directed link gains at the
/// pending thought's slot, per-SP token counts, the assignment vector
/// (−1 where unassigned), and the pending payload size in bits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVector {
    pub gains: Vec<f64>,
    pub tokens: Vec<f64>,
    pub assignment: Vec<f64>,
    pub payload_bits: f64,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.gains.len() + self.tokens.len() + self.assignment.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        // The payload entry always exists.
        false
    }

    pub fn raw(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.gains);
        out.extend_from_slice(&self.tokens);
        out.extend_from_slice(&self.assignment);
        out.push(self.payload_bits);
        out
    }
}

/// Normalizer mapping raw state vectors onto learning-friendly scales:
/// gains are log10-compressed, tokens divided by the BS budget,
/// assignment ids by the SP count, payload by 10 KB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder {
    pub num_sps: usize,
    pub bs_tokens: f64,
}

impl Encoder {
    pub fn encoded_dim(&self, internal_count: usize) -> usize {
        (self.num_sps + 1) * self.num_sps + self.num_sps + internal_count + 2 + 1
    }

    pub fn encode(&self, state: &StateVector) -> Vec<f64> {
        let denom = self.num_sps.max(1) as f64;
        let mut out = Vec::with_capacity(state.len());
        for g in &state.gains {
            out.push(g.max(1e-12).log10());
        }
        for t in &state.tokens {
            out.push(t / self.bs_tokens);
        }
        for a in &state.assignment {
            out.push(a / denom);
        }
        out.push(state.payload_bits / 80_000.0);
        out
    }
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
}

/// Lazily grown network medium: per-link fading histories and per-SP token
/// chains, each on its own rng stream so extension order never matters.
struct Medium {
    node_count: usize,
    positions: Vec<NodePosition>,
    distances_m: Vec<f64>,
    channel: ChannelConfig,
    token_model: MarkovTokenModel,
    fading: Vec<Vec<f64>>,
    fading_rngs: Vec<ChaCha12Rng>,
    token_states: Vec<Vec<usize>>,
    token_rngs: Vec<ChaCha12Rng>,
    bs_tokens: f64,
    freeze_fading: bool,
    freeze_tokens: bool,
}

impl Medium {
    fn build(cfg: &EnvConfig, token_model: MarkovTokenModel, episode_seed: u64) -> Result<Medium> {
        let n = cfg.num_sps + 1;
        let mut pos_rng = stream_rng(episode_seed, stream::POSITIONS);
        let mut positions = Vec::with_capacity(n);
        positions.push(NodePosition {
            x_m: cfg.channel.field_m / 2.0,
            y_m: cfg.channel.field_m / 2.0,
        });
        for _ in 0..cfg.num_sps {
            positions.push(NodePosition {
                x_m: pos_rng.random_range(0.0..cfg.channel.field_m),
                y_m: pos_rng.random_range(0.0..cfg.channel.field_m),
            });
        }
        let mut distances_m = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                distances_m[a * n + b] = positions[a].distance_m(&positions[b]);
            }
        }
        let fading_rngs = (0..n * n)
            .map(|idx| stream_rng(episode_seed, stream::FADING_BASE + idx as u64))
            .collect();
        let mut init_rng = stream_rng(episode_seed, stream::TOKEN_INIT);
        let token_states: Vec<Vec<usize>> = (0..cfg.num_sps)
            .map(|_| vec![token_model.sample_stationary(&mut init_rng)])
            .collect();
        let token_rngs = (0..cfg.num_sps)
            .map(|u| stream_rng(episode_seed, stream::TOKEN_CHAIN_BASE + u as u64))
            .collect();
        Ok(Medium {
            node_count: n,
            positions,
            distances_m,
            channel: cfg.channel,
            token_model,
            fading: vec![Vec::new(); n * n],
            fading_rngs,
            token_states,
            token_rngs,
            bs_tokens: cfg.bs_tokens,
            freeze_fading: cfg.freeze_fading,
            freeze_tokens: cfg.freeze_tokens,
        })
    }

    fn gain(&mut self, from: usize, to: usize, slot: u64) -> f64 {
        if self.freeze_fading {
            return 1.0;
        }
        let idx = from * self.node_count + to;
        let history = &mut self.fading[idx];
        let rng = &mut self.fading_rngs[idx];
        while history.len() <= slot as usize {
            history.push(sample_fading(rng).0);
        }
        history[slot as usize]
    }

    fn token_state(&mut self, sp: usize, slot: u64) -> usize {
        if self.freeze_tokens {
            return self.token_states[sp][0];
        }
        let history = &mut self.token_states[sp];
        let rng = &mut self.token_rngs[sp];
        while history.len() <= slot as usize {
            let prev = *history.last().unwrap();
            history.push(self.token_model.advance(prev, rng));
        }
        history[slot as usize]
    }

    fn token_value(&mut self, sp: usize, slot: u64) -> f64 {
        let state = self.token_state(sp, slot);
        self.token_model.value(state)
    }

    fn sender_params(&self, from: usize) -> LinkParams {
        LinkParams {
            bandwidth_hz: self.channel.bandwidth_hz,
            tx_power_w: if from == BS {
                self.channel.bs_power_w
            } else {
                self.channel.sp_power_w
            },
            noise_psd: self.channel.noise_psd,
        }
    }
}

impl TransferMedium for Medium {
    fn transfer_rate(&mut self, from: usize, to: usize, slot: u64) -> f64 {
        let gain = self.gain(from, to, slot);
        let d_m = self.distances_m[from * self.node_count + to];
        let d = self.channel.distance_unit.from_meters(d_m);
        link_rate(&self.sender_params(from), gain, d).unwrap_or(0.0)
    }

    fn capacity(&mut self, server: usize, slot: u64) -> f64 {
        if server == BS {
            self.bs_tokens
        } else {
            self.token_value(server - 1, slot)
        }
    }
}

/// Quality shortfall of one internal thought against the per-thought
/// threshold.
pub fn quality_penalty(per_thought_threshold: f64, score: f64) -> f64 {
    (per_thought_threshold - score).max(0.0)
}

pub struct Env {
    cfg: EnvConfig,
    profiles: Vec<ServerProfile>,
    score_min: f64,
    episode_index: u64,
    dag: ThoughtDag,
    schedule: ScheduleState,
    medium: Medium,
    next_thought: usize,
    prev_finish: f64,
    done: bool,
    started: bool,
    penalties_total: f64,
    current_state: StateVector,
}

impl Env {
    /// Validates the configuration, samples the fixed SP profiles, and
    /// prepares the first episode. Call [`Env::reset`] before stepping.
    pub fn new(cfg: EnvConfig) -> Result<Env> {
        cfg.validate()?;
        let mut profile_rng = stream_rng(cfg.seed, stream::SP_PROFILES);
        let mut profiles = vec![cfg.bs_server_profile()];
        for _ in 0..cfg.num_sps {
            profiles.push(ServerProfile::sample_sp(
                &cfg.sp_ranges,
                cfg.score_max,
                &mut profile_rng,
            ));
        }
        let score_min = cfg.resolved_score_min();
        let token_model = cfg.token_model()?;
        let episode_seed = sub_seed(cfg.seed, 0);
        let mut dag_rng = stream_rng(episode_seed, stream::DAG_EDGES);
        let dag = ThoughtDag::build(
            cfg.tot_steps,
            cfg.thoughts_per_step,
            cfg.edge_kb,
            &mut dag_rng,
        )?;
        let schedule = ScheduleState::new(dag.thought_count(), profiles.len(), cfg.channel.slot_s)?;
        let medium = Medium::build(&cfg, token_model, episode_seed)?;
        let placeholder = StateVector {
            gains: Vec::new(),
            tokens: Vec::new(),
            assignment: Vec::new(),
            payload_bits: 0.0,
        };
        Ok(Env {
            cfg,
            profiles,
            score_min,
            episode_index: 0,
            dag,
            schedule,
            medium,
            next_thought: 1,
            prev_finish: 0.0,
            done: true,
            started: false,
            penalties_total: 0.0,
            current_state: placeholder,
        })
    }

    /// Starts a fresh episode: new DAG, positions, fading streams, and
    /// token chains (identical ones under `frozen_episodes`); the input
    /// sentinel auto-commits to the BS. Returns the state for internal
    /// thought 1.
    pub fn reset(&mut self) -> Result<StateVector> {
        let tag = if self.cfg.frozen_episodes {
            0
        } else {
            self.episode_index
        };
        let episode_seed = sub_seed(self.cfg.seed, tag);
        self.episode_index += 1;

        let mut dag_rng = stream_rng(episode_seed, stream::DAG_EDGES);
        self.dag = ThoughtDag::build(
            self.cfg.tot_steps,
            self.cfg.thoughts_per_step,
            self.cfg.edge_kb,
            &mut dag_rng,
        )?;
        self.schedule = ScheduleState::new(
            self.dag.thought_count(),
            self.profiles.len(),
            self.cfg.channel.slot_s,
        )?;
        self.medium = Medium::build(&self.cfg, self.cfg.token_model()?, episode_seed)?;
        self.next_thought = 1;
        self.prev_finish = 0.0;
        self.done = false;
        self.started = true;
        self.penalties_total = 0.0;
        self.schedule
            .commit_assignment(&self.dag, &self.profiles, &mut self.medium, 0, BS)?;
        self.current_state = self.observe(self.next_thought)?;
        Ok(self.current_state.clone())
    }

    /// Commits the pending thought to `action`. The reward is the negated
    /// finish-time increment minus the quality penalty; the output
    /// sentinel auto-commits (and its increment folds into the final
    /// reward) as soon as the last internal thought lands.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(Error::EpisodeDone);
        }
        if action >= self.profiles.len() {
            return Err(Error::Action {
                action,
                max: self.profiles.len() - 1,
            });
        }
        let thought = self.next_thought;
        let p = self.schedule.commit_assignment(
            &self.dag,
            &self.profiles,
            &mut self.medium,
            thought,
            action,
        )?;
        let penalty = quality_penalty(self.per_thought_threshold(), p.score);
        self.penalties_total += penalty;
        let mut delta = p.finish - self.prev_finish;
        self.prev_finish = p.finish;
        self.next_thought += 1;

        if thought == self.dag.internal_count() {
            let out = self.schedule.commit_assignment(
                &self.dag,
                &self.profiles,
                &mut self.medium,
                self.dag.output_index(),
                BS,
            )?;
            delta += out.finish - self.prev_finish;
            self.prev_finish = out.finish;
            self.done = true;
        }

        let reward = if self.cfg.literal_reward {
            delta - penalty
        } else {
            -delta - penalty
        };
        self.current_state = if self.done {
            self.terminal_state()?
        } else {
            self.observe(self.next_thought)?
        };
        Ok(StepOutcome {
            state: self.current_state.clone(),
            reward,
            done: self.done,
        })
    }

    fn observe(&mut self, thought: usize) -> Result<StateVector> {
        let step = self.dag.step_of(thought);
        let t = self.schedule.step_max_finish(&self.dag, step - 1)?;
        let slot = self.schedule.slot_of(t);
        let j_star = self.schedule.best_predecessor(&self.dag, step)?;
        let payload = self
            .dag
            .edge_bits(j_star, thought)
            .ok_or_else(|| Error::Sequencing("missing best-predecessor edge".into()))?;
        Ok(self.snapshot(slot, payload))
    }

    fn terminal_state(&mut self) -> Result<StateVector> {
        let t = self
            .schedule
            .finish_of(self.dag.output_index())
            .ok_or_else(|| Error::Sequencing("terminal state before output commit".into()))?;
        let slot = self.schedule.slot_of(t);
        Ok(self.snapshot(slot, 0.0))
    }

    fn snapshot(&mut self, slot: u64, payload_bits: f64) -> StateVector {
        let n = self.cfg.num_sps + 1;
        let mut gains = Vec::with_capacity(n * (n - 1));
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    gains.push(self.medium.gain(a, b, slot));
                }
            }
        }
        let tokens = (0..self.cfg.num_sps)
            .map(|u| self.medium.token_value(u, slot))
            .collect();
        let assignment = (0..self.dag.thought_count())
            .map(|i| match self.schedule.server_of(i) {
                Some(m) => m as f64,
                None => -1.0,
            })
            .collect();
        StateVector {
            gains,
            tokens,
            assignment,
            payload_bits,
        }
    }

    /// The internal thought awaiting assignment.
    pub fn current_thought(&self) -> Option<usize> {
        if self.done || !self.started {
            None
        } else {
            Some(self.next_thought)
        }
    }

    /// Timeline preview of placing the pending thought on `server`.
    pub fn predict_for(&mut self, server: usize) -> Result<Prediction> {
        let thought = self.current_thought().ok_or(Error::EpisodeDone)?;
        self.schedule
            .predict_finish(&self.dag, &self.profiles, &mut self.medium, thought, server)
    }

    pub fn state(&self) -> &StateVector {
        &self.current_state
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            num_sps: self.cfg.num_sps,
            bs_tokens: self.cfg.bs_tokens,
        }
    }

    pub fn num_sps(&self) -> usize {
        self.cfg.num_sps
    }

    pub fn action_count(&self) -> usize {
        self.cfg.num_sps + 1
    }

    pub fn internal_count(&self) -> usize {
        self.dag.internal_count()
    }

    pub fn score_min(&self) -> f64 {
        self.score_min
    }

    pub fn per_thought_threshold(&self) -> f64 {
        self.score_min / self.dag.internal_count() as f64
    }

    pub fn penalties_total(&self) -> f64 {
        self.penalties_total
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn episode_totals(&self) -> Result<(f64, f64)> {
        self.schedule.episode_totals(&self.dag)
    }

    pub fn dag(&self) -> &ThoughtDag {
        &self.dag
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn profiles(&self) -> &[ServerProfile] {
        &self.profiles
    }

    pub fn positions(&self) -> &[NodePosition] {
        &self.medium.positions
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Fading gain of a directed link at a slot (memoized; stable across
    /// repeated queries).
    pub fn gain_at(&mut self, from: usize, to: usize, slot: u64) -> f64 {
        self.medium.gain(from, to, slot)
    }

    /// Token capacity of a server at a slot.
    pub fn capacity_at(&mut self, server: usize, slot: u64) -> f64 {
        self.medium.capacity(server, slot)
    }

    /// Directed link rate at a slot.
    pub fn rate_at(&mut self, from: usize, to: usize, slot: u64) -> f64 {
        self.medium.transfer_rate(from, to, slot)
    }
}
