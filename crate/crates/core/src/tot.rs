//! Layered thought DAG and the exact scheduling timeline: ready times,
//! finish times, realized scores, and episode totals for any assignment of
//! thoughts to servers.
//!
//! Thought indices: 0 is the input sentinel, `1..=internal_count` the
//! internal thoughts (`steps × thoughts_per_step`, step-major), and
//! `internal_count + 1` the output sentinel. Both sentinels always run on
//! the base station (server 0).

use std::collections::HashMap;

use rand::{Rng, RngExt};
use serde::Serialize;

use crate::channel::tx_time;
use crate::error::{Error, Result};
use crate::genai::{gen_delay, gen_quality, ServerProfile};

pub const BS: usize = 0;

/// Time-varying quantities the timeline engine needs from the network:
/// directed link rates and per-server token capacities, both indexed by a
/// slot. Implementations may extend lazily, hence `&mut self`.
pub trait TransferMedium {
    /// Achievable rate in bits/s from server `from` to server `to` during
    /// `slot`.
    fn transfer_rate(&mut self, from: usize, to: usize, slot: u64) -> f64;
    /// Output token capacity of `server` during `slot`.
    fn capacity(&mut self, server: usize, slot: u64) -> f64;
}

/// One dependency edge with its payload size in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub bits: f64,
}

/// Step-structured thought graph. Every thought at step `l` depends on all
/// thoughts at step `l − 1`; only the best-scoring predecessor's output is
/// actually transmitted.
#[derive(Debug, Clone)]
pub struct ThoughtDag {
    steps: usize,
    thoughts_per_step: usize,
    edges: Vec<DagEdge>,
    edge_bits: HashMap<(usize, usize), f64>,
}

impl ThoughtDag {
    /// Builds the layered DAG, sampling each edge's payload uniformly from
    /// `edge_kb` kilobytes (1 KB = 8000 bits).
    pub fn build<R: Rng + ?Sized>(
        steps: usize,
        thoughts_per_step: usize,
        edge_kb: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if steps == 0 || thoughts_per_step == 0 {
            return Err(Error::Config(
                "tot_steps and thoughts_per_step must be >= 1".into(),
            ));
        }
        if !(edge_kb.0 > 0.0 && edge_kb.1 >= edge_kb.0) {
            return Err(Error::Config("edge_kb must satisfy 0 < lo <= hi".into()));
        }
        let mut dag = ThoughtDag {
            steps,
            thoughts_per_step,
            edges: Vec::new(),
            edge_bits: HashMap::new(),
        };
        let push = |dag: &mut ThoughtDag, from: usize, to: usize, rng: &mut R| {
            let kb = if edge_kb.0 == edge_kb.1 {
                edge_kb.0
            } else {
                rng.random_range(edge_kb.0..edge_kb.1)
            };
            let bits = kb * 8_000.0;
            dag.edges.push(DagEdge { from, to, bits });
            dag.edge_bits.insert((from, to), bits);
        };
        for to in dag.thoughts_at_step(1) {
            push(&mut dag, 0, to, rng);
        }
        for l in 2..=steps {
            for from in dag.thoughts_at_step(l - 1) {
                for to in dag.thoughts_at_step(l) {
                    push(&mut dag, from, to, rng);
                }
            }
        }
        let output = dag.output_index();
        for from in dag.thoughts_at_step(steps) {
            push(&mut dag, from, output, rng);
        }
        Ok(dag)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn thoughts_per_step(&self) -> usize {
        self.thoughts_per_step
    }

    pub fn internal_count(&self) -> usize {
        self.steps * self.thoughts_per_step
    }

    /// Total vertex count including both sentinels.
    pub fn thought_count(&self) -> usize {
        self.internal_count() + 2
    }

    pub fn output_index(&self) -> usize {
        self.internal_count() + 1
    }

    /// Step of a thought: 0 for the input sentinel, `steps + 1` for the
    /// output sentinel.
    pub fn step_of(&self, thought: usize) -> usize {
        if thought == 0 {
            0
        } else if thought == self.output_index() {
            self.steps + 1
        } else {
            (thought - 1) / self.thoughts_per_step + 1
        }
    }

    /// Indices of the thoughts making up step `l` (sentinels are steps 0
    /// and `steps + 1`).
    pub fn thoughts_at_step(&self, l: usize) -> std::ops::Range<usize> {
        if l == 0 {
            0..1
        } else if l == self.steps + 1 {
            self.output_index()..self.output_index() + 1
        } else {
            let first = (l - 1) * self.thoughts_per_step + 1;
            first..first + self.thoughts_per_step
        }
    }

    /// All predecessors of a thought (the previous step in full).
    pub fn predecessors(&self, thought: usize) -> std::ops::Range<usize> {
        let l = self.step_of(thought);
        if l == 0 {
            0..0
        } else {
            self.thoughts_at_step(l - 1)
        }
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn edge_bits(&self, from: usize, to: usize) -> Option<f64> {
        self.edge_bits.get(&(from, to)).copied()
    }
}

/// What committing a thought to a server would do to the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub ready: f64,
    pub start: f64,
    pub finish: f64,
    pub score: f64,
    /// Token capacity the generating server had at the start slot.
    pub capacity: f64,
    pub tx_bits: f64,
    pub tx_s: f64,
    /// Best predecessor whose payload feeds this thought (input sentinel
    /// has none).
    pub best_predecessor: Option<usize>,
}

/// Running timeline: per-server availability and per-thought commitments.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    avail: Vec<f64>,
    server: Vec<Option<usize>>,
    ready: Vec<f64>,
    start: Vec<f64>,
    finish: Vec<Option<f64>>,
    score: Vec<f64>,
    tx_bits: Vec<f64>,
    tx_s: Vec<f64>,
    slot_s: f64,
}

impl ScheduleState {
    pub fn new(thought_count: usize, server_count: usize, slot_s: f64) -> Result<Self> {
        if !(slot_s > 0.0) {
            return Err(Error::Config("slot_s must be > 0".into()));
        }
        if server_count == 0 {
            return Err(Error::Config("need at least the base station".into()));
        }
        Ok(ScheduleState {
            avail: vec![0.0; server_count],
            server: vec![None; thought_count],
            ready: vec![0.0; thought_count],
            start: vec![0.0; thought_count],
            finish: vec![None; thought_count],
            score: vec![0.0; thought_count],
            tx_bits: vec![0.0; thought_count],
            tx_s: vec![0.0; thought_count],
            slot_s,
        })
    }

    pub fn slot_of(&self, time: f64) -> u64 {
        (time / self.slot_s).floor() as u64
    }

    pub fn slot_s(&self) -> f64 {
        self.slot_s
    }

    pub fn server_of(&self, thought: usize) -> Option<usize> {
        self.server[thought]
    }

    pub fn finish_of(&self, thought: usize) -> Option<f64> {
        self.finish[thought]
    }

    pub fn score_of(&self, thought: usize) -> f64 {
        self.score[thought]
    }

    pub fn start_of(&self, thought: usize) -> f64 {
        self.start[thought]
    }

    pub fn ready_of(&self, thought: usize) -> f64 {
        self.ready[thought]
    }

    pub fn tx_of(&self, thought: usize) -> (f64, f64) {
        (self.tx_bits[thought], self.tx_s[thought])
    }

    pub fn availability(&self, server: usize) -> f64 {
        self.avail[server]
    }

    pub fn is_committed(&self, thought: usize) -> bool {
        self.finish[thought].is_some()
    }

    /// Latest actual finish over a step; errors if any thought there is
    /// uncommitted.
    pub fn step_max_finish(&self, dag: &ThoughtDag, step: usize) -> Result<f64> {
        let mut max = 0.0f64;
        for j in dag.thoughts_at_step(step) {
            let f = self.finish[j].ok_or_else(|| {
                Error::Sequencing(format!("thought {j} of step {step} not committed"))
            })?;
            max = max.max(f);
        }
        Ok(max)
    }

    /// Highest-score thought of step `l − 1`; ties break to the lowest
    /// index.
    pub fn best_predecessor(&self, dag: &ThoughtDag, step: usize) -> Result<usize> {
        if step == 0 {
            return Err(Error::Sequencing(
                "the input thought has no predecessors".into(),
            ));
        }
        let mut best: Option<(usize, f64)> = None;
        for j in dag.thoughts_at_step(step - 1) {
            if self.finish[j].is_none() {
                return Err(Error::Sequencing(format!(
                    "predecessor {j} of step {step} not committed"
                )));
            }
            let s = self.score[j];
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((j, s)),
            }
        }
        best.map(|(j, _)| j)
            .ok_or_else(|| Error::Sequencing("empty predecessor step".into()))
    }

    /// Computes ready/start/finish/score for placing `thought` on
    /// `server`, without mutating the schedule. The ready time is the
    /// latest predecessor finish plus the transmission of the best
    /// predecessor's payload when it lives on a different server;
    /// generation starts once the server is free, using the token capacity
    /// of the start slot.
    pub fn predict_finish<M: TransferMedium + ?Sized>(
        &self,
        dag: &ThoughtDag,
        profiles: &[ServerProfile],
        medium: &mut M,
        thought: usize,
        server: usize,
    ) -> Result<Prediction> {
        if server >= self.avail.len() {
            return Err(Error::Action {
                action: server,
                max: self.avail.len() - 1,
            });
        }
        let step = dag.step_of(thought);
        let (ready, tx_bits, tx_s, best) = if step == 0 {
            (0.0, 0.0, 0.0, None)
        } else {
            let max_fin = self.step_max_finish(dag, step - 1)?;
            let j_star = self.best_predecessor(dag, step)?;
            let from = self.server[j_star].expect("committed predecessor has a server");
            if from == server {
                (max_fin, 0.0, 0.0, Some(j_star))
            } else {
                let bits = dag.edge_bits(j_star, thought).ok_or_else(|| {
                    Error::Sequencing(format!("no edge between {j_star} and {thought}"))
                })?;
                let slot = self.slot_of(max_fin);
                let rate = medium.transfer_rate(from, server, slot);
                if rate <= 0.0 && bits > 0.0 {
                    return Err(Error::UnreachableLink { from, to: server });
                }
                let t =
                    tx_time(bits, rate).map_err(|_| Error::UnreachableLink { from, to: server })?;
                (max_fin + t, bits, t, Some(j_star))
            }
        };
        let start = ready.max(self.avail[server]);
        let capacity = medium.capacity(server, self.slot_of(start));
        let profile = &profiles[server];
        let finish = start + gen_delay(profile, capacity);
        let score = gen_quality(profile, capacity);
        Ok(Prediction {
            ready,
            start,
            finish,
            score,
            capacity,
            tx_bits,
            tx_s,
            best_predecessor: best,
        })
    }

    /// Applies [`ScheduleState::predict_finish`] to the schedule: records
    /// the thought's timeline entries and pushes the server's availability
    /// to the new finish.
    pub fn commit_assignment<M: TransferMedium + ?Sized>(
        &mut self,
        dag: &ThoughtDag,
        profiles: &[ServerProfile],
        medium: &mut M,
        thought: usize,
        server: usize,
    ) -> Result<Prediction> {
        if self.is_committed(thought) {
            return Err(Error::Sequencing(format!(
                "thought {thought} already committed"
            )));
        }
        // Sentinels are pinned to the base station.
        if (thought == 0 || thought == dag.output_index()) && server != BS {
            return Err(Error::Sequencing(format!(
                "sentinel thought {thought} must run on the base station"
            )));
        }
        let p = self.predict_finish(dag, profiles, medium, thought, server)?;
        self.server[thought] = Some(server);
        self.ready[thought] = p.ready;
        self.start[thought] = p.start;
        self.finish[thought] = Some(p.finish);
        self.score[thought] = p.score;
        self.tx_bits[thought] = p.tx_bits;
        self.tx_s[thought] = p.tx_s;
        self.avail[server] = p.finish;
        Ok(p)
    }

    /// Episode totals once every thought is committed: makespan is the
    /// output sentinel's finish, total quality sums every realized score
    /// in index order (sentinels included).
    pub fn episode_totals(&self, dag: &ThoughtDag) -> Result<(f64, f64)> {
        let t_tot = self.finish[dag.output_index()]
            .ok_or_else(|| Error::Sequencing("output thought not committed".into()))?;
        let mut score_tot = 0.0;
        for i in 0..dag.thought_count() {
            if self.finish[i].is_none() {
                return Err(Error::Sequencing(format!("thought {i} not committed")));
            }
            score_tot += self.score[i];
        }
        Ok((t_tot, score_tot))
    }
}
