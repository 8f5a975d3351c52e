//! Learned bidders: a regression bidder that predicts the surrogate outcome
//! directly, and a ranking bidder whose pairwise-trained score adjusts the
//! resource-aware heuristic bid.
//!
//! Both share the same architecture, labels, buffer, and cadence; only the
//! training objective differs. Labels are hybrid: the winner's realized
//! delay, and for losers the delay their own bid-time estimate predicted,
//! each plus a flat penalty when the (realized or estimated) deadline is
//! violated. Preferences are ordered pairs of candidates whose labels differ
//! by more than a tie tolerance.

pub mod net;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::bidding::{bid_b2, features, BidContext, Bidder, HeuristicWeights};
use crate::domain::{CompletionRecord, MachineId, MachineState, TaskId, TaskSpec, FEATURE_DIM};
use crate::rng::{Stream, StreamId};
use crate::ConfigError;

use net::{
    pairwise_loss, recon_loss, Grads, RunningStats, Scorer,
};

/// Training knobs. Everything here is exposed through the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Auctioned tasks between training rounds.
    pub train_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the reconstruction term in the training loss.
    pub recon_weight: f64,
    /// Record buffer capacity; oldest records are evicted first.
    pub buffer_cap: usize,
    /// Flat label penalty added on (realized or estimated) deadline misses.
    pub miss_penalty: f64,
    /// Label gap below which a candidate pair is treated as a tie.
    pub tie_eps: f64,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// One parameter set per machine instead of a single shared model.
    pub per_machine_models: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_every: 10,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            recon_weight: 1.0,
            buffer_cap: 2000,
            miss_penalty: 5.0,
            tie_eps: 1e-6,
            hidden_dim: 16,
            latent_dim: 8,
            per_machine_models: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("train_every", self.train_every),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("buffer_cap", self.buffer_cap),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(ConfigError::new(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("recon_weight", self.recon_weight),
            ("miss_penalty", self.miss_penalty),
            ("tie_eps", self.tie_eps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One auctioned task with everything needed to derive training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub task: TaskId,
    pub candidates: Vec<MachineId>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    /// Surrogate outcome per candidate; lower is better.
    pub outcomes: Vec<f64>,
    pub winner: MachineId,
    /// Realized delay of the winner once completed.
    pub realized_delay: f64,
}

/// Ordered preference pairs (a, b) with candidate a strictly preferred:
/// outcome(a) < outcome(b) - tie_eps. Near-ties yield no pair.
pub fn derive_preferences(rec: &CandidateRecord, tie_eps: f64) -> Vec<(usize, usize)> {
    let k = rec.outcomes.len();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a != b && rec.outcomes[a] < rec.outcomes[b] - tie_eps {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Per-round training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPoint {
    pub round: usize,
    pub pairwise_loss: f64,
    pub pairwise_accuracy: f64,
    pub recon_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Ranking,
    Regression,
}

struct ModelSlot {
    scorer: Scorer,
    stats: RunningStats,
}

struct PendingAuction {
    machines: Vec<MachineId>,
    features: Vec<[f64; FEATURE_DIM]>,
}

/// Shared machinery of the two learned bidders: model bank, feature cache,
/// record buffer, and the periodic training loop.
pub struct LearnedCore {
    pub cfg: TrainConfig,
    pub weights: HeuristicWeights,
    slots: Vec<ModelSlot>,
    per_machine: bool,
    buffer: VecDeque<CandidateRecord>,
    pending: HashMap<TaskId, PendingAuction>,
    auctions: usize,
    rounds: usize,
    stream: Stream,
    curve: Vec<TrainingPoint>,
    objective: Objective,
}

impl LearnedCore {
    pub fn new(
        objective: Objective,
        weights: HeuristicWeights,
        cfg: TrainConfig,
        fleet_size: usize,
        seed: u64,
    ) -> Self {
        let mut init = Stream::new(seed, StreamId::ModelInit);
        let slot_count = if cfg.per_machine_models { fleet_size } else { 1 };
        let slots = (0..slot_count)
            .map(|_| ModelSlot {
                scorer: Scorer::init(cfg.hidden_dim, cfg.latent_dim, &mut init),
                stats: RunningStats::default(),
            })
            .collect();
        Self {
            per_machine: cfg.per_machine_models,
            cfg,
            weights,
            slots,
            buffer: VecDeque::new(),
            pending: HashMap::new(),
            auctions: 0,
            rounds: 0,
            stream: Stream::new(seed, StreamId::Training),
            curve: Vec::new(),
            objective,
        }
    }

    fn slot_of(&self, machine: MachineId) -> usize {
        if self.per_machine {
            machine as usize
        } else {
            0
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn training_curve(&self) -> &[TrainingPoint] {
        &self.curve
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Injects a pre-labeled record, e.g. for offline training experiments.
    /// Feeds the normalizer stats exactly as live bidding would.
    pub fn push_record(&mut self, rec: CandidateRecord) {
        for (&m, x) in rec.candidates.iter().zip(&rec.features) {
            let slot = self.slot_of(m);
            self.slots[slot].stats.update(x);
        }
        self.buffer.push_back(rec);
        while self.buffer.len() > self.cfg.buffer_cap {
            self.buffer.pop_front();
        }
    }

    /// Serialized model text per slot, for reproducibility audits.
    pub fn export_models(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.scorer.to_text()).collect()
    }

    pub fn scorer(&self, machine: MachineId) -> &Scorer {
        &self.slots[self.slot_of(machine)].scorer
    }

    /// Observes one candidate's features at bid time: feeds the running
    /// normalizer stats and caches the vector for label derivation.
    fn record_bid(&mut self, task: TaskId, machine: MachineId, x: [f64; FEATURE_DIM]) {
        let slot = self.slot_of(machine);
        self.slots[slot].stats.update(&x);
        let pending = self.pending.entry(task).or_insert_with(|| PendingAuction {
            machines: Vec::new(),
            features: Vec::new(),
        });
        pending.machines.push(machine);
        pending.features.push(x);
    }

    /// Turns a completed task into a labeled record and buffers it.
    pub fn finalize(&mut self, record: &CompletionRecord, ctx: &BidContext<'_>) {
        let Some(pending) = self.pending.remove(&record.task) else {
            return;
        };
        debug_assert_eq!(pending.machines, ctx.candidates);
        let pen = self.cfg.miss_penalty;
        let outcomes = pending
            .machines
            .iter()
            .zip(&pending.features)
            .map(|(&m, x)| {
                if m == record.machine {
                    record.delay + if record.missed { pen } else { 0.0 }
                } else {
                    // Slack is feature 2; the loser's estimated delay is the
                    // shortfall its own bid-time estimate predicted.
                    let est = (-x[2]).max(0.0);
                    est + if est > 0.0 { pen } else { 0.0 }
                }
            })
            .collect();
        self.buffer.push_back(CandidateRecord {
            task: record.task,
            candidates: pending.machines,
            features: pending.features,
            outcomes,
            winner: record.machine,
            realized_delay: record.delay,
        });
        while self.buffer.len() > self.cfg.buffer_cap {
            self.buffer.pop_front();
        }
    }

    pub fn maybe_train(&mut self) {
        self.auctions += 1;
        if self.auctions.is_multiple_of(self.cfg.train_every) {
            self.train_round();
        }
    }

    /// One training round over the current buffer. A no-op when there is
    /// nothing to learn from.
    pub fn train_round(&mut self) {
        match self.objective {
            Objective::Ranking => self.train_ranking(),
            Objective::Regression => self.train_regression(),
        }
    }

    fn freeze_normalizers(&mut self) {
        for slot in &mut self.slots {
            slot.scorer.norm = slot.stats.snapshot();
        }
    }

    /// Normalized features per (record, candidate), through each candidate's
    /// own slot normalizer.
    fn normalized_features(&self) -> Vec<Vec<[f64; FEATURE_DIM]>> {
        self.buffer
            .iter()
            .map(|rec| {
                rec.candidates
                    .iter()
                    .zip(&rec.features)
                    .map(|(&m, x)| self.slots[self.slot_of(m)].scorer.norm.apply(x))
                    .collect()
            })
            .collect()
    }

    fn train_ranking(&mut self) {
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (ri, rec) in self.buffer.iter().enumerate() {
            for (a, b) in derive_preferences(rec, self.cfg.tie_eps) {
                pairs.push((ri, a, b));
            }
        }
        if pairs.is_empty() {
            return;
        }
        self.freeze_normalizers();
        let xn = self.normalized_features();
        let slot_of: Vec<Vec<usize>> = self
            .buffer
            .iter()
            .map(|rec| rec.candidates.iter().map(|&m| self.slot_of(m)).collect())
            .collect();

        let lr = self.cfg.learning_rate;
        let beta = self.cfg.recon_weight;
        for _ in 0..self.cfg.epochs {
            self.stream.shuffle(&mut pairs);
            for batch in pairs.chunks(self.cfg.batch_size) {
                let n_pairs = batch.len() as f64;
                let n_vecs = 2.0 * n_pairs;
                let mut grads: Vec<Grads> = self
                    .slots
                    .iter()
                    .map(|s| Grads::zeros_like(&s.scorer.params))
                    .collect();
                for &(ri, a, b) in batch {
                    let (sa, sb) = (slot_of[ri][a], slot_of[ri][b]);
                    let (xa, xb) = (&xn[ri][a], &xn[ri][b]);
                    let f_a = self.slots[sa].scorer.params.score(xa);
                    let f_b = self.slots[sb].scorer.params.score(xb);
                    let coeff = net::sigmoid(f_a - f_b) / n_pairs;
                    net::backprop_score(&self.slots[sa].scorer.params, xa, coeff, &mut grads[sa]);
                    net::backprop_score(&self.slots[sb].scorer.params, xb, -coeff, &mut grads[sb]);
                    net::backprop_recon(
                        &self.slots[sa].scorer.params,
                        xa,
                        beta / n_vecs,
                        &mut grads[sa],
                    );
                    net::backprop_recon(
                        &self.slots[sb].scorer.params,
                        xb,
                        beta / n_vecs,
                        &mut grads[sb],
                    );
                }
                for (slot, g) in self.slots.iter_mut().zip(&grads) {
                    slot.scorer.params.apply_step(g, lr);
                }
            }
        }

        // Post-round diagnostics over the full pair set.
        let mut pw = 0.0;
        let mut correct = 0usize;
        let mut rc = 0.0;
        for &(ri, a, b) in &pairs {
            let f_a = self.slots[slot_of[ri][a]].scorer.params.score(&xn[ri][a]);
            let f_b = self.slots[slot_of[ri][b]].scorer.params.score(&xn[ri][b]);
            pw += pairwise_loss(f_a, f_b);
            if f_a < f_b {
                correct += 1;
            }
            rc += recon_loss(&self.slots[slot_of[ri][a]].scorer.params, &xn[ri][a]);
            rc += recon_loss(&self.slots[slot_of[ri][b]].scorer.params, &xn[ri][b]);
        }
        self.rounds += 1;
        self.curve.push(TrainingPoint {
            round: self.rounds,
            pairwise_loss: pw / pairs.len() as f64,
            pairwise_accuracy: correct as f64 / pairs.len() as f64,
            recon_loss: rc / (2 * pairs.len()) as f64,
        });
    }

    fn train_regression(&mut self) {
        if self.buffer.is_empty() {
            return;
        }
        self.freeze_normalizers();
        let xn = self.normalized_features();
        let mut samples: Vec<(usize, usize)> = Vec::new();
        for (ri, rec) in self.buffer.iter().enumerate() {
            for ci in 0..rec.candidates.len() {
                samples.push((ri, ci));
            }
        }
        let slot_of: Vec<Vec<usize>> = self
            .buffer
            .iter()
            .map(|rec| rec.candidates.iter().map(|&m| self.slot_of(m)).collect())
            .collect();

        let lr = self.cfg.learning_rate;
        let beta = self.cfg.recon_weight;
        for _ in 0..self.cfg.epochs {
            self.stream.shuffle(&mut samples);
            for batch in samples.chunks(self.cfg.batch_size) {
                let n = batch.len() as f64;
                let mut grads: Vec<Grads> = self
                    .slots
                    .iter()
                    .map(|s| Grads::zeros_like(&s.scorer.params))
                    .collect();
                for &(ri, ci) in batch {
                    let slot = slot_of[ri][ci];
                    let x = &xn[ri][ci];
                    let target = self.buffer[ri].outcomes[ci];
                    let f = self.slots[slot].scorer.params.score(x);
                    net::backprop_score(
                        &self.slots[slot].scorer.params,
                        x,
                        2.0 * (f - target) / n,
                        &mut grads[slot],
                    );
                    net::backprop_recon(
                        &self.slots[slot].scorer.params,
                        x,
                        beta / n,
                        &mut grads[slot],
                    );
                }
                for (slot, g) in self.slots.iter_mut().zip(&grads) {
                    slot.scorer.params.apply_step(g, lr);
                }
            }
        }

        // Diagnostics: how the regressor's scores order the derived pairs.
        let mut pw = 0.0;
        let mut correct = 0usize;
        let mut npairs = 0usize;
        let mut rc = 0.0;
        for (ri, rec) in self.buffer.iter().enumerate() {
            for (a, b) in derive_preferences(rec, self.cfg.tie_eps) {
                let f_a = self.slots[slot_of[ri][a]].scorer.params.score(&xn[ri][a]);
                let f_b = self.slots[slot_of[ri][b]].scorer.params.score(&xn[ri][b]);
                pw += pairwise_loss(f_a, f_b);
                if f_a < f_b {
                    correct += 1;
                }
                npairs += 1;
            }
            for (ci, x) in xn[ri].iter().enumerate() {
                rc += recon_loss(&self.slots[slot_of[ri][ci]].scorer.params, x);
            }
        }
        self.rounds += 1;
        self.curve.push(TrainingPoint {
            round: self.rounds,
            pairwise_loss: if npairs > 0 { pw / npairs as f64 } else { 0.0 },
            pairwise_accuracy: if npairs > 0 {
                correct as f64 / npairs as f64
            } else {
                0.0
            },
            recon_loss: rc / samples.len() as f64,
        });
    }
}

/// Ranking-aware bidder: the resource-aware heuristic plus a learned
/// ordering correction. With a freshly initialized model the correction is
/// exactly zero.
pub struct RankingBidder {
    pub core: LearnedCore,
}

impl RankingBidder {
    pub fn new(weights: HeuristicWeights, cfg: TrainConfig, fleet_size: usize, seed: u64) -> Self {
        Self {
            core: LearnedCore::new(Objective::Ranking, weights, cfg, fleet_size, seed),
        }
    }
}

impl Bidder for RankingBidder {
    fn name(&self) -> &'static str {
        "ranking"
    }

    fn bid(
        &mut self,
        now: f64,
        task: &TaskSpec,
        machine: &MachineState,
        contention: usize,
    ) -> f64 {
        let x = features(now, task, machine, contention)
            .expect("engine bids only on compatible machines")
            .as_array();
        self.core.record_bid(task.id, machine.spec.id, x);
        let base = bid_b2(now, task, machine, contention, &self.core.weights)
            .expect("engine bids only on compatible machines");
        base + self.core.weights.psi * self.core.scorer(machine.spec.id).score(&x)
    }

    fn observe(&mut self, record: &CompletionRecord, ctx: &BidContext<'_>) {
        self.core.finalize(record, ctx);
    }

    fn maybe_train(&mut self, _now: f64) {
        self.core.maybe_train();
    }
}

/// Regression bidder: the predicted surrogate outcome is the bid itself.
/// Falls back to the resource-aware heuristic until the first completed
/// training round.
pub struct RegressionBidder {
    pub core: LearnedCore,
}

impl RegressionBidder {
    pub fn new(weights: HeuristicWeights, cfg: TrainConfig, fleet_size: usize, seed: u64) -> Self {
        Self {
            core: LearnedCore::new(Objective::Regression, weights, cfg, fleet_size, seed),
        }
    }
}

impl Bidder for RegressionBidder {
    fn name(&self) -> &'static str {
        "regression"
    }

    fn bid(
        &mut self,
        now: f64,
        task: &TaskSpec,
        machine: &MachineState,
        contention: usize,
    ) -> f64 {
        let x = features(now, task, machine, contention)
            .expect("engine bids only on compatible machines")
            .as_array();
        self.core.record_bid(task.id, machine.spec.id, x);
        if self.core.rounds() == 0 {
            bid_b2(now, task, machine, contention, &self.core.weights)
                .expect("engine bids only on compatible machines")
        } else {
            self.core.scorer(machine.spec.id).score(&x)
        }
    }

    fn observe(&mut self, record: &CompletionRecord, ctx: &BidContext<'_>) {
        self.core.finalize(record, ctx);
    }

    fn maybe_train(&mut self, _now: f64) {
        self.core.maybe_train();
    }
}
