//! Per-query sequential training across snapshots.
//!
//! At each timestamp every training query is fed once, in a seeded shuffled
//! order, and each one triggers its own optimizer step. Once all queries at a
//! timestamp are done, a dropout-free pass with the final parameters commits
//! the per-layer states into the history windows used by later timestamps.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{arg, Error, Result};
use crate::eval::evaluate;
use crate::graph::{encode_query, QueryVector, TemporalGraph};
use crate::model::{
    forward_ctx, snapshot_pass, LayerWindows, Mode, Model, ModelParams, SnapshotContext,
    StateHistory,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::search::{temporal_candidate, CandidateScope};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Threshold used for validation F1.
    pub eta: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    pub candidate: CandidateScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            seed: 0,
            eta: 0.5,
            patience: 10,
            optimizer: OptimizerKind::Adam,
            candidate: CandidateScope::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.patience < 1 {
            return arg("epochs and patience must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return arg(format!("threshold {} outside [0, 1]", self.eta));
        }
        Ok(())
    }
}

/// A query with the ground-truth community it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySample {
    pub query: QueryVector,
    /// Index of the source community.
    pub community: usize,
    /// Final ground-truth members, sorted.
    pub members: Vec<usize>,
    /// Members at specific zero-based snapshots, when they evolve.
    pub members_by_snapshot: BTreeMap<usize, Vec<usize>>,
}

impl QuerySample {
    pub fn new(query: QueryVector, community: usize, members: Vec<usize>) -> Result<Self> {
        let mut members = members;
        members.sort_unstable();
        members.dedup();
        if let Some(&q) = query.nodes().iter().find(|q| members.binary_search(q).is_err()) {
            return arg(format!("query node {q} is not a member of its community"));
        }
        if members.last().is_some_and(|&m| m >= query.len()) {
            return arg("community member out of range");
        }
        Ok(Self {
            query,
            community,
            members,
            members_by_snapshot: BTreeMap::new(),
        })
    }

    pub fn members_at(&self, t: usize) -> &[usize] {
        self.members_by_snapshot.get(&t).unwrap_or(&self.members)
    }

    /// Binary label vector at snapshot `t`.
    pub fn labels_at(&self, t: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.query.len()];
        for &u in self.members_at(t) {
            y[u] = 1.0;
        }
        y
    }

    pub fn labels(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.query.len()];
        for &u in &self.members {
            y[u] = 1.0;
        }
        y
    }
}

/// Training queries bound to the graph (or candidate subgraph) they run on.
pub struct TrainingSet<'g> {
    graphs: Vec<Cow<'g, TemporalGraph>>,
    /// `contexts[graph][t]`.
    contexts: Vec<Vec<SnapshotContext>>,
    items: Vec<TrainItem>,
}

struct TrainItem {
    graph: usize,
    query: QueryVector,
    /// Labels per snapshot in the item's graph index space.
    labels: Vec<Vec<f64>>,
}

impl<'g> TrainingSet<'g> {
    pub fn new(
        graph: &'g TemporalGraph,
        samples: &[QuerySample],
        model: &Model,
        scope: CandidateScope,
    ) -> Result<Self> {
        let t_count = graph.num_snapshots();
        let mut graphs: Vec<Cow<'g, TemporalGraph>> = Vec::new();
        let mut items = Vec::with_capacity(samples.len());
        if scope.applies(graph) {
            for s in samples {
                let nodes = temporal_candidate(graph, t_count - 1, &s.query, scope.hops)?;
                let local = |u: usize| nodes.binary_search(&u).ok();
                let q: Vec<usize> = s.query.nodes().iter().filter_map(|&u| local(u)).collect();
                let labels = (0..t_count)
                    .map(|t| {
                        let mut y = vec![0.0; nodes.len()];
                        for &u in s.members_at(t) {
                            if let Some(i) = local(u) {
                                y[i] = 1.0;
                            }
                        }
                        y
                    })
                    .collect();
                items.push(TrainItem {
                    graph: graphs.len(),
                    query: encode_query(&q, nodes.len())?,
                    labels,
                });
                graphs.push(Cow::Owned(graph.induced(&nodes)?));
            }
        } else {
            graphs.push(Cow::Borrowed(graph));
            for s in samples {
                if s.query.len() != graph.num_nodes() {
                    return arg("query sample does not match the graph size");
                }
                items.push(TrainItem {
                    graph: 0,
                    query: s.query.clone(),
                    labels: (0..t_count).map(|t| s.labels_at(t)).collect(),
                });
            }
        }
        let contexts = graphs
            .iter()
            .map(|g| {
                g.snapshots()
                    .iter()
                    .map(|s| SnapshotContext::new(s, &model.config))
                    .collect()
            })
            .collect();
        Ok(Self {
            graphs,
            contexts,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_snapshots(&self) -> usize {
        self.contexts.first().map_or(0, Vec::len)
    }

    pub fn fresh_history(&self, model: &Model) -> TrainingHistory {
        let w = |_| LayerWindows::new(model.config.layers, model.config.window);
        TrainingHistory {
            snapshot: (0..self.graphs.len()).map(w).collect(),
            query: (0..self.items.len()).map(w).collect(),
        }
    }
}

/// Histories for a training run: one snapshot-encoder window set per graph
/// and one query-encoder window set per training query.
#[derive(Debug, Clone)]
pub struct TrainingHistory {
    snapshot: Vec<LayerWindows>,
    query: Vec<LayerWindows>,
}

impl TrainingHistory {
    fn for_item(&self, graph: usize, item: usize) -> StateHistory {
        StateHistory {
            snapshot: self.snapshot[graph].clone(),
            query: self.query[item].clone(),
        }
    }

    pub fn snapshot_windows(&self, graph: usize) -> &LayerWindows {
        &self.snapshot[graph]
    }

    pub fn query_windows(&self, item: usize) -> &LayerWindows {
        &self.query[item]
    }
}

/// Losses of one sweep over the training queries at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotReport {
    /// Loss of each query in processing order, as `(query index, loss)`.
    pub losses: Vec<(usize, f64)>,
}

impl SnapshotReport {
    /// Sum of per-query losses.
    pub fn total_loss(&self) -> f64 {
        self.losses.iter().map(|(_, l)| l).sum()
    }

    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.total_loss() / self.losses.len() as f64
        }
    }
}

/// One line of the metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    /// One-based snapshot label.
    pub snapshot: usize,
    pub mean_loss: f64,
    pub val_f1: Option<f64>,
}

/// Owns the parameters, optimizer state and generator of one training run.
pub struct Trainer {
    pub model: Model,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
            return arg(format!("learning rate {} must be non-negative", cfg.lr));
        }
        let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model.params)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            optimizer,
            rng,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Loss and gradients of one query at snapshot `t`, dropout on.
    fn query_step(
        &mut self,
        set: &TrainingSet<'_>,
        t: usize,
        item: usize,
        history: &TrainingHistory,
    ) -> Result<(f64, ModelParams)> {
        let it = &set.items[item];
        let hist = history.for_item(it.graph, item);
        let mut tape = Tape::new();
        let vars = self.model.params.to_tape(&mut tape);
        let pass = forward_ctx(
            &mut tape,
            &set.contexts[it.graph][t],
            t,
            &it.query,
            &hist,
            &vars,
            &self.model.config,
            &mut Mode::train(&mut self.rng),
        )?;
        let loss = tape.bce(pass.psi, &it.labels[t], None)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, vars.map(|&v| grads.take(v))))
    }

    /// Trains on every query at snapshot `t`, then commits states for `t`.
    pub fn train_snapshot(
        &mut self,
        set: &TrainingSet<'_>,
        t: usize,
        history: &mut TrainingHistory,
    ) -> Result<SnapshotReport> {
        if t >= set.num_snapshots() {
            return arg(format!("snapshot index {t} out of range"));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::with_capacity(order.len());
        for i in order {
            let (loss, grads) = self.query_step(set, t, i, history)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at snapshot {} for query {i} (lr {})",
                    t + 1,
                    self.optimizer.lr()
                )));
            }
            self.optimizer.step(&mut self.model.params, &grads);
            losses.push((i, loss));
        }
        self.commit(set, t, history)?;
        Ok(SnapshotReport { losses })
    }

    fn commit(&self, set: &TrainingSet<'_>, t: usize, history: &mut TrainingHistory) -> Result<()> {
        let cfg = &self.model.config;
        let mut snapshot_states = Vec::with_capacity(set.graphs.len());
        for (g, contexts) in set.contexts.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = self.model.params.to_tape(&mut tape);
            let pass = snapshot_pass(
                &mut tape,
                &contexts[t],
                &vars,
                &history.snapshot[g],
                t,
                cfg,
                &mut Mode::eval(),
            )?;
            snapshot_states.push(pass.raw.iter().map(|&v| tape.value(v).clone()).collect());
        }
        let mut query_states = Vec::with_capacity(set.items.len());
        for (i, it) in set.items.iter().enumerate() {
            let hist = history.for_item(it.graph, i);
            let mut tape = Tape::new();
            let vars = self.model.params.to_tape(&mut tape);
            let pass = forward_ctx(
                &mut tape,
                &set.contexts[it.graph][t],
                t,
                &it.query,
                &hist,
                &vars,
                cfg,
                &mut Mode::eval(),
            )?;
            query_states.push(pass.query_states(&tape));
        }
        for (w, s) in history.snapshot.iter_mut().zip(snapshot_states) {
            w.push(t, s)?;
        }
        for (w, s) in history.query.iter_mut().zip(query_states) {
            w.push(t, s)?;
        }
        Ok(())
    }
}

/// Result of [`train_temporal`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation F1.
    pub best: Model,
    pub best_val_f1: f64,
    /// One-based epoch of `best`.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub trace: Vec<TraceRecord>,
}

/// Full training loop with early stopping on validation F1 at the last
/// snapshot. History is reset at the start of every epoch.
pub fn train_temporal(
    model: Model,
    graph: &TemporalGraph,
    train: &[QuerySample],
    val: &[QuerySample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return arg("training and validation sets must be non-empty");
    }
    if model.config.input_dim != graph.attr_dim() {
        return arg(format!(
            "model expects {} input features but the graph has {}",
            model.config.input_dim,
            graph.attr_dim()
        ));
    }
    let set = TrainingSet::new(graph, train, &model, cfg.candidate)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut trace = Vec::new();
    let mut best: Option<(Model, f64, usize)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut history = set.fresh_history(&trainer.model);
        for t in 0..set.num_snapshots() {
            let report = trainer.train_snapshot(&set, t, &mut history)?;
            trace.push(TraceRecord {
                epoch,
                snapshot: t + 1,
                mean_loss: report.mean_loss(),
                val_f1: None,
            });
        }
        let f1 = evaluate(&trainer.model, graph, val, cfg.eta, cfg.candidate)?.mean_f1;
        if let Some(last) = trace.last_mut() {
            last.val_f1 = Some(f1);
        }
        debug!(epoch, val_f1 = f1, "epoch done");
        match &best {
            Some((_, b, _)) if f1 <= *b => stale += 1,
            _ => {
                best = Some((trainer.model.clone(), f1, epoch));
                stale = 0;
            }
        }
        if stale >= cfg.patience {
            break;
        }
    }
    let (best, best_val_f1, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_val_f1,
        best_epoch,
        epochs_run,
        trace,
    })
}

/// Writes the trace as one JSON object per line.
pub fn write_trace<W: std::io::Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        writeln!(out)?;
    }
    Ok(())
}
