//! Interactive sessions: a user refines one query's community with node
//! labels, and the session's adapted parameters are folded back into the
//! shared meta model when the session ends.
//!
//! Sessions answer queries on the latest snapshot. Their history windows are
//! indexed by interaction number instead of by timestamp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::graph::{encode_query, QueryVector, TemporalGraph};
use crate::model::{forward_ctx, Mode, Model, ModelParams, SnapshotContext, StateHistory};
use crate::optim::{Optimizer, OptimizerKind};
use crate::search::{community_from_psi, CommunityResult};
use crate::tensor::Tape;

/// Shared parameters that sessions start from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub model: Model,
    /// Number of finalized sessions folded in so far.
    pub updates: usize,
}

impl MetaModel {
    pub fn new(model: Model) -> Self {
        Self { model, updates: 0 }
    }
}

/// `meta ← (1 − α)·meta + α·session`. Returns the L2 norm of the change.
pub fn reptile_update(meta: &mut ModelParams, session: &ModelParams, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return arg(format!("meta step {alpha} outside [0, 1]"));
    }
    let mut norm_sq = 0.0;
    for (m, s) in meta.entries_mut().into_iter().zip(session.entries()) {
        if m.shape() != s.shape() {
            return Err(Error::Shape {
                op: "reptile",
                left: m.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        for (x, &y) in m.data_mut().iter_mut().zip(s.data()) {
            let new = if alpha == 0.0 {
                *x
            } else if alpha == 1.0 {
                y
            } else {
                (1.0 - alpha) * *x + alpha * y
            };
            norm_sq += (new - *x) * (new - *x);
            *x = new;
        }
    }
    Ok(norm_sq.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Gradient steps per feedback round.
    pub epochs: usize,
    pub lr: f64,
    /// Meta step applied at finalize.
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.01,
            alpha: 0.5,
            eta: 0.5,
            seed: 0,
        }
    }
}

/// One entry of the session's feedback log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub interaction: usize,
    pub labels: Vec<(usize, f64)>,
    pub losses: Vec<f64>,
}

pub struct Session {
    cfg: SessionConfig,
    working: Model,
    ctx: SnapshotContext,
    history: StateHistory,
    interactions: usize,
    last: Option<(usize, QueryVector)>,
    /// The last interaction received feedback and its states are not yet in
    /// the history.
    pending: bool,
    log: Vec<FeedbackRecord>,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    closed: bool,
}

impl Session {
    pub fn new(meta: &MetaModel, graph: &TemporalGraph, cfg: SessionConfig) -> Result<Self> {
        if cfg.epochs < 1 {
            return arg("feedback epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&cfg.alpha) || !(0.0..=1.0).contains(&cfg.eta) {
            return arg("alpha and eta must lie in [0, 1]");
        }
        if meta.model.config.input_dim != graph.attr_dim() {
            return arg("model input size does not match the graph features");
        }
        let working = meta.model.clone();
        let optimizer = Optimizer::new(OptimizerKind::Adam, cfg.lr, &working.params)?;
        Ok(Self {
            ctx: SnapshotContext::new(graph.last_snapshot(), &working.config),
            history: StateHistory::new(&working.config),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            working,
            interactions: 0,
            last: None,
            pending: false,
            log: Vec::new(),
            optimizer,
            closed: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.working
    }

    pub fn interactions(&self) -> usize {
        self.interactions
    }

    pub fn feedback_log(&self) -> &[FeedbackRecord] {
        &self.log
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            return Err(Error::State("session is already finalized".into()));
        }
        Ok(())
    }

    /// Answers a query with the session's current parameters and history.
    /// Returns the community and the interaction index it was assigned.
    pub fn query(
        &mut self,
        graph: &TemporalGraph,
        nodes: &[usize],
        eta: Option<f64>,
    ) -> Result<(CommunityResult, usize)> {
        self.ensure_open()?;
        let q = encode_query(nodes, self.ctx.num_nodes)?;
        self.flush()?;
        let index = self.interactions;
        let mut tape = Tape::new();
        let vars = self.working.params.to_tape(&mut tape);
        let pass = forward_ctx(
            &mut tape,
            &self.ctx,
            index,
            &q,
            &self.history,
            &vars,
            &self.working.config,
            &mut Mode::eval(),
        )?;
        let psi = pass.psi_vec(&tape);
        let result = community_from_psi(
            graph,
            graph.num_snapshots() - 1,
            &q,
            psi,
            eta.unwrap_or(self.cfg.eta),
        )?;
        self.interactions += 1;
        self.last = Some((index, q));
        Ok((result, index))
    }

    /// Adapts the session parameters to labels on the last query's nodes.
    /// Query nodes count as positives. Returns the loss of every step.
    pub fn feedback(&mut self, labels: &[(usize, f64)], epochs: Option<usize>) -> Result<Vec<f64>> {
        self.ensure_open()?;
        let (index, q) = self
            .last
            .clone()
            .ok_or_else(|| Error::State("feedback requires a prior query".into()))?;
        if labels.is_empty() {
            return arg("feedback needs at least one label");
        }
        let n = self.ctx.num_nodes;
        let mut y = vec![0.0; n];
        let mut w = vec![0.0; n];
        for &(u, l) in labels {
            if u >= n {
                return arg(format!("node index {u} out of range"));
            }
            if l != 0.0 && l != 1.0 {
                return arg(format!("label {l} for node {u} is not 0 or 1"));
            }
            if q.contains(u) && l == 0.0 {
                return arg(format!("query node {u} cannot be labeled negative"));
            }
            y[u] = l;
            w[u] = 1.0;
        }
        for &u in q.nodes() {
            y[u] = 1.0;
            w[u] = 1.0;
        }
        let epochs = epochs.unwrap_or(self.cfg.epochs);
        let cfg = self.working.config.clone();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut tape = Tape::new();
            let vars = self.working.params.to_tape(&mut tape);
            let pass = forward_ctx(
                &mut tape,
                &self.ctx,
                index,
                &q,
                &self.history,
                &vars,
                &cfg,
                &mut Mode::train(&mut self.rng),
            )?;
            let loss = tape.bce(pass.psi, &y, Some(&w))?;
            let value = tape.value(loss).data()[0];
            let mut grads = tape.backward(loss)?;
            let grads = vars.map(|&v| grads.take(v));
            if !value.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite feedback loss {value} (lr {})",
                    self.optimizer.lr()
                )));
            }
            self.optimizer.step(&mut self.working.params, &grads);
            losses.push(value);
        }
        self.pending = true;
        self.log.push(FeedbackRecord {
            interaction: index,
            labels: labels.to_vec(),
            losses: losses.clone(),
        });
        Ok(losses)
    }

    /// Commits the states of the last interaction, computed with the current
    /// parameters, once it has received feedback.
    fn flush(&mut self) -> Result<()> {
        if !self.pending {
            return Ok(());
        }
        let (index, q) = self.last.clone().expect("pending implies a query");
        let mut tape = Tape::new();
        let vars = self.working.params.to_tape(&mut tape);
        let pass = forward_ctx(
            &mut tape,
            &self.ctx,
            index,
            &q,
            &self.history,
            &vars,
            &self.working.config,
            &mut Mode::eval(),
        )?;
        self.history.snapshot.push(index, pass.snapshot_states(&tape))?;
        self.history.query.push(index, pass.query_states(&tape))?;
        self.pending = false;
        Ok(())
    }

    /// Folds the session into `meta` and closes the session. Returns the norm
    /// of the change to the meta parameters.
    pub fn finalize(&mut self, meta: &mut MetaModel) -> Result<f64> {
        self.ensure_open()?;
        if meta.model.config != self.working.config {
            return Err(Error::State("meta model configuration changed".into()));
        }
        let norm = reptile_update(&mut meta.model.params, &self.working.params, self.cfg.alpha)?;
        meta.updates += 1;
        self.closed = true;
        Ok(norm)
    }
}
