//! The temporal community-search network.
//!
//! Two GCN stacks run over each snapshot: a snapshot encoder fed with node
//! attributes and a query encoder fed with the query indicator. After every
//! layer each encoder refreshes its node states with a GRU whose previous
//! hidden state is an attention summary of that node's recent per-layer
//! states. The final states of both encoders are concatenated and classified
//! per node.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::graph::{QueryVector, Snapshot, TemporalGraph};
use crate::tensor::{SparseRows, Tape, Tensor, Var};

/// How per-layer embeddings are refreshed over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Attention short state + GRU.
    #[default]
    Full,
    /// No temporal update: the layer output is used as is.
    NoGru,
    /// Layer output plus the attention short state.
    SumUpdate,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_gru" => Ok(Self::NoGru),
            "sum_update" => Ok(Self::SumUpdate),
            other => arg(format!(
                "unknown variant {other:?} (expected full, no_gru, sum_update)"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoGru => "no_gru",
            Self::SumUpdate => "sum_update",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node attribute width feeding the snapshot encoder.
    pub input_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub window: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub fnn_hidden: usize,
    /// Attention width; `None` means `hidden`.
    pub attn_dim: Option<usize>,
    /// Add the layer bias once per node instead of once per neighbor.
    pub bias_outside_sum: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            layers: 2,
            hidden: 64,
            window: 3,
            dropout: 0.5,
            variant: Variant::Full,
            fnn_hidden: 64,
            attn_dim: None,
            bias_outside_sum: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.hidden < 1 || self.window < 1 || self.input_dim < 1 {
            return arg("layers, hidden, window and input_dim must all be at least 1");
        }
        if self.fnn_hidden < 1 || self.attn_dim == Some(0) {
            return arg("fnn_hidden and attn_dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return arg(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn attention_dim(&self) -> usize {
        self.attn_dim.unwrap_or(self.hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams<T> {
    pub w_z: T,
    pub w_r: T,
    pub w_h: T,
    pub u_z: T,
    pub u_r: T,
    pub u_h: T,
    pub b_z: T,
    pub b_r: T,
    pub b_h: T,
}

/// One GCN layer of an encoder together with its update module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer<T> {
    /// Self-feature map, `d_in x d_out`.
    pub w_self: T,
    /// Neighbor map, `d_in x d_out`.
    pub w_neigh: T,
    /// `1 x d_out`.
    pub bias: T,
    /// Attention projection, `a x d_out`.
    pub att_q: T,
    /// Attention scoring row, `1 x a`.
    pub att_r: T,
    pub gru: GruParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub w_hidden: T,
    pub b_hidden: T,
    pub w_out: T,
    pub b_out: T,
}

/// Every trainable tensor of the network. `T = Var` mirrors the layout on a
/// tape during a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<T> {
    pub snapshot: Vec<EncoderLayer<T>>,
    pub query: Vec<EncoderLayer<T>>,
    pub head: HeadParams<T>,
}

pub type ModelParams = ParamSet<Tensor>;

impl<T> GruParams<T> {
    fn fields(&self) -> [(&'static str, &T); 9] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruParams<U> {
        GruParams {
            w_z: f(&self.w_z),
            w_r: f(&self.w_r),
            w_h: f(&self.w_h),
            u_z: f(&self.u_z),
            u_r: f(&self.u_r),
            u_h: f(&self.u_h),
            b_z: f(&self.b_z),
            b_r: f(&self.b_r),
            b_h: f(&self.b_h),
        }
    }
}

impl<T> EncoderLayer<T> {
    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.w_self"), &self.w_self));
        out.push((format!("{prefix}.w_neigh"), &self.w_neigh));
        out.push((format!("{prefix}.bias"), &self.bias));
        out.push((format!("{prefix}.att_q"), &self.att_q));
        out.push((format!("{prefix}.att_r"), &self.att_r));
        for (name, t) in self.gru.fields() {
            out.push((format!("{prefix}.gru.{name}"), t));
        }
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.w_self);
        out.push(&mut self.w_neigh);
        out.push(&mut self.bias);
        out.push(&mut self.att_q);
        out.push(&mut self.att_r);
        out.extend(self.gru.fields_mut());
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            w_self: f(&self.w_self),
            w_neigh: f(&self.w_neigh),
            bias: f(&self.bias),
            att_q: f(&self.att_q),
            att_r: f(&self.att_r),
            gru: self.gru.map(f),
        }
    }
}

impl<T> ParamSet<T> {
    /// Tensors in a fixed canonical order with dotted names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (l, layer) in self.snapshot.iter().enumerate() {
            layer.push_named(&format!("snapshot.{l}"), &mut out);
        }
        for (l, layer) in self.query.iter().enumerate() {
            layer.push_named(&format!("query.{l}"), &mut out);
        }
        out.push(("head.w_hidden".into(), &self.head.w_hidden));
        out.push(("head.b_hidden".into(), &self.head.b_hidden));
        out.push(("head.w_out".into(), &self.head.w_out));
        out.push(("head.b_out".into(), &self.head.b_out));
        out
    }

    pub fn entries(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Same order as [`ParamSet::named`].
    pub fn entries_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for layer in &mut self.snapshot {
            layer.push_mut(&mut out);
        }
        for layer in &mut self.query {
            layer.push_mut(&mut out);
        }
        out.push(&mut self.head.w_hidden);
        out.push(&mut self.head.b_hidden);
        out.push(&mut self.head.w_out);
        out.push(&mut self.head.b_out);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamSet<U> {
        ParamSet {
            snapshot: self.snapshot.iter().map(|l| l.map(&mut f)).collect(),
            query: self.query.iter().map(|l| l.map(&mut f)).collect(),
            head: HeadParams {
                w_hidden: f(&self.head.w_hidden),
                b_hidden: f(&self.head.b_hidden),
                w_out: f(&self.head.w_out),
                b_out: f(&self.head.b_out),
            },
        }
    }
}

impl ModelParams {
    /// Weights uniform in `±sqrt(1 / d_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let a = cfg.attention_dim();
        let weight = |rows: usize, cols: usize, fan_in: usize, rng: &mut R| {
            Tensor::uniform(rows, cols, (1.0 / fan_in as f64).sqrt(), rng)
        };
        let layer = |d_in: usize, rng: &mut R| EncoderLayer {
            w_self: weight(d_in, h, d_in, rng),
            w_neigh: weight(d_in, h, d_in, rng),
            bias: Tensor::zeros(1, h),
            att_q: weight(a, h, h, rng),
            att_r: weight(1, a, a, rng),
            gru: GruParams {
                w_z: weight(h, h, h, rng),
                w_r: weight(h, h, h, rng),
                w_h: weight(h, h, h, rng),
                u_z: weight(h, h, h, rng),
                u_r: weight(h, h, h, rng),
                u_h: weight(h, h, h, rng),
                b_z: Tensor::zeros(1, h),
                b_r: Tensor::zeros(1, h),
                b_h: Tensor::zeros(1, h),
            },
        };
        let mut snapshot = Vec::with_capacity(cfg.layers);
        let mut query = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            snapshot.push(layer(if l == 0 { cfg.input_dim } else { h }, rng));
        }
        for l in 0..cfg.layers {
            query.push(layer(if l == 0 { 1 } else { h }, rng));
        }
        let head = HeadParams {
            w_hidden: Tensor::uniform(2 * h, cfg.fnn_hidden, (1.0 / (2 * h) as f64).sqrt(), rng),
            b_hidden: Tensor::zeros(1, cfg.fnn_hidden),
            w_out: Tensor::uniform(cfg.fnn_hidden, 1, (1.0 / cfg.fnn_hidden as f64).sqrt(), rng),
            b_out: Tensor::zeros(1, 1),
        };
        Ok(Self {
            snapshot,
            query,
            head,
        })
    }

    /// All-zero parameters with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let p = Self::init(cfg, &mut rng)?;
        Ok(p.map(|t| Tensor::zeros(t.rows(), t.cols())))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|t| t.data().iter().all(|x| x.is_finite()))
    }

    /// Checks every tensor against the shapes `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg)?;
        let (have, want) = (self.named(), expected.named());
        if have.len() != want.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((name, t), (_, e)) in have.iter().zip(&want) {
            if t.shape() != e.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    e.shape()
                )));
            }
        }
        Ok(())
    }

    /// Registers every tensor as a tape leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> ParamSet<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }
}

/// Time-ordered window of past per-layer states for one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWindows {
    window: usize,
    layers: Vec<VecDeque<(usize, Tensor)>>,
}

impl LayerWindows {
    pub fn new(layers: usize, window: usize) -> Self {
        Self {
            window,
            layers: vec![VecDeque::with_capacity(window); layers],
        }
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of stored timestamps (same for every layer).
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Most recent timestamp stored.
    pub fn latest(&self) -> Option<usize> {
        self.layers.first().and_then(|l| l.back()).map(|(t, _)| *t)
    }

    /// States of layer `l`, oldest first.
    pub fn states(&self, l: usize) -> Vec<&Tensor> {
        self.layers[l].iter().map(|(_, s)| s).collect()
    }

    /// Appends one state per layer for timestamp `t`, evicting the oldest
    /// beyond the window.
    pub fn push(&mut self, t: usize, states: Vec<Tensor>) -> Result<()> {
        if states.len() != self.layers.len() {
            return arg(format!(
                "expected {} layer states, got {}",
                self.layers.len(),
                states.len()
            ));
        }
        if let Some(last) = self.latest() {
            if t <= last {
                return Err(Error::Contract(format!(
                    "history timestamp {t} does not follow {last}"
                )));
            }
        }
        for (buf, s) in self.layers.iter_mut().zip(states) {
            if buf.len() == self.window {
                buf.pop_front();
            }
            buf.push_back((t, s));
        }
        Ok(())
    }

    fn check_before(&self, t: usize) -> Result<()> {
        match self.latest() {
            Some(last) if last >= t => Err(Error::Contract(format!(
                "history holds a state for timestamp {last} while computing timestamp {t}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Histories for one query context: the query-independent snapshot encoder
/// windows and the query encoder windows.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistory {
    pub snapshot: LayerWindows,
    pub query: LayerWindows,
}

impl StateHistory {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            snapshot: LayerWindows::new(cfg.layers, cfg.window),
            query: LayerWindows::new(cfg.layers, cfg.window),
        }
    }
}

/// `1 / sqrt(p_u p_v)` neighbor weights of a snapshot.
pub fn normalized_adjacency(adjacency: &[Vec<usize>]) -> SparseRows {
    let p: Vec<f64> = adjacency.iter().map(|nb| (nb.len() + 1) as f64).collect();
    SparseRows {
        rows: adjacency
            .iter()
            .enumerate()
            .map(|(u, nb)| nb.iter().map(|&v| (v, 1.0 / (p[u] * p[v]).sqrt())).collect())
            .collect(),
    }
}

/// Per-snapshot constants shared by every layer.
pub struct SnapshotContext {
    pub(crate) norm_adj: Arc<SparseRows>,
    /// `|V| x 1` count of bias terms each node receives.
    pub(crate) bias_counts: Tensor,
    pub(crate) attrs: Tensor,
    pub(crate) num_nodes: usize,
}

impl SnapshotContext {
    pub fn new(snap: &Snapshot, cfg: &ModelConfig) -> Self {
        let adjacency = snap.adjacency();
        let counts = adjacency
            .iter()
            .map(|nb| if cfg.bias_outside_sum { 1.0 } else { nb.len() as f64 })
            .collect();
        Self {
            norm_adj: Arc::new(normalized_adjacency(adjacency)),
            bias_counts: Tensor::from_vec(adjacency.len(), 1, counts),
            attrs: snap.attrs().clone(),
            num_nodes: adjacency.len(),
        }
    }
}

/// Whether a forward pass is in training mode, plus its dropout source.
pub struct Mode<'r> {
    pub training: bool,
    pub rng: Option<&'r mut dyn rand::RngCore>,
}

impl Mode<'_> {
    pub fn eval() -> Mode<'static> {
        Mode {
            training: false,
            rng: None,
        }
    }
}

impl<'r> Mode<'r> {
    pub fn train(rng: &'r mut dyn rand::RngCore) -> Self {
        Mode {
            training: true,
            rng: Some(rng),
        }
    }

    fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        match (&mut self.rng, self.training) {
            (Some(rng), true) => tape.dropout(x, rate, true, rng),
            (None, true) if rate > 0.0 => arg("training mode requires a dropout generator"),
            _ => Ok(x),
        }
    }
}

/// `Dropout(relu(H W_s + sum_v [H_v / sqrt(p_u p_v) W + b]))`.
pub fn snapshot_layer(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    input: Var,
    layer: &EncoderLayer<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let pre = gcn_preactivation(tape, ctx, input, layer)?;
    let act = tape.relu(pre);
    mode.dropout(tape, act, cfg.dropout)
}

fn gcn_preactivation(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    input: Var,
    layer: &EncoderLayer<Var>,
) -> Result<Var> {
    let rows = tape.value(input).rows();
    if rows != ctx.num_nodes {
        return Err(Error::Shape {
            op: "snapshot_layer",
            left: tape.value(input).shape().to_vec(),
            right: vec![ctx.num_nodes],
        });
    }
    let self_term = tape.matmul(input, layer.w_self)?;
    let agg = tape.sparse(input, ctx.norm_adj.clone())?;
    let neigh = tape.matmul(agg, layer.w_neigh)?;
    let counts = tape.leaf(ctx.bias_counts.clone());
    let bias = tape.matmul(counts, layer.bias)?;
    let sum = tape.add(self_term, neigh)?;
    tape.add(sum, bias)
}

/// Query-encoder layer: the snapshot layer applied to `input + fused`, where
/// `fused` is the same-depth snapshot-encoder state (absent at depth 0).
pub fn query_layer(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    input: Var,
    fused: Option<Var>,
    layer: &EncoderLayer<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let x = match fused {
        Some(s) => tape.add(input, s)?,
        None => input,
    };
    snapshot_layer(tape, ctx, x, layer, cfg, mode)
}

/// Attention summary of a window: `softmax(r tanh(Q C^T)) C` per node.
///
/// `window` holds `w_eff >= 1` constant `|V| x d` states. Returns the
/// `|V| x d` short state and the `|V| x w_eff` attention weights.
pub fn attention_short_state(
    tape: &mut Tape,
    window: &[&Tensor],
    att_q: Var,
    att_r: Var,
) -> Result<(Var, Var)> {
    if window.is_empty() {
        return arg("attention over an empty window");
    }
    let q_t = tape.transpose(att_q);
    let r_t = tape.transpose(att_r);
    let mut states = Vec::with_capacity(window.len());
    let mut scores = Vec::with_capacity(window.len());
    for s in window {
        let c = tape.leaf((*s).clone());
        let proj = tape.matmul(c, q_t)?;
        let act = tape.tanh(proj);
        scores.push(tape.matmul(act, r_t)?);
        states.push(c);
    }
    let scores = tape.concat_cols(&scores)?;
    let weights = tape.softmax_rows(scores)?;
    let mut short: Option<Var> = None;
    for (j, &c) in states.iter().enumerate() {
        let e = tape.column(weights, j)?;
        let term = tape.mul_col(c, e)?;
        short = Some(match short {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok((short.expect("non-empty window"), weights))
}

/// GRU cell with input `h` and previous hidden state `short` (zeros when
/// there is no history).
pub fn gru_update(
    tape: &mut Tape,
    h: Var,
    short: Option<Var>,
    gru: &GruParams<Var>,
    variant: Variant,
) -> Result<Var> {
    match variant {
        Variant::NoGru => return Ok(h),
        Variant::SumUpdate => {
            return match short {
                Some(s) => tape.add(h, s),
                None => Ok(h),
            }
        }
        Variant::Full => {}
    }
    let s = match short {
        Some(s) => {
            if tape.value(s).shape() != tape.value(h).shape() {
                return Err(Error::Shape {
                    op: "gru_update",
                    left: tape.value(h).shape().to_vec(),
                    right: tape.value(s).shape().to_vec(),
                });
            }
            s
        }
        None => {
            let v = tape.value(h);
            let z = Tensor::zeros(v.rows(), v.cols());
            tape.leaf(z)
        }
    };
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, state: Var| -> Result<Var> {
        let xi = tape.matmul(h, w)?;
        let hs = tape.matmul(state, u)?;
        let sum = tape.add(xi, hs)?;
        tape.add_row(sum, b)
    };
    let z_pre = gate(tape, gru.w_z, gru.u_z, gru.b_z, s)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, gru.w_r, gru.u_r, gru.b_r, s)?;
    let r = tape.sigmoid(r_pre);
    let rs = tape.mul(r, s)?;
    let c_pre = gate(tape, gru.w_h, gru.u_h, gru.b_h, rs)?;
    let cand = tape.tanh(c_pre);
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, s)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// `sigmoid(relu([a || b] W1 + b1) W2 + b2)` per row, as `|V| x 1`.
pub fn classify(tape: &mut Tape, z_snapshot: Var, z_query: Var, head: &HeadParams<Var>) -> Result<Var> {
    let cat = tape.concat_cols(&[z_snapshot, z_query])?;
    let hid = tape.matmul(cat, head.w_hidden)?;
    let hid = tape.add_row(hid, head.b_hidden)?;
    let hid = tape.relu(hid);
    let out = tape.matmul(hid, head.w_out)?;
    let out = tape.add_row(out, head.b_out)?;
    Ok(tape.sigmoid(out))
}

/// Output of one encoder stack at one timestamp.
pub struct EncoderPass {
    /// Updated states per layer (input of the next layer).
    pub updated: Vec<Var>,
    /// Raw layer outputs per layer (what enters the history window).
    pub raw: Vec<Var>,
}

fn update_state(
    tape: &mut Tape,
    h: Var,
    windows: &LayerWindows,
    l: usize,
    layer: &EncoderLayer<Var>,
    variant: Variant,
) -> Result<Var> {
    let short = if windows.is_empty() || variant == Variant::NoGru {
        None
    } else {
        let states = windows.states(l);
        Some(attention_short_state(tape, &states, layer.att_q, layer.att_r)?.0)
    };
    gru_update(tape, h, short, &layer.gru, variant)
}

/// Snapshot encoder over one timestamp.
pub fn snapshot_pass(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    params: &ParamSet<Var>,
    windows: &LayerWindows,
    t: usize,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<EncoderPass> {
    windows.check_before(t)?;
    let mut x = tape.leaf(ctx.attrs.clone());
    let mut pass = EncoderPass {
        updated: Vec::with_capacity(cfg.layers),
        raw: Vec::with_capacity(cfg.layers),
    };
    for (l, layer) in params.snapshot.iter().enumerate() {
        let h = snapshot_layer(tape, ctx, x, layer, cfg, mode)?;
        let z = update_state(tape, h, windows, l, layer, cfg.variant)?;
        pass.raw.push(h);
        pass.updated.push(z);
        x = z;
    }
    Ok(pass)
}

/// Query encoder over one timestamp, fused layer by layer with `snap`.
#[allow(clippy::too_many_arguments)]
pub fn query_pass(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    params: &ParamSet<Var>,
    query: &QueryVector,
    snap: &EncoderPass,
    windows: &LayerWindows,
    t: usize,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<EncoderPass> {
    windows.check_before(t)?;
    if query.len() != ctx.num_nodes {
        return arg(format!(
            "query vector has length {} but snapshot has {} nodes",
            query.len(),
            ctx.num_nodes
        ));
    }
    let mut x = tape.leaf(Tensor::from_vec(ctx.num_nodes, 1, query.onehot().to_vec()));
    let mut pass = EncoderPass {
        updated: Vec::with_capacity(cfg.layers),
        raw: Vec::with_capacity(cfg.layers),
    };
    for (l, layer) in params.query.iter().enumerate() {
        let fused = if l == 0 { None } else { Some(snap.updated[l - 1]) };
        let h = query_layer(tape, ctx, x, fused, layer, cfg, mode)?;
        let z = update_state(tape, h, windows, l, layer, cfg.variant)?;
        pass.raw.push(h);
        pass.updated.push(z);
        x = z;
    }
    Ok(pass)
}

/// Everything a forward pass produces on the tape.
pub struct ForwardPass {
    /// `|V| x 1` membership probabilities.
    pub psi: Var,
    pub snapshot: EncoderPass,
    pub query: EncoderPass,
}

impl ForwardPass {
    pub fn snapshot_states(&self, tape: &Tape) -> Vec<Tensor> {
        self.snapshot.raw.iter().map(|&v| tape.value(v).clone()).collect()
    }

    pub fn query_states(&self, tape: &Tape) -> Vec<Tensor> {
        self.query.raw.iter().map(|&v| tape.value(v).clone()).collect()
    }

    pub fn psi_vec(&self, tape: &Tape) -> Vec<f64> {
        tape.value(self.psi).data().to_vec()
    }
}

/// Full forward pass at timestamp index `t`.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    tape: &mut Tape,
    snap: &Snapshot,
    t: usize,
    query: &QueryVector,
    history: &StateHistory,
    params: &ParamSet<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<ForwardPass> {
    let ctx = SnapshotContext::new(snap, cfg);
    forward_ctx(tape, &ctx, t, query, history, params, cfg, mode)
}

#[allow(clippy::too_many_arguments)]
pub fn forward_ctx(
    tape: &mut Tape,
    ctx: &SnapshotContext,
    t: usize,
    query: &QueryVector,
    history: &StateHistory,
    params: &ParamSet<Var>,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<ForwardPass> {
    let snapshot = snapshot_pass(tape, ctx, params, &history.snapshot, t, cfg, mode)?;
    let query_enc = query_pass(tape, ctx, params, query, &snapshot, &history.query, t, cfg, mode)?;
    let psi = classify(
        tape,
        *snapshot.updated.last().expect("at least one layer"),
        *query_enc.updated.last().expect("at least one layer"),
        &params.head,
    )?;
    Ok(ForwardPass {
        psi,
        snapshot,
        query: query_enc,
    })
}

/// Trained network: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Inference result at one timestamp together with the raw states to commit.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub psi: Vec<f64>,
    pub snapshot_states: Vec<Tensor>,
    pub query_states: Vec<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Inference (dropout off) at snapshot index `t` with the given history.
    pub fn predict(
        &self,
        snap: &Snapshot,
        t: usize,
        query: &QueryVector,
        history: &StateHistory,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let pass = forward(
            &mut tape,
            snap,
            t,
            query,
            history,
            &vars,
            &self.config,
            &mut Mode::eval(),
        )?;
        Ok(Prediction {
            psi: pass.psi_vec(&tape),
            snapshot_states: pass.snapshot_states(&tape),
            query_states: pass.query_states(&tape),
        })
    }

    /// Replays snapshots `0..=t` in order for one query, committing states
    /// into a fresh history, and returns the prediction at `t`.
    pub fn infer(&self, graph: &TemporalGraph, t: usize, query: &QueryVector) -> Result<Vec<f64>> {
        graph.snapshot(t)?;
        let mut history = StateHistory::new(&self.config);
        for ti in 0..t {
            let p = self.predict(graph.snapshot(ti)?, ti, query, &history)?;
            history.snapshot.push(ti, p.snapshot_states)?;
            history.query.push(ti, p.query_states)?;
        }
        Ok(self.predict(graph.snapshot(t)?, t, query, &history)?.psi)
    }

    /// Inference at the last snapshot.
    pub fn infer_latest(&self, graph: &TemporalGraph, query: &QueryVector) -> Result<Vec<f64>> {
        self.infer(graph, graph.num_snapshots() - 1, query)
    }
}
