//! Temporal graph data model and ingestion.
//!
//! A [`TemporalGraph`] is a global node-id space shared by an ordered list of
//! undirected [`Snapshot`]s. Every node exists in every snapshot; a node that
//! has no edges at time `t` is simply isolated there.
//!
//! Snapshot indices in the library API are zero-based (`0..T`). Each
//! [`Snapshot`] also carries its one-based timestamp label `t`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{arg, Error, Result};
use crate::tensor::Tensor;

/// One timestamped interaction as read from the edge file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub timestamp: f64,
}

/// Graph state at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// One-based timestamp label.
    pub t: usize,
    adjacency: Vec<Vec<usize>>,
    attrs: Tensor,
}

impl Snapshot {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// `|V| x f` attribute matrix.
    pub fn attrs(&self) -> &Tensor {
        &self.attrs
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `|N(u)| + 1`.
    pub fn degree_plus_one(&self, u: usize) -> usize {
        self.adjacency[u].len() + 1
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&v| u < v).map(|&v| (u, v)));
        }
        out
    }
}

/// How timestamp buckets become snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SnapshotMode {
    /// Snapshot `t` holds only the edges of bucket `t`.
    #[default]
    Disjoint,
    /// Snapshot `t` holds the union of buckets `1..=t`.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    snapshots: Vec<Snapshot>,
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    attr_dim: usize,
    edge_records: Vec<EdgeRecord>,
    node_timestamps: Vec<f64>,
}

/// Per-node feature source used when building snapshots.
#[derive(Debug, Clone)]
pub enum NodeFeatures {
    /// One column: `|N(u)| / max degree` at each snapshot.
    NormalizedDegree,
    /// Static `|V| x f` matrix shared by every snapshot.
    Static(Tensor),
}

impl TemporalGraph {
    /// Builds a graph from per-snapshot edge lists over a fixed node-id space.
    ///
    /// Self-loops are dropped and duplicate edges are merged.
    pub fn from_snapshot_edges(
        node_ids: Vec<String>,
        snapshot_edges: &[Vec<(usize, usize)>],
        features: NodeFeatures,
    ) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if snapshot_edges.is_empty() {
            return arg("at least one snapshot is required");
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return arg(format!("duplicate node id {id:?}"));
            }
        }
        if let NodeFeatures::Static(x) = &features {
            if x.rows() != n {
                return Err(Error::Shape {
                    op: "node features",
                    left: x.shape().to_vec(),
                    right: vec![n],
                });
            }
        }

        let mut snapshots = Vec::with_capacity(snapshot_edges.len());
        for (ti, edges) in snapshot_edges.iter().enumerate() {
            let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
            for &(u, v) in edges {
                if u >= n || v >= n {
                    return arg(format!("edge ({u}, {v}) out of range for {n} nodes"));
                }
                if u == v {
                    continue;
                }
                sets[u].insert(v);
                sets[v].insert(u);
            }
            let adjacency: Vec<Vec<usize>> =
                sets.into_iter().map(|s| s.into_iter().collect()).collect();
            let attrs = match &features {
                NodeFeatures::NormalizedDegree => degree_features(&adjacency),
                NodeFeatures::Static(x) => x.clone(),
            };
            snapshots.push(Snapshot {
                t: ti + 1,
                adjacency,
                attrs,
            });
        }
        let attr_dim = snapshots[0].attrs.cols();
        Ok(Self {
            snapshots,
            node_ids,
            index,
            attr_dim,
            edge_records: Vec::new(),
            node_timestamps: vec![0.0; n],
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> Result<&Snapshot> {
        self.snapshots.get(t).ok_or_else(|| {
            Error::Argument(format!(
                "snapshot index {t} out of range (graph has {})",
                self.snapshots.len()
            ))
        })
    }

    pub fn last_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("graph has at least one snapshot")
    }

    /// Sum of per-snapshot edge counts.
    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(Snapshot::num_edges).sum()
    }

    pub fn node_id(&self, u: usize) -> &str {
        &self.node_ids[u]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Resolves external ids, reporting every unknown id at once.
    pub fn resolve_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>, Vec<String>> {
        let mut unknown = Vec::new();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match self.node_index(id.as_ref()) {
                Some(i) => out.push(i),
                None => unknown.push(id.as_ref().to_string()),
            }
        }
        if unknown.is_empty() {
            Ok(out)
        } else {
            Err(unknown)
        }
    }

    /// Raw interactions as ingested. Not consumed by the model.
    pub fn edge_records(&self) -> &[EdgeRecord] {
        &self.edge_records
    }

    /// Earliest timestamp at which each node appeared. Not consumed by the model.
    pub fn node_timestamps(&self) -> &[f64] {
        &self.node_timestamps
    }

    pub fn degree_plus_one(&self, t: usize, u: usize) -> Result<usize> {
        let snap = self.snapshot(t)?;
        if u >= snap.num_nodes() {
            return arg(format!("node index {u} out of range ({} nodes)", snap.num_nodes()));
        }
        Ok(snap.degree_plus_one(u))
    }

    /// The first `count` snapshots as a new graph.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.snapshots.len() {
            return arg(format!(
                "cannot keep {count} of {} snapshots",
                self.snapshots.len()
            ));
        }
        let mut g = self.clone();
        g.snapshots.truncate(count);
        Ok(g)
    }

    /// The last snapshot alone as a new graph.
    pub fn last_only(&self) -> Self {
        let mut g = self.clone();
        g.snapshots.drain(..g.snapshots.len() - 1);
        g
    }

    /// Graph induced on `nodes` in every snapshot; node `nodes[i]` becomes `i`.
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut local = HashMap::with_capacity(nodes.len());
        for (i, &u) in nodes.iter().enumerate() {
            if u >= n {
                return arg(format!("node index {u} out of range ({n} nodes)"));
            }
            if local.insert(u, i).is_some() {
                return arg(format!("node index {u} listed twice"));
            }
        }
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| {
                let adjacency = nodes
                    .iter()
                    .map(|&u| {
                        s.adjacency[u]
                            .iter()
                            .filter_map(|v| local.get(v).copied())
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect()
                    })
                    .collect();
                Snapshot {
                    t: s.t,
                    adjacency,
                    attrs: s.attrs.select_rows(nodes),
                }
            })
            .collect();
        let node_ids: Vec<String> = nodes.iter().map(|&u| self.node_ids[u].clone()).collect();
        let index = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            snapshots,
            node_ids,
            index,
            attr_dim: self.attr_dim,
            edge_records: Vec::new(),
            node_timestamps: nodes.iter().map(|&u| self.node_timestamps[u]).collect(),
        })
    }

    /// Writes the edge-list format; snapshot `t` edges get timestamp `t - 1`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# src dst timestamp")?;
        for (ti, snap) in self.snapshots.iter().enumerate() {
            for (u, v) in snap.edges() {
                writeln!(out, "{} {} {}", self.node_ids[u], self.node_ids[v], ti)?;
            }
        }
        Ok(())
    }
}

fn degree_features(adjacency: &[Vec<usize>]) -> Tensor {
    let max = adjacency.iter().map(Vec::len).max().unwrap_or(0);
    let data = adjacency
        .iter()
        .map(|nb| if max == 0 { 0.0 } else { nb.len() as f64 / max as f64 })
        .collect();
    Tensor::from_vec(adjacency.len(), 1, data)
}

/// Options for [`load_temporal_graph`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub mode: SnapshotMode,
}

struct IdInterner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdInterner {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }
}

/// Reads `src dst timestamp` lines and buckets them into `num_snapshots`
/// snapshots of equal time span.
pub fn load_temporal_graph(
    edge_path: &Path,
    attr_path: Option<&Path>,
    num_snapshots: usize,
    options: LoadOptions,
) -> Result<TemporalGraph> {
    if num_snapshots < 1 {
        return arg("num_snapshots must be at least 1");
    }
    let text = fs::read_to_string(edge_path)?;
    let mut ids = IdInterner {
        ids: Vec::new(),
        index: HashMap::new(),
    };
    let mut records = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| Error::Parse {
            path: edge_path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `src dst timestamp`, found {} field(s)",
                fields.len()
            )));
        }
        let timestamp: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("invalid timestamp {:?}", fields[2])))?;
        if !timestamp.is_finite() {
            return Err(parse_err(format!("non-finite timestamp {:?}", fields[2])));
        }
        let src = ids.intern(fields[0]);
        let dst = ids.intern(fields[1]);
        records.push(EdgeRecord {
            src,
            dst,
            timestamp,
        });
    }

    let static_attrs = match attr_path {
        Some(p) => Some(read_attributes(p, &mut ids)?),
        None => None,
    };
    if ids.ids.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let n = ids.ids.len();

    let (lo, hi) = records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.timestamp), hi.max(r.timestamp))
        });
    let span = (hi - lo) / num_snapshots as f64;
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_snapshots];
    let mut node_timestamps = vec![f64::INFINITY; n];
    for r in &records {
        let b = if span > 0.0 {
            (((r.timestamp - lo) / span).floor() as usize).min(num_snapshots - 1)
        } else {
            0
        };
        buckets[b].push((r.src, r.dst));
        for u in [r.src, r.dst] {
            node_timestamps[u] = node_timestamps[u].min(r.timestamp);
        }
    }
    if options.mode == SnapshotMode::Cumulative {
        for t in 1..num_snapshots {
            let prev = buckets[t - 1].clone();
            buckets[t].extend(prev);
        }
    }
    for ts in &mut node_timestamps {
        if !ts.is_finite() {
            *ts = if lo.is_finite() { lo } else { 0.0 };
        }
    }

    let features = match static_attrs {
        Some(rows) => NodeFeatures::Static(attribute_matrix(rows, n)),
        None => NodeFeatures::NormalizedDegree,
    };
    let mut g = TemporalGraph::from_snapshot_edges(ids.ids, &buckets, features)?;
    g.edge_records = records;
    g.node_timestamps = node_timestamps;
    Ok(g)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

/// Returns `(node index, raw features)` rows; unseen ids are added to the
/// id space as isolated nodes.
fn read_attributes(path: &Path, ids: &mut IdInterner) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                // header row
                width = Some(fields.len() - 1);
                continue;
            }
            Err(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "non-numeric attribute value".into(),
                })
            }
        };
        if values.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected `node,f1,...,fk`".into(),
            });
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {w} attribute(s), found {}", values.len()),
                })
            }
            _ => width = Some(values.len()),
        }
        rows.push((ids.intern(fields[0]), values));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "attribute file has no rows".into(),
        });
    }
    Ok(rows)
}

/// Row-normalizes features by their L1 norm; nodes without a row get zeros.
fn attribute_matrix(rows: Vec<(usize, Vec<f64>)>, n: usize) -> Tensor {
    let f = rows[0].1.len();
    let mut x = Tensor::zeros(n, f);
    for (u, values) in rows {
        let norm: f64 = values.iter().map(|v| v.abs()).sum();
        for (j, v) in values.into_iter().enumerate() {
            x.set(u, j, if norm > 0.0 { v / norm } else { v });
        }
    }
    x
}

/// Query node set plus its indicator vector over all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVector {
    nodes: Vec<usize>,
    onehot: Vec<f64>,
}

impl QueryVector {
    /// Sorted, de-duplicated query nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn onehot(&self) -> &[f64] {
        &self.onehot
    }

    pub fn len(&self) -> usize {
        self.onehot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onehot.is_empty()
    }

    pub fn contains(&self, u: usize) -> bool {
        self.onehot.get(u).is_some_and(|&x| x == 1.0)
    }
}

pub fn encode_query(nodes: &[usize], n: usize) -> Result<QueryVector> {
    if nodes.is_empty() {
        return arg("query node set is empty");
    }
    let mut onehot = vec![0.0; n];
    let mut set = BTreeSet::new();
    for &u in nodes {
        if u >= n {
            return arg(format!("query node {u} out of range ({n} nodes)"));
        }
        onehot[u] = 1.0;
        set.insert(u);
    }
    Ok(QueryVector {
        nodes: set.into_iter().collect(),
        onehot,
    })
}

/// Induced k-hop neighborhood of a query at one snapshot.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// New index → original index, in BFS discovery order (query nodes first).
    pub nodes: Vec<usize>,
    /// Original index → new index.
    pub index: BTreeMap<usize, usize>,
    /// Induced adjacency in the new index space.
    pub adjacency: Vec<Vec<usize>>,
}

pub fn khop_candidate(
    g: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    k: usize,
) -> Result<Candidate> {
    if k < 1 {
        return arg("hop count must be at least 1");
    }
    let snap = g.snapshot(t)?;
    if query.len() != snap.num_nodes() {
        return arg(format!(
            "query vector has length {} but graph has {} nodes",
            query.len(),
            snap.num_nodes()
        ));
    }
    let nodes = khop_nodes(snap.adjacency(), query.nodes(), k);
    let index: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let adjacency = nodes
        .iter()
        .map(|&u| {
            snap.neighbors(u)
                .iter()
                .filter_map(|v| index.get(v).copied())
                .collect::<Vec<_>>()
        })
        .map(|mut v| {
            v.sort_unstable();
            v
        })
        .collect();
    Ok(Candidate {
        nodes,
        index,
        adjacency,
    })
}

/// Nodes within `k` hops of any source, sources first.
pub fn khop_nodes(adjacency: &[Vec<usize>], sources: &[usize], k: usize) -> Vec<usize> {
    let mut depth = vec![usize::MAX; adjacency.len()];
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    for &s in sources {
        if depth[s] == usize::MAX {
            depth[s] = 0;
            order.push(s);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        if depth[u] == k {
            continue;
        }
        for &v in &adjacency[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    order
}

/// Ground-truth communities, optionally varying per snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommunitySet {
    pub communities: Vec<Vec<usize>>,
    /// Zero-based snapshot index → communities aligned by position with
    /// `communities`.
    pub per_snapshot: BTreeMap<usize, Vec<Vec<usize>>>,
}

impl CommunitySet {
    pub fn new(communities: Vec<Vec<usize>>) -> Self {
        Self {
            communities,
            per_snapshot: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    /// Members of community `c` at snapshot `t`, falling back to the final
    /// communities when no per-snapshot entry exists.
    pub fn members_at(&self, c: usize, t: usize) -> &[usize] {
        self.per_snapshot
            .get(&t)
            .and_then(|cs| cs.get(c))
            .unwrap_or(&self.communities[c])
    }
}

/// Reads one community per line. A line may start with `t<k>:` to give the
/// community's membership at (one-based) snapshot `k`; such lines are matched
/// by order with the unprefixed communities.
pub fn load_communities(path: &Path, g: &TemporalGraph) -> Result<CommunitySet> {
    let text = fs::read_to_string(path)?;
    let mut set = CommunitySet::default();
    let mut counters: BTreeMap<usize, usize> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let mut line = strip_comment(raw);
        if line.is_empty() {
            if !raw.trim_start().starts_with('#') {
                warn!(path = %path.display(), line = lineno + 1, "skipping empty community line");
            }
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut snapshot = None;
        if let Some((head, rest)) = line.split_once(':') {
            if let Some(k) = head.trim().strip_prefix('t') {
                let k: usize = k
                    .parse()
                    .map_err(|_| parse_err(format!("invalid snapshot prefix {head:?}")))?;
                if k < 1 || k > g.num_snapshots() {
                    return Err(parse_err(format!("snapshot {k} out of range")));
                }
                snapshot = Some(k - 1);
                line = rest.trim();
            }
        }
        let mut members = BTreeSet::new();
        for id in line.split_whitespace() {
            let u = g
                .node_index(id)
                .ok_or_else(|| parse_err(format!("unknown node id {id:?}")))?;
            members.insert(u);
        }
        if members.is_empty() {
            warn!(path = %path.display(), line = lineno + 1, "skipping empty community line");
            continue;
        }
        let members: Vec<usize> = members.into_iter().collect();
        match snapshot {
            None => set.communities.push(members),
            Some(t) => {
                *counters.entry(t).or_default() += 1;
                set.per_snapshot.entry(t).or_default().push(members);
            }
        }
    }
    for (t, count) in counters {
        if count > set.communities.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!(
                    "snapshot {} lists {count} communities but only {} are declared",
                    t + 1,
                    set.communities.len()
                ),
            });
        }
    }
    Ok(set)
}
