//! Online community extraction: thresholded BFS over membership
//! probabilities, starting from the query nodes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::eval::f1_score;
use crate::graph::{khop_nodes, QueryVector, TemporalGraph};
use crate::model::Model;

/// When to restrict computation to the k-hop neighborhood of the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScope {
    pub hops: usize,
    /// Graphs with more nodes than this use candidate subgraphs.
    pub min_nodes: usize,
}

impl Default for CandidateScope {
    fn default() -> Self {
        Self {
            hops: 2,
            min_nodes: 5000,
        }
    }
}

impl CandidateScope {
    pub fn applies(&self, graph: &TemporalGraph) -> bool {
        graph.num_nodes() > self.min_nodes
    }
}

/// Sorted union over snapshots `0..=t` of the nodes within `hops` of the query.
pub fn temporal_candidate(
    graph: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    hops: usize,
) -> Result<Vec<usize>> {
    if hops < 1 {
        return arg("hop count must be at least 1");
    }
    let mut set = BTreeSet::new();
    for ti in 0..=t {
        set.extend(khop_nodes(graph.snapshot(ti)?.adjacency(), query.nodes(), hops));
    }
    Ok(set.into_iter().collect())
}

/// Membership probabilities at snapshot `t`, computed on the candidate
/// subgraph when `scope` applies (nodes outside it get 0).
pub fn infer_scoped(
    model: &Model,
    graph: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    scope: CandidateScope,
) -> Result<Vec<f64>> {
    if !scope.applies(graph) {
        return model.infer(graph, t, query);
    }
    let nodes = temporal_candidate(graph, t, query, scope.hops)?;
    let sub = graph.induced(&nodes)?;
    let local: Vec<usize> = query
        .nodes()
        .iter()
        .map(|q| nodes.binary_search(q).expect("query nodes are in their candidate"))
        .collect();
    let q = crate::graph::encode_query(&local, nodes.len())?;
    let psi_local = model.infer(&sub, t, &q)?;
    let mut psi = vec![0.0; graph.num_nodes()];
    for (i, &u) in nodes.iter().enumerate() {
        psi[u] = psi_local[i];
    }
    Ok(psi)
}

/// Extracted community for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityResult {
    pub psi: Vec<f64>,
    /// Sorted member indices.
    pub members: Vec<usize>,
    pub query: QueryVector,
    pub eta: f64,
    /// BFS discovery edges `(parent, child)` for every non-query member.
    pub discovery: Vec<(usize, usize)>,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return arg(format!("threshold {eta} outside [0, 1]"));
    }
    Ok(())
}

/// BFS from the query nodes through neighbors whose probability is at least
/// `eta`. Query nodes are always members and are expanded regardless of
/// their own probability.
pub fn extract_community(
    adjacency: &[Vec<usize>],
    query: &QueryVector,
    psi: &[f64],
    eta: f64,
) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
    check_eta(eta)?;
    if psi.len() != adjacency.len() || query.len() != adjacency.len() {
        return arg(format!(
            "graph has {} nodes but psi has {} and query {}",
            adjacency.len(),
            psi.len(),
            query.len()
        ));
    }
    let mut visited = vec![false; adjacency.len()];
    let mut queue = VecDeque::new();
    for &q in query.nodes() {
        visited[q] = true;
        queue.push_back(q);
    }
    let mut discovery = Vec::new();
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !visited[v] && psi[v] >= eta {
                visited[v] = true;
                discovery.push((u, v));
                queue.push_back(v);
            }
        }
    }
    let members = visited
        .iter()
        .enumerate()
        .filter_map(|(u, &m)| m.then_some(u))
        .collect();
    Ok((members, discovery))
}

/// Runs the model at snapshot `t` and extracts the query's community.
pub fn identify_community(
    model: &Model,
    graph: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    eta: f64,
    scope: CandidateScope,
) -> Result<CommunityResult> {
    check_eta(eta)?;
    let psi = infer_scoped(model, graph, t, query, scope)?;
    community_from_psi(graph, t, query, psi, eta)
}

pub fn community_from_psi(
    graph: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    psi: Vec<f64>,
    eta: f64,
) -> Result<CommunityResult> {
    let (members, discovery) = extract_community(graph.snapshot(t)?.adjacency(), query, &psi, eta)?;
    Ok(CommunityResult {
        psi,
        members,
        query: query.clone(),
        eta,
        discovery,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub size: usize,
    pub f1: Option<f64>,
}

/// One forward pass, one extraction per threshold.
pub fn sweep_threshold(
    model: &Model,
    graph: &TemporalGraph,
    t: usize,
    query: &QueryVector,
    grid: &[f64],
    truth: Option<&[usize]>,
    scope: CandidateScope,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return arg("threshold grid is empty");
    }
    for &eta in grid {
        check_eta(eta)?;
    }
    let psi = infer_scoped(model, graph, t, query, scope)?;
    let adjacency = graph.snapshot(t)?.adjacency();
    grid.iter()
        .map(|&eta| {
            let (members, _) = extract_community(adjacency, query, &psi, eta)?;
            Ok(SweepPoint {
                eta,
                size: members.len(),
                f1: truth.map(|c| f1_score(&members, c).f1),
            })
        })
        .collect()
}

/// Line-delimited serialization of a [`CommunityResult`] with external ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityRecord {
    pub query: Vec<String>,
    pub members: Vec<String>,
    pub eta: f64,
    /// Membership probability of each member.
    pub psi: BTreeMap<String, f64>,
}

impl CommunityResult {
    pub fn to_record(&self, graph: &TemporalGraph) -> CommunityRecord {
        CommunityRecord {
            query: self
                .query
                .nodes()
                .iter()
                .map(|&u| graph.node_id(u).to_string())
                .collect(),
            members: self.members.iter().map(|&u| graph.node_id(u).to_string()).collect(),
            eta: self.eta,
            psi: self
                .members
                .iter()
                .map(|&u| (graph.node_id(u).to_string(), self.psi[u]))
                .collect(),
        }
    }
}
