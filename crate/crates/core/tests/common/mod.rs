//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cstgn_core::graph::{NodeFeatures, TemporalGraph};
use cstgn_core::tensor::Tensor;
use rand::Rng;

/// Random simple undirected edge list on `n` nodes.
pub fn random_edges<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                e.push((u, v));
            }
        }
    }
    e
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, snapshots: usize, p: f64) -> TemporalGraph {
    let snaps: Vec<_> = (0..snapshots).map(|_| random_edges(rng, n, p)).collect();
    let ids = (0..n).map(|u| format!("v{u}")).collect();
    TemporalGraph::from_snapshot_edges(ids, &snaps, NodeFeatures::NormalizedDegree).unwrap()
}

pub fn dense_adjacency(adj: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut a = vec![vec![false; n]; n];
    for (u, nb) in adj.iter().enumerate() {
        for &v in nb {
            a[u][v] = true;
        }
    }
    a
}

/// Explicit-loop GCN layer: `relu(H Ws + sum_{v ~ u} (H_v W / sqrt(p_u p_v) + b))`.
pub fn dense_snapshot_layer(
    adj: &[Vec<bool>],
    h: &Tensor,
    w_self: &Tensor,
    w_neigh: &Tensor,
    bias: &Tensor,
    bias_outside: bool,
) -> Tensor {
    let n = adj.len();
    let (din, dout) = (w_self.rows(), w_self.cols());
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
    let mut out = Tensor::zeros(n, dout);
    for u in 0..n {
        for j in 0..dout {
            let mut acc = 0.0;
            for k in 0..din {
                acc += h.get(u, k) * w_self.get(k, j);
            }
            for v in 0..n {
                if !adj[u][v] {
                    continue;
                }
                let norm = (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt();
                let mut m = 0.0;
                for k in 0..din {
                    m += h.get(v, k) * w_neigh.get(k, j);
                }
                acc += m / norm;
                if !bias_outside {
                    acc += bias.get(0, j);
                }
            }
            if bias_outside {
                acc += bias.get(0, j);
            }
            out.set(u, j, acc.max(0.0));
        }
    }
    out
}

/// Depth-limited neighborhood by repeated frontier expansion.
pub fn khop_oracle(adj: &[Vec<bool>], sources: &[usize], k: usize) -> BTreeSet<usize> {
    let mut seen: BTreeSet<usize> = sources.iter().copied().collect();
    let mut frontier = seen.clone();
    for _ in 0..k {
        let mut next = BTreeSet::new();
        for &u in &frontier {
            for v in 0..adj.len() {
                if adj[u][v] && !seen.contains(&v) {
                    next.insert(v);
                }
            }
        }
        seen.extend(next.iter().copied());
        frontier = next;
    }
    seen
}

/// Query nodes plus everything reachable from them through nodes with
/// `psi >= eta`, by fixed-point iteration.
pub fn reachability_oracle(adj: &[Vec<bool>], query: &[usize], psi: &[f64], eta: f64) -> Vec<usize> {
    let n = adj.len();
    let mut inside = vec![false; n];
    for &q in query {
        inside[q] = true;
    }
    loop {
        let mut changed = false;
        for v in 0..n {
            if inside[v] || psi[v] < eta {
                continue;
            }
            if (0..n).any(|u| inside[u] && adj[u][v]) {
                inside[v] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&u| inside[u]).collect()
}

/// Checks that `discovery` edges are graph edges connecting every non-query
/// member back to the query set.
pub fn discovery_connects(
    adj: &[Vec<bool>],
    query: &[usize],
    members: &[usize],
    discovery: &[(usize, usize)],
) -> bool {
    let mut reached: BTreeSet<usize> = query.iter().copied().collect();
    for &(p, c) in discovery {
        if !adj[p][c] || !reached.contains(&p) || !reached.insert(c) {
            return false;
        }
    }
    reached.into_iter().collect::<Vec<_>>() == members
}
