use std::collections::HashMap;

use cstgn_core::graph::{khop_nodes, TemporalGraph};
use cstgn_protocol::{AttrsSummary, GraphNode, GraphParams, GraphResponse};

use crate::error::ApiError;

/// Id-labeled view of one snapshot, optionally restricted to the ball of
/// `radius` hops around `center`, with at most `budget` nodes.
pub fn graph_view(
    graph: &TemporalGraph,
    params: &GraphParams,
    budget: usize,
) -> Result<GraphResponse, ApiError> {
    let count = graph.num_snapshots();
    let t = params.t.unwrap_or(count);
    if t < 1 || t > count {
        return Err(ApiError::bad_request(format!(
            "snapshot t={t} outside 1..={count}"
        )));
    }
    let snap = graph.snapshot(t - 1)?;
    let mut nodes: Vec<usize> = match &params.center {
        Some(center) => {
            let c = graph
                .node_index(center)
                .ok_or_else(|| ApiError::unknown_nodes(vec![center.clone()]))?;
            khop_nodes(snap.adjacency(), &[c], params.radius.unwrap_or(1))
        }
        None if params.radius.is_some() => {
            return Err(ApiError::bad_request("radius requires a center"));
        }
        None => (0..graph.num_nodes()).collect(),
    };
    let truncated = nodes.len() > budget;
    nodes.truncate(budget);

    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut edges = Vec::new();
    for (i, &u) in nodes.iter().enumerate() {
        for &v in snap.neighbors(u) {
            if pos.get(&v).is_some_and(|&j| j > i) {
                edges.push([graph.node_id(u).to_string(), graph.node_id(v).to_string()]);
            }
        }
    }

    let attrs = snap.attrs();
    let dim = attrs.cols();
    let mut mean = vec![0.0; dim];
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &u in &nodes {
        for (m, &x) in mean.iter_mut().zip(attrs.row(u)) {
            *m += x;
            min = min.min(x);
            max = max.max(x);
        }
    }
    if nodes.is_empty() || dim == 0 {
        (min, max) = (0.0, 0.0);
    } else {
        mean.iter_mut().for_each(|m| *m /= nodes.len() as f64);
    }

    Ok(GraphResponse {
        t,
        num_snapshots: count,
        nodes: nodes
            .iter()
            .map(|&u| GraphNode {
                id: graph.node_id(u).to_string(),
                degree: snap.neighbors(u).len(),
            })
            .collect(),
        edges,
        attrs_summary: AttrsSummary { dim, mean, min, max },
        truncated,
    })
}
