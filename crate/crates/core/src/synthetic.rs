//! Planted-partition temporal graphs for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg, Result};
use crate::graph::{CommunitySet, NodeFeatures, TemporalGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPartition {
    pub sizes: Vec<usize>,
    pub snapshots: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl PlantedPartition {
    /// Two communities of 20 nodes over 3 snapshots.
    pub fn small(seed: u64) -> Self {
        Self {
            sizes: vec![20, 20],
            snapshots: 3,
            p_in: 0.3,
            p_out: 0.02,
            seed,
        }
    }

    /// Every snapshot samples each pair independently. Node features are
    /// normalized degrees.
    pub fn generate(&self) -> Result<(TemporalGraph, CommunitySet)> {
        if self.sizes.is_empty() || self.snapshots == 0 {
            return arg("need at least one community and one snapshot");
        }
        for p in [self.p_in, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return arg(format!("probability {p} outside [0, 1]"));
            }
        }
        let mut label = Vec::new();
        let mut communities = Vec::with_capacity(self.sizes.len());
        for (c, &s) in self.sizes.iter().enumerate() {
            communities.push((label.len()..label.len() + s).collect());
            label.extend(std::iter::repeat_n(c, s));
        }
        let n = label.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let snaps: Vec<Vec<(usize, usize)>> = (0..self.snapshots)
            .map(|_| {
                let mut edges = Vec::new();
                for u in 0..n {
                    for v in u + 1..n {
                        let p = if label[u] == label[v] { self.p_in } else { self.p_out };
                        if rng.gen_bool(p) {
                            edges.push((u, v));
                        }
                    }
                }
                edges
            })
            .collect();
        let ids = (0..n).map(|u| format!("n{u}")).collect();
        let g = TemporalGraph::from_snapshot_edges(ids, &snaps, NodeFeatures::NormalizedDegree)?;
        Ok((g, CommunitySet::new(communities)))
    }
}
