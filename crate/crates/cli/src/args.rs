use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use cstgn_core::graph::{load_communities, load_temporal_graph, CommunitySet, LoadOptions, SnapshotMode, TemporalGraph};
use cstgn_core::model::{ModelConfig, Variant};
use cstgn_core::trainer::TrainConfig;
use serde::Deserialize;

/// Optional JSON file of defaults. Flags on the command line win.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub snapshots: Option<usize>,
    pub cumulative: Option<bool>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub eta: Option<f64>,
    pub seed: Option<u64>,
    pub patience: Option<usize>,
    pub queries: Option<usize>,
    pub min_query: Option<usize>,
    pub max_query: Option<usize>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub window: Option<usize>,
    pub dropout: Option<f64>,
    pub variant: Option<Variant>,
    pub alpha: Option<f64>,
    pub port: Option<u16>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| crate::user_error(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Edge list: `src dst timestamp` per line.
    #[arg(long)]
    pub graph: PathBuf,
    /// Node attributes as CSV `node,f1,...,fk`. Defaults to normalized degree.
    #[arg(long)]
    pub attrs: Option<PathBuf>,
    /// Number of equal-span snapshots [default: 3].
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Snapshot t holds every edge up to bucket t.
    #[arg(long)]
    pub cumulative: bool,
    /// JSON file of defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl GraphArgs {
    pub fn load(&self, file: &ConfigFile) -> Result<TemporalGraph> {
        let snapshots = self.snapshots.or(file.snapshots).unwrap_or(3);
        let mode = if self.cumulative || file.cumulative == Some(true) {
            SnapshotMode::Cumulative
        } else {
            SnapshotMode::Disjoint
        };
        let g = load_temporal_graph(&self.graph, self.attrs.as_deref(), snapshots, LoadOptions { mode })
            .with_context(|| format!("loading graph {}", self.graph.display()))?;
        Ok(g)
    }
}

pub fn communities(path: &Path, g: &TemporalGraph) -> Result<CommunitySet> {
    load_communities(path, g).with_context(|| format!("loading communities {}", path.display()))
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    /// Embedding and classifier width [default: 64].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Snapshots kept in each layer's history [default: 3].
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// full, no_gru or sum_update.
    #[arg(long)]
    pub variant: Option<Variant>,
}

impl ModelArgs {
    pub fn resolve(&self, file: &ConfigFile, input_dim: usize) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let hidden = self.hidden.or(file.hidden).unwrap_or(d.hidden);
        let cfg = ModelConfig {
            input_dim,
            layers: self.layers.or(file.layers).unwrap_or(d.layers),
            hidden,
            fnn_hidden: hidden,
            window: self.window.or(file.window).unwrap_or(d.window),
            dropout: self.dropout.or(file.dropout).unwrap_or(d.dropout),
            variant: self.variant.or(file.variant).unwrap_or(d.variant),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Membership threshold [default: 0.5].
    #[arg(long)]
    pub eta: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs without validation gain before stopping [default: 10].
    #[arg(long)]
    pub patience: Option<usize>,
    #[command(flatten)]
    pub sampling: SampleArgs,
}

impl TrainArgs {
    pub fn resolve(&self, file: &ConfigFile, base: &TrainConfig) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs.or(file.epochs).unwrap_or(base.epochs),
            lr: self.lr.or(file.lr).unwrap_or(base.lr),
            eta: self.eta.or(file.eta).unwrap_or(base.eta),
            seed: self.seed.or(file.seed).unwrap_or(base.seed),
            patience: self.patience.or(file.patience).unwrap_or(base.patience),
            ..base.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Query-community pairs to draw [default: 100].
    #[arg(long)]
    pub queries: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub min_query: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub max_query: Option<usize>,
}

impl SampleArgs {
    pub fn resolve(&self, file: &ConfigFile) -> (usize, (usize, usize)) {
        (
            self.queries.or(file.queries).unwrap_or(100),
            (
                self.min_query.or(file.min_query).unwrap_or(1),
                self.max_query.or(file.max_query).unwrap_or(10),
            ),
        )
    }
}

pub fn parse_ids(raw: &[String]) -> Vec<String> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}
