//! Query generation, data splits, F1 metrics and the experiment drivers.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::graph::{encode_query, CommunitySet, TemporalGraph};
use crate::model::{Model, ModelConfig, Variant};
use crate::search::{extract_community, infer_scoped, CandidateScope};
use crate::trainer::{train_temporal, QuerySample, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `found` against `truth`. Both are sets of
/// node indices; duplicates are ignored. Empty ratios count as 0.
pub fn f1_score(found: &[usize], truth: &[usize]) -> Scores {
    let mut a = found.to_vec();
    a.sort_unstable();
    a.dedup();
    let mut b = truth.to_vec();
    b.sort_unstable();
    b.dedup();
    let hit = a.iter().filter(|u| b.binary_search(u).is_ok()).count() as f64;
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let precision = ratio(hit, a.len());
    let recall = ratio(hit, b.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores {
        precision,
        recall,
        f1,
    }
}

/// Draws `count` queries. Each picks a community uniformly, a size uniformly
/// in `[min, min(max, |c|)]` and then that many distinct members.
pub fn generate_queries(
    graph: &TemporalGraph,
    communities: &CommunitySet,
    count: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<Vec<QuerySample>> {
    let (lo, hi) = size;
    if count < 1 {
        return arg("query count must be at least 1");
    }
    if lo < 1 || hi < lo {
        return arg(format!("invalid query size range [{lo}, {hi}]"));
    }
    let usable: Vec<usize> = (0..communities.len())
        .filter(|&c| communities.communities[c].len() >= lo)
        .collect();
    if usable.is_empty() {
        return arg(format!("no community has at least {lo} members"));
    }
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c = *usable.choose(&mut rng).expect("non-empty");
        let members = &communities.communities[c];
        let k = rng.gen_range(lo..=hi.min(members.len()));
        let mut q: Vec<usize> = index::sample(&mut rng, members.len(), k)
            .into_iter()
            .map(|i| members[i])
            .collect();
        q.sort_unstable();
        let mut sample = QuerySample::new(encode_query(&q, n)?, c, members.clone())?;
        for (&t, cs) in &communities.per_snapshot {
            if let Some(m) = cs.get(c) {
                let mut m = m.clone();
                m.sort_unstable();
                sample.members_by_snapshot.insert(t, m);
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Train/validation/test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<QuerySample>,
    pub val: Vec<QuerySample>,
    pub test: Vec<QuerySample>,
}

/// Seeded shuffle followed by a 40/30/30 cut.
pub fn split(samples: &[QuerySample], seed: u64) -> Result<Split> {
    let n = samples.len();
    if n < 3 {
        return arg(format!("need at least 3 queries to split, got {n}"));
    }
    let mut v = samples.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((0.4 * n as f64) + 0.5).floor() as usize;
    let n_val = ((0.3 * n as f64) + 0.5).floor() as usize;
    let test = v.split_off(n_train + n_val);
    let val = v.split_off(n_train);
    Ok(Split {
        train: v,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: Vec<usize>,
    pub size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eta: f64,
    /// One-based snapshot the queries were answered at.
    pub snapshot: usize,
    pub per_query: Vec<QueryMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub median_f1: f64,
    pub model: ModelConfig,
}

/// Membership probabilities of every sample at snapshot `t`.
pub fn predict_all(
    model: &Model,
    graph: &TemporalGraph,
    t: usize,
    samples: &[QuerySample],
    scope: CandidateScope,
) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| infer_scoped(model, graph, t, &s.query, scope))
        .collect()
}

/// Scores precomputed probabilities at one threshold.
pub fn report_from_psi(
    model: &Model,
    graph: &TemporalGraph,
    t: usize,
    samples: &[QuerySample],
    psi: &[Vec<f64>],
    eta: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return arg("no queries to evaluate");
    }
    let adjacency = graph.snapshot(t)?.adjacency();
    let mut per_query = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(psi) {
        let (members, _) = extract_community(adjacency, &s.query, p, eta)?;
        let sc = f1_score(&members, s.members_at(t));
        per_query.push(QueryMetrics {
            query: s.query.nodes().to_vec(),
            size: members.len(),
            precision: sc.precision,
            recall: sc.recall,
            f1: sc.f1,
        });
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let mut f1s: Vec<f64> = per_query.iter().map(|m| m.f1).collect();
    f1s.sort_by(f64::total_cmp);
    let mid = f1s.len() / 2;
    let median_f1 = if f1s.len() % 2 == 1 {
        f1s[mid]
    } else {
        (f1s[mid - 1] + f1s[mid]) / 2.0
    };
    Ok(EvalReport {
        eta,
        snapshot: t + 1,
        mean_precision: mean(|m| m.precision),
        mean_recall: mean(|m| m.recall),
        mean_f1: mean(|m| m.f1),
        median_f1,
        per_query,
        model: model.config.clone(),
    })
}

/// Answers every sample at the last snapshot and scores it against its
/// ground truth.
pub fn evaluate(
    model: &Model,
    graph: &TemporalGraph,
    samples: &[QuerySample],
    eta: f64,
    scope: CandidateScope,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return arg("no queries to evaluate");
    }
    let t = graph.num_snapshots() - 1;
    let psi = predict_all(model, graph, t, samples, scope)?;
    report_from_psi(model, graph, t, samples, &psi, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Full model against the variants without the gated update.
    AblationGru,
    /// Train and test on the first `T'` snapshots for every `T'`.
    SnapshotCount,
    /// Validation F1 over a grid of thresholds.
    EtaSweep,
    /// Test F1 over a grid of hidden sizes.
    HiddenSweep,
}

impl std::str::FromStr for Experiment {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation_gru" => Ok(Self::AblationGru),
            "snapshot_count" => Ok(Self::SnapshotCount),
            "eta_sweep" => Ok(Self::EtaSweep),
            "hidden_sweep" => Ok(Self::HiddenSweep),
            other => arg(format!(
                "unknown experiment {other:?} (expected ablation_gru, snapshot_count, eta_sweep, hidden_sweep)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eta_grid: Vec<f64>,
    pub hidden_grid: Vec<usize>,
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            model,
            train,
            eta_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            hidden_grid: vec![16, 32, 64, 128],
        }
    }
}

/// One point of an experiment: a label, the x value and the mean F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub x: f64,
    pub mean_f1: f64,
}

/// Samples relabeled for a graph holding only snapshot `t` of the original.
pub fn samples_at(samples: &[QuerySample], t: usize) -> Vec<QuerySample> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let m = s.members_at(t).to_vec();
            s.members_by_snapshot.clear();
            s.members_by_snapshot.insert(0, m);
            s
        })
        .collect()
}

/// Trains and tests one ablation variant. The variant without temporal
/// updates is trained on the last snapshot alone.
pub fn ablation_run(
    graph: &TemporalGraph,
    split: &Split,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<EvalReport> {
    let (eta, scope) = (train.eta, train.candidate);
    if model.variant != Variant::NoGru {
        let out = train_fresh(graph, split, model, train)?;
        return evaluate(&out.best, graph, &split.test, eta, scope);
    }
    let last = graph.num_snapshots() - 1;
    let g = graph.last_only();
    let sp = Split {
        train: samples_at(&split.train, last),
        val: samples_at(&split.val, last),
        test: samples_at(&split.test, last),
    };
    let out = train_fresh(&g, &sp, model, train)?;
    evaluate(&out.best, &g, &sp.test, eta, scope)
}

/// Trains a fresh model from `cfg.train.seed` and returns its outcome.
pub fn train_fresh(
    graph: &TemporalGraph,
    split: &Split,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut model = model.clone();
    model.input_dim = graph.attr_dim();
    model.validate()?;
    let init = Model::init(model, &mut ChaCha8Rng::seed_from_u64(train.seed))?;
    train_temporal(init, graph, &split.train, &split.val, train)
}

fn parallel<T: Send, R: Send>(items: Vec<T>, f: impl Fn(T) -> Result<R> + Sync) -> Result<Vec<R>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.into_iter().map(|it| s.spawn(|| f(it))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment worker panicked"))
            .collect()
    })
}

/// Runs one experiment. Independent training runs execute on separate
/// threads; each is seeded on its own so results do not depend on scheduling.
pub fn run_experiment(
    graph: &TemporalGraph,
    samples: &[QuerySample],
    cfg: &ExperimentConfig,
    experiment: Experiment,
) -> Result<Vec<ExperimentRow>> {
    let sp = split(samples, cfg.train.seed)?;
    let eta = cfg.train.eta;
    let scope = cfg.train.candidate;
    match experiment {
        Experiment::AblationGru => {
            let variants = vec![(0, Variant::Full), (1, Variant::NoGru), (2, Variant::SumUpdate)];
            parallel(variants, |(i, v)| {
                let model = ModelConfig {
                    variant: v,
                    ..cfg.model.clone()
                };
                let r = ablation_run(graph, &sp, &model, &cfg.train)?;
                Ok(ExperimentRow {
                    label: v.to_string(),
                    x: f64::from(i),
                    mean_f1: r.mean_f1,
                })
            })
        }
        Experiment::SnapshotCount => {
            let counts: Vec<usize> = (1..=graph.num_snapshots()).collect();
            parallel(counts, |k| {
                let g = graph.truncated(k)?;
                let out = train_fresh(&g, &sp, &cfg.model, &cfg.train)?;
                let r = evaluate(&out.best, &g, &sp.test, eta, scope)?;
                Ok(ExperimentRow {
                    label: format!("T={k}"),
                    x: k as f64,
                    mean_f1: r.mean_f1,
                })
            })
        }
        Experiment::EtaSweep => {
            if cfg.eta_grid.is_empty() {
                return arg("threshold grid is empty");
            }
            let out = train_fresh(graph, &sp, &cfg.model, &cfg.train)?;
            let t = graph.num_snapshots() - 1;
            let psi = predict_all(&out.best, graph, t, &sp.val, scope)?;
            cfg.eta_grid
                .iter()
                .map(|&e| {
                    let r = report_from_psi(&out.best, graph, t, &sp.val, &psi, e)?;
                    Ok(ExperimentRow {
                        label: format!("eta={e}"),
                        x: e,
                        mean_f1: r.mean_f1,
                    })
                })
                .collect()
        }
        Experiment::HiddenSweep => {
            if cfg.hidden_grid.is_empty() {
                return arg("hidden size grid is empty");
            }
            parallel(cfg.hidden_grid.clone(), |h| {
                let model = ModelConfig {
                    hidden: h,
                    fnn_hidden: h,
                    ..cfg.model.clone()
                };
                let out = train_fresh(graph, &sp, &model, &cfg.train)?;
                let r = evaluate(&out.best, graph, &sp.test, eta, scope)?;
                Ok(ExperimentRow {
                    label: format!("hidden={h}"),
                    x: h as f64,
                    mean_f1: r.mean_f1,
                })
            })
        }
    }
}

/// Writes rows as `label,x,mean_f1` CSV.
pub fn write_rows_csv<W: std::io::Write>(rows: &[ExperimentRow], mut out: W) -> Result<()> {
    writeln!(out, "label,x,mean_f1")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.label, r.x, r.mean_f1)?;
    }
    Ok(())
}
