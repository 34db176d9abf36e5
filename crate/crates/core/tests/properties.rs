mod common;

use common::*;
use cstgn_core::eval::{f1_score, generate_queries};
use cstgn_core::graph::{
    encode_query, khop_candidate, load_temporal_graph, CommunitySet, LoadOptions, NodeFeatures,
    TemporalGraph,
};
use cstgn_core::interactive::reptile_update;
use cstgn_core::model::{
    attention_short_state, forward, snapshot_layer, Mode, Model, ModelConfig, ModelParams,
    SnapshotContext, StateHistory, Variant,
};
use cstgn_core::search::community_from_psi;
use cstgn_core::tensor::{softmax_rows, Tape, Tensor};
use proptest::prelude::*;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_model(input_dim: usize, hidden: usize, variant: Variant, seed: u64) -> Model {
    let cfg = ModelConfig {
        input_dim,
        hidden,
        fnn_hidden: hidden,
        window: 2,
        variant,
        ..ModelConfig::default()
    };
    Model::init(cfg, &mut rng(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshots_are_simple_graphs(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng(seed);
        let raw: Vec<(usize, usize)> = (0..3 * n).map(|_| (r.gen_range(0..n), r.gen_range(0..n))).collect();
        let ids = (0..n).map(|u| u.to_string()).collect();
        let g = TemporalGraph::from_snapshot_edges(ids, &[raw.clone(), raw], NodeFeatures::NormalizedDegree).unwrap();
        for (t, s) in g.snapshots().iter().enumerate() {
            prop_assert_eq!(s.attrs().rows(), n);
            for u in 0..n {
                prop_assert!(g.degree_plus_one(t, u).unwrap() >= 1);
                let nb = s.neighbors(u);
                prop_assert!(!nb.contains(&u));
                prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
                for &v in nb {
                    prop_assert!(s.neighbors(v).contains(&u));
                }
            }
        }
    }

    #[test]
    fn khop_matches_frontier_oracle(seed in any::<u64>(), n in 1usize..50, k in 1usize..4) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 1, 0.08);
        let m = r.gen_range(1..=n.min(3));
        let q: Vec<usize> = index::sample(&mut r, n, m).into_vec();
        let qv = encode_query(&q, n).unwrap();
        let cand = khop_candidate(&g, 0, &qv, k).unwrap();
        let got: std::collections::BTreeSet<usize> = cand.nodes.iter().copied().collect();
        prop_assert_eq!(got.len(), cand.nodes.len());
        let dense = dense_adjacency(g.snapshot(0).unwrap().adjacency());
        prop_assert_eq!(got, khop_oracle(&dense, &q, k));
    }

    #[test]
    fn edge_list_round_trip(seed in any::<u64>(), n in 2usize..25, t in 1usize..5) {
        let mut r = rng(seed);
        let mut snaps: Vec<Vec<(usize, usize)>> = (0..t).map(|_| random_edges(&mut r, n, 0.2)).collect();
        for s in [0, t - 1] {
            if snaps[s].is_empty() {
                snaps[s].push((0, 1));
            }
        }
        let ids = (0..n).map(|u| format!("id{u}")).collect();
        let g = TemporalGraph::from_snapshot_edges(ids, &snaps, NodeFeatures::NormalizedDegree).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = load_temporal_graph(&path, None, t, LoadOptions::default()).unwrap();
        prop_assert_eq!(back.num_snapshots(), t);
        let named = |g: &TemporalGraph, ti: usize| {
            let mut e: Vec<(String, String)> = g.snapshot(ti).unwrap().edges().into_iter()
                .map(|(u, v)| {
                    let (a, b) = (g.node_id(u).to_string(), g.node_id(v).to_string());
                    if a < b { (a, b) } else { (b, a) }
                })
                .collect();
            e.sort();
            e
        };
        for ti in 0..t {
            prop_assert_eq!(named(&g, ti), named(&back, ti));
        }
        let active = |g: &TemporalGraph| {
            let mut v: Vec<String> = (0..g.num_nodes())
                .filter(|&u| g.snapshots().iter().any(|s| !s.neighbors(u).is_empty()))
                .map(|u| g.node_id(u).to_string())
                .collect();
            v.sort();
            v
        };
        prop_assert_eq!(active(&g), active(&back));
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), scale_exp in -3i32..3, cols in 1usize..8) {
        let mut r = rng(seed);
        let scale = 10f64.powi(scale_exp);
        let x = Tensor::from_vec(4, cols, (0..4 * cols).map(|_| r.gen_range(-1.0..1.0) * scale).collect());
        let s = softmax_rows(&x).unwrap();
        for i in 0..4 {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn snapshot_layer_matches_dense_loops(seed in any::<u64>(), n in 1usize..30, outside in any::<bool>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 1, 0.15);
        let f = r.gen_range(1..4);
        let cfg = ModelConfig { input_dim: f, hidden: 5, fnn_hidden: 3, layers: 1, bias_outside_sum: outside, ..ModelConfig::default() };
        let mut params = ModelParams::init(&cfg, &mut r).unwrap();
        params.snapshot[0].bias = Tensor::uniform(1, 5, 1.0, &mut r);
        let h = Tensor::uniform(n, f, 2.0, &mut r);
        let snap = g.snapshot(0).unwrap();
        let ctx = SnapshotContext::new(snap, &cfg);
        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape);
        let x = tape.leaf(h.clone());
        let out = snapshot_layer(&mut tape, &ctx, x, &vars.snapshot[0], &cfg, &mut Mode::eval()).unwrap();
        let l = &params.snapshot[0];
        let oracle = dense_snapshot_layer(&dense_adjacency(snap.adjacency()), &h, &l.w_self, &l.w_neigh, &l.bias, outside);
        prop_assert!(tape.value(out).max_abs_diff(&oracle) <= 1e-10);
    }

    #[test]
    fn attention_weights_and_envelope(seed in any::<u64>(), w in 1usize..5, d in 1usize..5) {
        let mut r = rng(seed);
        let window: Vec<Tensor> = (0..w).map(|_| Tensor::uniform(6, d, 3.0, &mut r)).collect();
        let refs: Vec<&Tensor> = window.iter().collect();
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::uniform(d, d, 2.0, &mut r));
        let rr = tape.leaf(Tensor::uniform(1, d, 2.0, &mut r));
        let (short, e) = attention_short_state(&mut tape, &refs, q, rr).unwrap();
        let (short, e) = (tape.value(short), tape.value(e));
        for u in 0..6 {
            prop_assert!((e.row(u).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(e.row(u).iter().all(|&x| x >= 0.0));
            for j in 0..d {
                let lo = window.iter().map(|c| c.get(u, j)).fold(f64::INFINITY, f64::min);
                let hi = window.iter().map(|c| c.get(u, j)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(short.get(u, j) >= lo - 1e-12 && short.get(u, j) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn extraction_matches_reachability(seed in any::<u64>(), n in 1usize..50, eta in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 1, 0.1);
        let psi: Vec<f64> = (0..n).map(|_| r.gen()).collect();
        let m = r.gen_range(1..=n.min(4));
        let q: Vec<usize> = index::sample(&mut r, n, m).into_vec();
        let qv = encode_query(&q, n).unwrap();
        let res = community_from_psi(&g, 0, &qv, psi.clone(), eta).unwrap();
        let dense = dense_adjacency(g.snapshot(0).unwrap().adjacency());
        prop_assert_eq!(&res.members, &reachability_oracle(&dense, &q, &psi, eta));
        prop_assert!(q.iter().all(|u| res.members.binary_search(u).is_ok()));
        prop_assert!(res.members.iter().all(|&u| qv.contains(u) || psi[u] >= eta));
        prop_assert!(discovery_connects(&dense, qv.nodes(), &res.members, &res.discovery));
    }

    #[test]
    fn f1_relabel_order_and_monotonicity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 40;
        let found: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.3)).collect();
        let truth: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.3)).collect();
        let s = f1_score(&found, &truth);
        for x in [s.precision, s.recall, s.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let perm = index::sample(&mut r, n, n).into_vec();
        let relabel = |v: &[usize]| v.iter().map(|&u| perm[u]).collect::<Vec<_>>();
        let mut rev = found.clone();
        rev.reverse();
        prop_assert_eq!(f1_score(&relabel(&found), &relabel(&truth)), s);
        prop_assert_eq!(f1_score(&rev, &truth), s);
        if let Some(&m) = truth.iter().find(|u| !found.contains(u)) {
            let mut more = found.clone();
            more.push(m);
            prop_assert!(f1_score(&more, &truth).recall >= s.recall);
        }
        if let Some(x) = (0..n).find(|u| !truth.contains(u) && !found.contains(u)) {
            let mut more = found.clone();
            more.push(x);
            prop_assert!(f1_score(&more, &truth).precision <= s.precision);
        }
    }

    #[test]
    fn no_gru_ignores_history(seed in any::<u64>(), n in 2usize..15) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 2, 0.3);
        let model = small_model(1, 3, Variant::NoGru, seed);
        let q = encode_query(&[0], n).unwrap();
        let empty = StateHistory::new(&model.config);
        let mut noisy = StateHistory::new(&model.config);
        let states = |r: &mut ChaCha8Rng| (0..2).map(|_| Tensor::uniform(n, 3, 5.0, r)).collect::<Vec<_>>();
        noisy.snapshot.push(0, states(&mut r)).unwrap();
        noisy.query.push(0, states(&mut r)).unwrap();
        let snap = g.snapshot(1).unwrap();
        let a = model.predict(snap, 1, &q, &empty).unwrap().psi;
        let b = model.predict(snap, 1, &q, &noisy).unwrap().psi;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn psi_is_a_probability(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 2, 0.3);
        let model = small_model(1, 4, Variant::Full, seed);
        let q = encode_query(&[n - 1], n).unwrap();
        for p in model.infer(&g, 1, &q).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
        let mut tape = Tape::new();
        let vars = model.params.to_tape(&mut tape);
        let pass = forward(&mut tape, g.snapshot(0).unwrap(), 0, &q, &StateHistory::new(&model.config), &vars, &model.config, &mut Mode::eval()).unwrap();
        prop_assert!(pass.psi_vec(&tape).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn reptile_scales_the_difference(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let a = small_model(2, 3, Variant::Full, seed);
        let b = small_model(2, 3, Variant::Full, seed.wrapping_add(1));
        let mut meta = a.params.clone();
        let norm = reptile_update(&mut meta, &b.params, alpha).unwrap();
        let full: f64 = a.params.entries().iter().zip(b.params.entries())
            .map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        prop_assert!((norm - alpha * full).abs() <= 1e-12);
        for ((m, x), y) in meta.entries().iter().zip(a.params.entries()).zip(b.params.entries()) {
            for ((&mv, &xv), &yv) in m.data().iter().zip(x.data()).zip(y.data()) {
                prop_assert!((mv - ((1.0 - alpha) * xv + alpha * yv)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn query_labels_are_community_indicators(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 30, 1, 0.1);
        let cs = CommunitySet::new(vec![(0..10).collect(), (10..25).collect(), (25..30).collect()]);
        for s in generate_queries(&g, &cs, 20, (1, 10), seed).unwrap() {
            let c = &cs.communities[s.community];
            let y = s.labels();
            for u in 0..30 {
                prop_assert_eq!(y[u] == 1.0, c.contains(&u));
            }
            prop_assert!(s.query.nodes().len() <= c.len().min(10));
        }
    }
}
