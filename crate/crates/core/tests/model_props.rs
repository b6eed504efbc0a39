use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transkt_core::data::{Course, Step};
use transkt_core::graph::{CcEdge, ConceptGraph, Provenance, RelationType};
use transkt_core::model::ops;
use transkt_core::model::{ModelConfig, TransKt};
use transkt_core::numcore::{Csr, Tape, Tensor};

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_graph(questions: usize, concepts: usize, rng: &mut ChaCha8Rng) -> ConceptGraph {
    let mut qc = BTreeSet::new();
    for q in 0..questions {
        qc.insert((q, rng.random_range(0..concepts)));
        if rng.random_bool(0.3) {
            qc.insert((q, rng.random_range(0..concepts)));
        }
    }
    let mut cc = BTreeSet::new();
    for _ in 0..concepts {
        let (a, b) = (rng.random_range(0..concepts), rng.random_range(0..concepts));
        if a != b {
            let relation = RelationType::ALL[rng.random_range(0..4)];
            cc.insert(CcEdge { from: a, to: b, relation });
        }
    }
    ConceptGraph {
        node_keys: (0..questions)
            .map(|q| format!("q:{q}"))
            .chain((0..concepts).map(|c| format!("c:{c}")))
            .collect(),
        num_questions: questions,
        qc_edges: qc,
        cc_edges: cc,
        provenance: Provenance {
            backend: "test".into(),
            votes: 1,
            candidate_pairs: 0,
            cache_digest: None,
        },
    }
}

/// Dense mean-over-closed-neighbourhood operator built straight from the
/// edge lists.
fn dense_mean_operator(g: &ConceptGraph) -> Tensor {
    let n = g.num_nodes();
    let mut linked = vec![vec![false; n]; n];
    for i in 0..n {
        linked[i][i] = true;
    }
    let q = g.num_questions;
    let edges = g
        .qc_edges
        .iter()
        .map(|&(a, c)| (a, q + c))
        .chain(g.cc_edges.iter().map(|e| (q + e.from, q + e.to)));
    for (a, b) in edges {
        linked[a][b] = true;
        linked[b][a] = true;
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        let deg = linked[i].iter().filter(|&&l| l).count() as f64;
        for j in 0..n {
            if linked[i][j] {
                out.set(i, j, 1.0 / deg);
            }
        }
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out.set(i, j, (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum());
        }
    }
    out
}

fn random_steps(len: usize, questions: usize, rng: &mut ChaCha8Rng) -> Vec<Step> {
    (0..len)
        .map(|_| {
            let q = rng.random_range(0..questions);
            Step {
                question: q,
                course: if q % 2 == 0 { Course::X } else { Course::Y },
                response: rng.random_range(0..2),
            }
        })
        .collect()
}

fn small_model(seed: u64, eta: f64) -> TransKt {
    let config = ModelConfig {
        dim: 8,
        gcn_layers: 1,
        heads: 2,
        dropout: 0.0,
        eta,
        positional: false,
    };
    TransKt::new(config, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjacency_matches_dense_oracle(seed in any::<u64>(), nq in 1usize..12, nc in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(nq, nc, &mut rng);
        let adj = g.adjacency();
        let dense = dense_mean_operator(&g);
        let mut got = Tensor::zeros(adj.rows, adj.cols);
        for r in 0..adj.rows {
            for (c, w) in adj.row(r) {
                got.set(r, c, got.get(r, c) + w);
            }
            prop_assert!((adj.row(r).map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(got, dense);
    }

    #[test]
    fn propagation_matches_dense_layers(seed in any::<u64>(), layers in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(8, 4, &mut rng);
        let d = 5;
        let x = random(g.num_nodes(), d, &mut rng);
        let params: Vec<(Tensor, Tensor)> = (0..layers).map(|_| (random(d, d, &mut rng), random(1, d, &mut rng))).collect();

        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let vl: Vec<_> = params.iter().map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone()))).collect();
        let out = ops::propagate(&mut tape, &g.adjacency(), vx, &vl, 0.5, &mut rng, false).unwrap();

        let a = dense_mean_operator(&g);
        let mut h = x;
        for (w, b) in &params {
            let mut next = matmul(&a, &matmul(&h, w));
            for r in 0..next.rows() {
                for (v, bias) in next.row_mut(r).iter_mut().zip(b.data()) {
                    *v = (*v + bias).max(0.0);
                }
            }
            h = next;
        }
        for (p, q) in tape.value(out).data().iter().zip(h.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_ignores_neighbour_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(10, 4, &mut rng);
        let adj = g.adjacency();
        let reversed: Vec<Vec<(usize, f64)>> = (0..adj.rows).map(|r| adj.row(r).collect::<Vec<_>>().into_iter().rev().collect()).collect();
        let rev = Arc::new(Csr::from_rows(adj.cols, &reversed));
        let x = random(g.num_nodes(), 4, &mut rng);
        let (w, b) = (random(4, 4, &mut rng), random(1, 4, &mut rng));
        let run = |adj: &Arc<Csr>| {
            let mut tape = Tape::new();
            let vx = tape.constant(x.clone());
            let l = [(tape.constant(w.clone()), tape.constant(b.clone()))];
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let out = ops::propagate(&mut tape, adj, vx, &l, 0.0, &mut r, false).unwrap();
            tape.value(out).clone()
        };
        let (p, q) = (run(&adj), run(&rev));
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_output_is_a_convex_combination_of_values(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let mut tape = Tape::new();
        let p = ops::AttentionParams {
            query: tape.constant(random(d, d, &mut rng)),
            key: tape.constant(random(d, d, &mut rng)),
            value: tape.constant(Tensor::identity(d)),
            heads: 1,
        };
        let x = tape.constant(random(n, d, &mut rng));
        let vals = random(n, d, &mut rng);
        let v = tape.constant(vals.clone());
        let mask: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.6)).collect();
        let out = ops::attend(&mut tape, &p, x, x, v, &mask).unwrap();
        for i in 0..n {
            let allowed: Vec<usize> = (0..n).filter(|&j| mask[i * n + j]).collect();
            for c in 0..d {
                let o = tape.value(out).get(i, c);
                if allowed.is_empty() {
                    prop_assert_eq!(o, 0.0);
                    continue;
                }
                let lo = allowed.iter().map(|&j| vals.get(j, c)).fold(f64::INFINITY, f64::min);
                let hi = allowed.iter().map(|&j| vals.get(j, c)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_is_strictly_inside_unit_interval(seed in any::<u64>(), d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let (gs, gc, w) = (random(1, d, &mut rng), random(1, d, &mut rng), random(d, d, &mut rng));
        let expect_logit: f64 = (0..d).map(|i| (0..d).map(|j| gs.get(0, i) * w.get(i, j) * gc.get(0, j)).sum::<f64>()).sum();
        let (a, b, c) = (tape.constant(gs), tape.constant(gc), tape.constant(w));
        let out = ops::discriminate(&mut tape, a, b, c).unwrap();
        let p = tape.value(out).item();
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!((p - sigmoid(expect_logit)).abs() < 1e-12);
    }

    #[test]
    fn contrastive_loss_matches_log_form(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let g = random(1, d, &mut rng);
        let pos = random(1, d, &mut rng);
        let neg = random(1, d, &mut rng);
        let w = random(d, d, &mut rng);
        let bil = |a: &Tensor, b: &Tensor| -> f64 {
            (0..d).map(|i| (0..d).map(|j| a.get(0, i) * w.get(i, j) * b.get(0, j)).sum::<f64>()).sum()
        };
        let expect = -(sigmoid(bil(&g, &pos)).ln() + (1.0 - sigmoid(bil(&g, &neg))).ln());
        let vars = [g, pos, neg, w.clone()].map(|t| tape.constant(t));
        let l = ops::contrastive_loss(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
        prop_assert!((tape.value(l).item() - expect).abs() < 1e-10);
    }

    #[test]
    fn prediction_head_matches_formula(seed in any::<u64>(), n in 1usize..5, d in 1usize..6, eta in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hs, hc, q) = (random(n, d, &mut rng), random(n, d, &mut rng), random(n, d, &mut rng));
        let (w, v) = (random(d, 2 * d, &mut rng), random(1, d, &mut rng));
        let mut tape = Tape::new();
        let [a, b, c, vw, vv] = [hs.clone(), hc.clone(), q.clone(), w.clone(), v.clone()].map(|t| tape.constant(t));
        let fused = ops::fuse_states(&mut tape, a, b, eta).unwrap();
        let p = ops::predict(&mut tape, fused, c, vw, vv).unwrap();
        for r in 0..n {
            let h: Vec<f64> = (0..d).map(|i| eta * hc.get(r, i) + (1.0 - eta) * hs.get(r, i)).collect();
            let hq: Vec<f64> = h.iter().chain(q.row(r)).copied().collect();
            let hidden: Vec<f64> = (0..d).map(|k| dot(w.row(k), &hq).max(0.0)).collect();
            let expect = sigmoid(dot(v.row(0), &hidden));
            prop_assert!((tape.value(p).get(r, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_are_causal(seed in any::<u64>(), len in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(seed, 0.5);
        let enhanced = random(10, 8, &mut rng);
        let steps = random_steps(len, 10, &mut rng);
        let cut = rng.random_range(1..len);
        let mut altered = steps.clone();
        for s in &mut altered[cut..] {
            *s = random_steps(1, 10, &mut rng)[0];
        }
        let a = model.predict_sequence(&enhanced, &steps).unwrap();
        let b = model.predict_sequence(&enhanced, &altered).unwrap();
        for i in 0..cut {
            prop_assert!((a[i].1 - b[i].1).abs() < 1e-12, "position {i}");
        }
        prop_assert!(a.iter().all(|&(_, p, _)| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_eta_ignores_the_other_course(seed in any::<u64>(), len in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = small_model(seed, 0.0);
        let enhanced = random(10, 8, &mut rng);
        let steps = random_steps(len, 10, &mut rng);
        let only_x: Vec<Step> = steps.iter().copied().filter(|s| s.course == Course::X).collect();
        prop_assume!(!only_x.is_empty());
        let full: Vec<f64> = model
            .predict_sequence(&enhanced, &steps)
            .unwrap()
            .into_iter()
            .filter(|p| p.0 == Course::X)
            .map(|p| p.1)
            .collect();
        let alone: Vec<f64> = model.predict_sequence(&enhanced, &only_x).unwrap().into_iter().map(|p| p.1).collect();
        prop_assert_eq!(full.len(), alone.len());
        for (a, b) in full.iter().zip(&alone) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn positive_eta_uses_the_other_course() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = small_model(3, 0.5);
    let enhanced = random(10, 8, &mut rng);
    let steps = random_steps(20, 10, &mut rng);
    let only_x: Vec<Step> = steps.iter().copied().filter(|s| s.course == Course::X).collect();
    let full: Vec<f64> = model
        .predict_sequence(&enhanced, &steps)
        .unwrap()
        .into_iter()
        .filter(|p| p.0 == Course::X)
        .map(|p| p.1)
        .collect();
    let alone: Vec<f64> = model.predict_sequence(&enhanced, &only_x).unwrap().into_iter().map(|p| p.1).collect();
    assert!(full.iter().zip(&alone).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn zero_layer_propagation_passes_features_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(6, 3, &mut rng);
    let config = ModelConfig {
        dim: 4,
        gcn_layers: 0,
        heads: 1,
        dropout: 0.0,
        eta: 0.5,
        positional: false,
    };
    let model = TransKt::new(config, 1).unwrap();
    let x = random(g.num_nodes(), 4, &mut rng);
    assert_eq!(model.enhanced_features(&g.adjacency(), &x).unwrap(), x);
}

#[test]
fn out_of_range_eta_is_rejected() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(1, 2));
    for eta in [-0.1, 1.5, f64::NAN] {
        assert!(ops::fuse_states(&mut tape, a, a, eta).is_err());
        assert!(ops::total_loss(0.0, 0.0, 0.0, 0.0, eta).is_err());
    }
}
