//! Checks shared by the fuzz targets and the seed-replay test. Each takes
//! raw bytes, must never panic on rejected input, and asserts that accepted
//! input survives a write/parse round trip.

use transkt_core::data::{parse_concept_map, parse_interactions, Dataset, SplitManifest};
use transkt_core::graph::ConceptGraph;
use transkt_core::llm::{parse_vote, FixtureLlm};
use transkt_core::numcore::Checkpoint;
use transkt_core::semantics::{node_texts_to_string, parse_node_texts, FeatureMatrix};
use transkt_core::synth::SynthConfig;
use transkt_core::trainer::TrainConfig;

pub type Check = fn(&[u8]);

/// Target names paired with their checks. Names match `fuzz_targets/*.rs`
/// and `corpus/*`.
pub const TARGETS: [(&str, Check); 12] = [
    ("interactions", interactions),
    ("concept_map", concept_map),
    ("node_texts", node_texts),
    ("embeddings", embeddings),
    ("dataset_json", dataset_json),
    ("split_json", split_json),
    ("graph_json", graph_json),
    ("checkpoint", checkpoint),
    ("train_config", train_config),
    ("synth_config", synth_config),
    ("llm_fixture", llm_fixture),
    ("vote", vote),
];

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn interactions(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(log) = parse_interactions(t, "fuzz") {
        assert_eq!(parse_interactions(&log.to_csv(), "rt").unwrap(), log);
    }
}

pub fn concept_map(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(map) = parse_concept_map(t, "fuzz") {
        assert_eq!(parse_concept_map(&map.to_csv(), "rt").unwrap(), map);
    }
}

pub fn node_texts(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(nodes) = parse_node_texts(t, "fuzz") {
        assert_eq!(parse_node_texts(&node_texts_to_string(&nodes), "rt").unwrap(), nodes);
    }
}

pub fn embeddings(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(m) = FeatureMatrix::parse(t, "fuzz") {
        let back = FeatureMatrix::parse(&m.to_text(), "rt").unwrap();
        assert_eq!(back.keys, m.keys);
        let bits = |m: &FeatureMatrix| m.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }
}

pub fn dataset_json(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(ds) = Dataset::from_json(t, "fuzz") {
        assert_eq!(Dataset::from_json(&ds.to_json(), "rt").unwrap(), ds);
    }
}

pub fn split_json(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(m) = SplitManifest::from_json(t, "fuzz") {
        assert_eq!(SplitManifest::from_json(&m.to_json(), "rt").unwrap(), m);
    }
}

pub fn graph_json(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(g) = ConceptGraph::from_json(t, "fuzz") {
        assert_eq!(ConceptGraph::from_json(&g.to_json(), "rt").unwrap(), g);
        // Adjacency rows are probability vectors.
        let adj = g.adjacency();
        for i in 0..g.num_nodes() {
            let s: f64 = adj.row(i).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

pub fn checkpoint(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(c) = Checkpoint::parse(t) {
        assert_eq!(Checkpoint::parse(&c.to_text()).unwrap(), c);
    }
}

pub fn train_config(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(c) = TrainConfig::from_toml(t, "fuzz") {
        assert_eq!(TrainConfig::from_toml(&c.to_toml().unwrap(), "rt").unwrap(), c);
    }
}

pub fn synth_config(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(c) = SynthConfig::from_toml(t, "fuzz") {
        assert_eq!(SynthConfig::from_toml(&c.to_toml().unwrap(), "rt").unwrap(), c);
    }
}

pub fn llm_fixture(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let _ = FixtureLlm::parse(t, "fuzz");
}

pub fn vote(data: &[u8]) {
    let Some(t) = text(data) else { return };
    // Only the first word counts.
    let first = t.split_whitespace().next().unwrap_or("");
    assert_eq!(parse_vote(t), parse_vote(first));
}
