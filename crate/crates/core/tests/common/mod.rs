#![allow(dead_code)]

use transkt_core::data::{split, DatasetSplit};
use transkt_core::semantics::{encode_nodes, FeatureMatrix, HashEncoder};
use transkt_core::synth::{generate, SynthConfig, SynthOutput};

pub struct Setup {
    pub synth: SynthOutput,
    pub split: DatasetSplit,
    pub features: FeatureMatrix,
}

/// Synthetic data, an 80/10/10 learner split, and hash features of the
/// node texts, all from `seed`.
pub fn synth_setup(config: &SynthConfig, dim: usize, seed: u64) -> Setup {
    let synth = generate(config).expect("valid synth config");
    let split = split(&synth.dataset, 0.8, 0.1, seed).expect("split");
    let encoder = HashEncoder::new(dim, seed).expect("encoder");
    let features = encode_nodes(&encoder, &synth.node_texts).expect("features");
    Setup {
        synth,
        split,
        features,
    }
}
