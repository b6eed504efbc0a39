mod common;

use proptest::prelude::*;
use common::{synth_setup, Setup};
use transkt_core::model::TransKt;
use transkt_core::synth::SynthConfig;
use transkt_core::trainer::{accuracy, auc, evaluate_model, TrainConfig, TrainData, Trainer};
use transkt_core::Error;

fn tiny_setup() -> Setup {
    let synth = SynthConfig {
        num_learners: 30,
        questions_per_course: 12,
        concepts_per_course: 3,
        num_skills: 2,
        min_len: 6,
        max_len: 16,
        seed: 21,
        ..Default::default()
    };
    synth_setup(&synth, 8, 21)
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        batch_size: 4,
        max_epochs: 3,
        seed: 21,
        ..Default::default()
    }
}

fn trainer<'a>(cfg: &'a TrainConfig, setup: &'a Setup) -> Trainer<'a> {
    let data = TrainData {
        split: &setup.split,
        graph: &setup.synth.graph,
        features: &setup.features,
    };
    Trainer::new(cfg, data).unwrap()
}

/// Scores on a coarse grid so ties are common, labels with both classes.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0u32..50, 0u8..2), 2..200)
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 50.0, l)).unzip())
        .prop_filter("both classes", |(_, l): &(Vec<f64>, Vec<u8>)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auc_is_invariant_under_increasing_maps((scores, labels) in scored_labels()) {
        let base = auc(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0 * s - 7.0).collect();
        let logit: Vec<f64> = scores.iter().map(|s| ((s + 0.01) / (1.02 - s)).ln()).collect();
        prop_assert_eq!(auc(&cubed, &labels).unwrap(), base);
        prop_assert_eq!(auc(&logit, &labels).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn reversing_scores_complements_auc((scores, labels) in scored_labels()) {
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&flipped, &labels).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_counts_thresholded_hits((scores, labels) in scored_labels()) {
        let hits = scores.iter().zip(&labels).filter(|(s, l)| (**s >= 0.5) == (**l == 1)).count();
        prop_assert_eq!(accuracy(&scores, &labels), Some(hits as f64 / scores.len() as f64));
    }
}

#[test]
fn single_class_auc_is_undefined() {
    assert!(matches!(auc(&[0.2, 0.9], &[1, 1]), Err(Error::UndefinedAuc)));
    assert!(matches!(auc(&[0.2, 0.9], &[0, 0]), Err(Error::UndefinedAuc)));
    assert_eq!(accuracy(&[], &[]), None);
}

#[test]
fn evaluation_does_not_depend_on_worker_count_or_cohort() {
    let setup = tiny_setup();
    let cfg = tiny_config();
    let t = trainer(&cfg, &setup);
    let model = TransKt::new(cfg.model_config(), 3).unwrap();
    let test = &setup.split.test;
    let one = evaluate_model(&model, &t.adj, &t.features, test, 128, 1).unwrap();
    let many = evaluate_model(&model, &t.adj, &t.features, test, 128, 3).unwrap();
    assert_eq!(one, many);

    // A learner's predictions do not change when other learners are added.
    let enhanced = model.enhanced_features(&t.adj, &t.features).unwrap();
    let (id, triple) = test.learners.iter().next().unwrap();
    let alone = model.predict_sequence(&enhanced, &triple.merged).unwrap();
    let cohort = test.subset(test.learners.keys().chain([id]));
    let again = model.predict_sequence(&enhanced, &cohort.learners[id].merged).unwrap();
    assert_eq!(alone, again);
}

#[test]
fn batch_loss_and_gradients_ignore_learner_order() {
    let setup = tiny_setup();
    let cfg = TrainConfig { dropout: 0.0, ..tiny_config() };
    let t = trainer(&cfg, &setup);
    let model = TransKt::new(cfg.model_config(), 4).unwrap();
    let a = t.run_batch(&model, &[0, 1, 2, 3], 0, true).unwrap();
    let b = t.run_batch(&model, &[3, 1, 0, 2], 0, true).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12 * a.loss.abs().max(1.0));
    for (ga, gb) in a.grads.unwrap().iter().zip(b.grads.unwrap().iter()) {
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn zero_patience_stops_after_one_epoch() {
    let setup = tiny_setup();
    let cfg = TrainConfig { patience: 0, ..tiny_config() };
    let outcome = trainer(&cfg, &setup).train().unwrap();
    assert_eq!(outcome.epochs.len(), 1);
    assert_eq!(outcome.best_epoch, 0);
}

#[test]
fn best_epoch_parameters_are_retained() {
    let setup = tiny_setup();
    let cfg = TrainConfig { max_epochs: 6, patience: 6, ..tiny_config() };
    let t = trainer(&cfg, &setup);
    let outcome = t.train().unwrap();
    let best = outcome
        .epochs
        .iter()
        .map(|e| e.val.mean_auc().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(outcome.best_val.mean_auc().unwrap(), best);
    assert!(outcome.epochs[outcome.best_epoch].improved);
    let mut again = t.evaluate(&outcome.model, &setup.split.val).unwrap();
    again.epoch = outcome.best_epoch;
    again.wall_clock_ms = outcome.best_val.wall_clock_ms;
    assert_eq!(again, outcome.best_val);
    let restored = TransKt::from_checkpoint(&outcome.checkpoint).unwrap();
    for (a, b) in restored.params.iter().zip(outcome.model.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn training_reduces_the_loss() {
    let setup = tiny_setup();
    let cfg = TrainConfig { max_epochs: 8, patience: 8, batch_size: 1, ..tiny_config() };
    let outcome = trainer(&cfg, &setup).train().unwrap();
    let first = outcome.epochs.first().unwrap().train_loss;
    let last = outcome.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}
