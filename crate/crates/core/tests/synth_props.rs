mod common;

use common::synth_setup;
use proptest::prelude::*;
use transkt_core::data::Course;
use transkt_core::synth::{generate, oracle_auc_bound_truncated, response_probability, SynthConfig};
use transkt_core::trainer::{TrainConfig, TrainData, Trainer};

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn full_transfer_correlates_accuracy_across_courses() {
    let config = SynthConfig {
        num_learners: 500,
        tau: 1.0,
        seed: 3,
        ..Default::default()
    };
    let out = generate(&config).unwrap();
    let (mut ax, mut ay) = (Vec::new(), Vec::new());
    for t in out.dataset.learners.values() {
        let acc = |c: Course| {
            let steps: Vec<_> = t.merged.iter().filter(|s| s.course == c).collect();
            steps.iter().map(|s| f64::from(s.response)).sum::<f64>() / steps.len() as f64
        };
        ax.push(acc(Course::X));
        ay.push(acc(Course::Y));
    }
    assert_eq!(ax.len(), 500);
    let r = pearson(&ax, &ay);
    assert!(r > 0.5, "correlation {r}");
}

#[test]
fn no_transfer_leaves_courses_uncorrelated() {
    let config = SynthConfig {
        num_learners: 500,
        tau: 0.0,
        seed: 3,
        ..Default::default()
    };
    let out = generate(&config).unwrap();
    let mut pairs = (Vec::new(), Vec::new());
    for lt in out.truth.learners.values() {
        // Shared skills carry no weight, so compare the private blocks.
        let k = config.num_skills;
        pairs.0.push(lt.initial_skills[k..2 * k].iter().sum::<f64>());
        pairs.1.push(lt.initial_skills[2 * k..].iter().sum::<f64>());
    }
    // Independent draws: |r| stays within ~4 standard errors of zero.
    assert!(pearson(&pairs.0, &pairs.1).abs() < 4.0 / (500f64).sqrt());
}

proptest! {
    #[test]
    fn probability_rises_with_skill_and_falls_with_difficulty(
        loading in prop::collection::vec(0.0f64..1.0, 1..6),
        skills in prop::collection::vec(-3.0f64..3.0, 6),
        i in 0usize..6,
        delta in 0.01f64..2.0,
        difficulty in -3.0f64..3.0,
        a in 0.1f64..4.0,
    ) {
        let skills = &skills[..loading.len()];
        let i = i % loading.len();
        let p = response_probability(a, &loading, skills, difficulty);
        prop_assert!(p > 0.0 && p < 1.0);
        let mut up = skills.to_vec();
        up[i] += delta;
        prop_assert!(response_probability(a, &loading, &up, difficulty) >= p);
        prop_assert!(response_probability(a, &loading, skills, difficulty + delta) < p);
        let z = a * (loading.iter().zip(skills).map(|(l, s)| l * s).sum::<f64>() - difficulty);
        prop_assert!((p - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
    }

    #[test]
    fn config_toml_round_trips(
        learners in 1usize..1000,
        tau in 0.0f64..=1.0,
        density in 0.0f64..=1.0,
        drift in 0.0f64..1.0,
        min_len in 2usize..50,
        extra in 0usize..100,
        seed in 0..=i64::MAX as u64,
    ) {
        let config = SynthConfig {
            num_learners: learners,
            tau,
            density,
            drift,
            min_len,
            max_len: min_len + extra,
            seed,
            ..Default::default()
        };
        let back = SynthConfig::from_toml(&config.to_toml().unwrap(), "rt").unwrap();
        prop_assert_eq!(back, config);
    }
}

#[test]
fn trained_model_does_not_beat_the_oracle() {
    let synth = SynthConfig {
        num_learners: 120,
        questions_per_course: 16,
        concepts_per_course: 4,
        num_skills: 2,
        min_len: 10,
        max_len: 30,
        seed: 8,
        ..Default::default()
    };
    let setup = synth_setup(&synth, 16, 8);
    let cfg = TrainConfig {
        dim: 16,
        batch_size: 8,
        max_epochs: 5,
        seed: 8,
        ..Default::default()
    };
    let data = TrainData {
        split: &setup.split,
        graph: &setup.synth.graph,
        features: &setup.features,
    };
    let trainer = Trainer::new(&cfg, data).unwrap();
    let outcome = trainer.train().unwrap();
    let test = trainer.evaluate(&outcome.model, &setup.split.test).unwrap();
    let oracle = oracle_auc_bound_truncated(&setup.split.test, &setup.synth.truth, Some(cfg.max_seq_len)).unwrap();
    assert!(test.x.auc.0.unwrap() <= oracle.x.0.unwrap());
    assert!(test.y.auc.0.unwrap() <= oracle.y.0.unwrap());
}

#[test]
fn seeds_beyond_the_toml_range_are_rejected() {
    let config = SynthConfig {
        seed: u64::MAX,
        ..Default::default()
    };
    assert!(matches!(config.validate(), Err(transkt_core::Error::Config(_))));
    assert!(config.to_toml().is_err());
}
