//! Runs the checked-in fuzz corpus through the fuzz checks on stable.

#[path = "../../../fuzz/src/lib.rs"]
mod checks;

use std::path::{Path, PathBuf};

use proptest::prelude::*;

fn corpus() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "fuzz", "corpus"].iter().collect()
}

fn seeds(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    out.sort();
    out
}

#[derive(Clone, Debug)]
enum Edit {
    Flip(usize, u8),
    Insert(usize, u8),
    Delete(usize),
    Truncate(usize),
    Duplicate(usize, usize),
}

fn edit() -> impl Strategy<Value = Edit> {
    // Printable bytes and a few structural ones dominate real-world damage.
    let byte = prop_oneof![b' '..=b'~', Just(b'\n'), Just(b'\t'), Just(b','), Just(b'"'), any::<u8>()];
    prop_oneof![
        (any::<usize>(), byte.clone()).prop_map(|(i, b)| Edit::Flip(i, b)),
        (any::<usize>(), byte).prop_map(|(i, b)| Edit::Insert(i, b)),
        any::<usize>().prop_map(Edit::Delete),
        any::<usize>().prop_map(Edit::Truncate),
        (any::<usize>(), 1usize..40).prop_map(|(i, n)| Edit::Duplicate(i, n)),
    ]
}

fn apply(data: &mut Vec<u8>, e: &Edit) {
    let n = data.len().max(1);
    match *e {
        Edit::Flip(i, b) if !data.is_empty() => data[i % n] = b,
        Edit::Insert(i, b) => data.insert(i % (data.len() + 1), b),
        Edit::Delete(i) if !data.is_empty() => {
            data.remove(i % n);
        }
        Edit::Truncate(i) => data.truncate(i % (data.len() + 1)),
        Edit::Duplicate(i, len) if !data.is_empty() => {
            let start = i % n;
            let chunk: Vec<u8> = data[start..(start + len).min(data.len())].to_vec();
            data.splice(start..start, chunk);
        }
        _ => {}
    }
}

#[test]
fn every_fuzz_seed_passes_its_check() {
    for (name, check) in checks::TARGETS {
        let seeds = seeds(&corpus().join(name));
        assert!(!seeds.is_empty(), "no seeds for {name}");
        for seed in seeds {
            let data = std::fs::read(&seed).unwrap();
            if std::panic::catch_unwind(|| check(&data)).is_err() {
                panic!("{} failed its check", seed.display());
            }
        }
    }
}

#[test]
fn every_target_has_a_binary() {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fuzz", "fuzz_targets"].iter().collect();
    for (name, _) in checks::TARGETS {
        assert!(dir.join(format!("{name}.rs")).exists(), "missing fuzz target {name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// A small stable stand-in for coverage-guided fuzzing: random edits of
    /// each seed must never break a check.
    #[test]
    fn mutated_seeds_pass_their_checks(target in 0..checks::TARGETS.len(), pick in any::<usize>(), edits in prop::collection::vec(edit(), 1..6)) {
        let (name, check) = checks::TARGETS[target];
        let seeds = seeds(&corpus().join(name));
        let mut data = std::fs::read(&seeds[pick % seeds.len()]).unwrap();
        for e in &edits {
            apply(&mut data, e);
        }
        check(&data);
    }
}
