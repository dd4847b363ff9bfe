use std::collections::{BTreeMap, BTreeSet};

use rxn2mo::corpus::{
    generate_eval_sets, generate_training_corpus, record_seed, render_dataset, write_dataset, CorpusOptions, Manifest,
};
use rxn2mo::physics::Classification;
use rxn2mo::scenario::{enumerate_templates, find_template, instantiate_with};
use sha2::{Digest, Sha256};

#[test]
fn training_corpus_shape() {
    let b = generate_training_corpus(11, &CorpusOptions::default()).unwrap();
    assert_eq!(b.len(), 988);
    assert_eq!(b.train.len(), 790);
    assert_eq!(b.valid.len(), 198);
    assert_eq!(b.templates.len(), 26);
    assert_eq!(b.templates.iter().filter(|t| t.1 == Classification::Ode).count(), 24);
    assert_eq!(b.templates.iter().filter(|t| t.1 == Classification::Dae).count(), 2);

    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in &b.train {
        per.entry(&p.template_id).or_default().0 += 1;
    }
    for p in &b.valid {
        per.entry(&p.template_id).or_default().1 += 1;
    }
    assert_eq!(per.len(), 26);
    let mut shapes: Vec<(usize, usize)> = per.values().copied().collect();
    shapes.sort();
    assert_eq!(shapes.iter().filter(|s| **s == (30, 8)).count(), 16);
    assert_eq!(shapes.iter().filter(|s| **s == (31, 7)).count(), 10);

    let keys: BTreeSet<(&str, u64)> = b.train.iter().chain(&b.valid).map(|p| (p.template_id.as_str(), p.seed)).collect();
    assert_eq!(keys.len(), 988, "duplicate (template, seed)");
    assert!(b.train.iter().chain(&b.valid).all(|p| p.answer.is_some()));
}

#[test]
fn records_regenerate_from_template_and_seed() {
    let opts = CorpusOptions::default();
    let b = generate_training_corpus(5, &opts).unwrap();
    for p in b.valid.iter().step_by(17) {
        let t = find_template(&p.template_id).unwrap();
        let s = instantiate_with(&t, p.seed, &opts.sampling).unwrap();
        let again = rxn2mo::codegen::render_pair(&s, &opts.system_message).unwrap();
        assert_eq!(&again, p);
    }
}

#[test]
fn corpus_is_deterministic_and_seed_sensitive() {
    let opts = CorpusOptions::default();
    let (a, ma) = render_dataset(3, &opts).unwrap();
    let (b, mb) = render_dataset(3, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma.digest, mb.digest);
    let (_, mc) = render_dataset(4, &opts).unwrap();
    assert_ne!(ma.digest, mc.digest);
}

#[test]
fn eval_sets_use_fresh_seeds() {
    let opts = CorpusOptions::default();
    let b = generate_training_corpus(9, &opts).unwrap();
    let (repro, extra) = generate_eval_sets(9, &opts).unwrap();
    assert_eq!(repro.len(), 26);
    let ids: Vec<String> = enumerate_templates().into_iter().map(|t| t.id).collect();
    let got: Vec<String> = repro.iter().map(|r| r.pair.template_id.clone()).collect();
    assert_eq!(got, ids);
    let train: BTreeSet<(&str, u64)> = b.train.iter().chain(&b.valid).map(|p| (p.template_id.as_str(), p.seed)).collect();
    for r in &repro {
        assert!(!train.contains(&(r.pair.template_id.as_str(), r.pair.seed)));
        assert!(r.pair.answer.is_some());
    }
    let cases: String = extra.iter().filter_map(|r| r.case).collect();
    assert_eq!(cases, "abcd");
    let d = &extra[3];
    assert!(d.pair.answer.is_none());
    assert_eq!(d.omitted_parameters, ["UA", "V"]);
    assert!(extra[..3].iter().all(|r| r.pair.answer.is_some() && r.omitted_parameters.is_empty()));
}

#[test]
fn dataset_files_match_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), 2, &CorpusOptions::default()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let back: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    let mut joined = String::new();
    for (name, digest) in &m.files {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), digest, "{name}");
        joined.push_str(&format!("{name}:{digest}\n"));
    }
    assert_eq!(hex::encode(Sha256::digest(joined.as_bytes())), m.digest);
    let lines = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    assert_eq!(lines("train.jsonl"), 790);
    assert_eq!(lines("valid.chat.jsonl"), 198);
    assert_eq!(lines("eval_repro.jsonl"), 26);
    assert_eq!(lines("eval_extra.jsonl"), 4);
    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.'))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn record_seeds_are_sha256_prefixes() {
    let d = Sha256::digest(b"42:t01:7");
    assert_eq!(record_seed(42, "t01", 7), u64::from_le_bytes(d[..8].try_into().unwrap()));
}
