//! Committed fixtures match what the generator example produces.

#[path = "../examples/build_fixtures.rs"]
#[allow(dead_code)]
mod build_fixtures;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn snapshot(root: &Path, sub: &str) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(root.join(sub)).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(format!("{sub}/{name}"), fs::read(&path).unwrap());
    }
    out
}

#[test]
fn generated_fixtures_are_up_to_date() {
    let fresh = tempfile::tempdir().unwrap();
    fs::create_dir_all(fresh.path().join("table1")).unwrap();
    fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/table1/reference.json"),
        fresh.path().join("table1/reference.json"),
    )
    .unwrap();
    let seed = build_fixtures::build(fresh.path());
    assert_eq!(seed, 2040);

    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for sub in ["corpus", "cache", "table1"] {
        let (want, got) = (snapshot(&committed, sub), snapshot(fresh.path(), sub));
        assert_eq!(want.keys().collect::<Vec<_>>(), got.keys().collect::<Vec<_>>(), "{sub}");
        for (name, bytes) in &want {
            assert!(bytes == &got[name], "{name} is stale; rerun `cargo run --example build_fixtures`");
        }
    }
}

#[test]
fn corpus_has_the_named_responses_and_enough_per_class() {
    use autofeedback::model::ScoreLevel;
    let corpus = build_fixtures::corpus();
    assert_eq!(corpus.len(), 845);
    assert!(corpus.count(ScoreLevel::Beginning) >= 135);
    assert!(corpus.count(ScoreLevel::Proficient) >= 135);
    for (id, text) in build_fixtures::NAMED {
        let r = corpus.responses().iter().find(|r| r.id == id).unwrap();
        assert_eq!(r.text, text);
        assert_eq!(r.score_level, ScoreLevel::Beginning);
    }
}
