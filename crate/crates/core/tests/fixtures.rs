use std::path::{Path, PathBuf};

use czk_core::fixtures::{digest, load_manifest, render, verify_fixtures, verify_one, ReportKind, MANIFEST};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn copy_corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(corpus()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

#[test]
fn pinned_corpus_regenerates_bit_exactly() {
    let results = verify_fixtures(&corpus()).unwrap();
    assert!(!results.is_empty());
    for r in &results {
        assert!(r.pass, "{}: {:?}", r.name, r.reason);
    }
}

#[test]
fn corpus_covers_every_report_kind() {
    let records = load_manifest(&corpus()).unwrap();
    for kind in [
        ReportKind::Params,
        ReportKind::Lemmas,
        ReportKind::Concentration,
        ReportKind::Experiment,
        ReportKind::Estimate,
        ReportKind::Blowup,
        ReportKind::Decide,
    ] {
        assert!(records.iter().any(|r| r.kind == kind), "{kind:?}");
    }
    let mut digests: Vec<String> = records.iter().map(|r| r.config_digest()).collect();
    digests.sort();
    digests.dedup();
    assert_eq!(digests.len(), records.len(), "two fixtures share a configuration");
}

#[test]
fn corrupted_report_file_is_a_named_failure() {
    let dir = copy_corpus();
    let victim = "params-k8-n1000";
    let path = dir.path().join(format!("{victim}.out"));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let results = verify_fixtures(dir.path()).unwrap();
    let bad: Vec<_> = results.iter().filter(|r| !r.pass).collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].name, victim);
    assert!(bad[0].reason.as_deref().unwrap().contains("does not match"));
}

#[test]
fn wrong_digest_is_a_named_failure() {
    let dir = copy_corpus();
    let mut records = load_manifest(dir.path()).unwrap();
    records[0].expected_digest = digest(b"something else");
    let r = verify_one(dir.path(), &records[0]);
    assert!(!r.pass);
    assert_eq!(r.name, records[0].name);
    assert!(r.reason.unwrap().contains("digest mismatch"));
}

#[test]
fn changed_seed_changes_the_report() {
    let records = load_manifest(&corpus()).unwrap();
    let mut rec = records.iter().find(|r| r.kind == ReportKind::Lemmas).unwrap().clone();
    let before = render(&rec).unwrap();
    rec.seed += 1;
    assert_ne!(render(&rec).unwrap(), before);
}

#[test]
fn unreadable_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(verify_fixtures(dir.path()).is_err());
    std::fs::write(dir.path().join(MANIFEST), "not json").unwrap();
    let err = verify_fixtures(dir.path()).unwrap_err();
    assert!(err.to_string().contains(MANIFEST));
}
