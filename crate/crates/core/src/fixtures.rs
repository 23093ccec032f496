//! Pinned regression corpus: each fixture names a report kind and a
//! configuration, and records the SHA-256 of the report bytes it must
//! regenerate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concentration::{check_tape_concentration, parse_rho};
use crate::error::{Error, Result};
use crate::harness::{
    blowup_bench, compare_experiments, decider_accuracy, mc_estimate, params_report, run_lemma_suite, to_csv,
    to_jsonl, AttemptEvent, ConcentrationParams, ExperimentConfig, DEFAULT_CONCENTRATION,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Params,
    Lemmas,
    Concentration,
    Experiment,
    Estimate,
    Blowup,
    Decide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub name: String,
    pub kind: ReportKind,
    /// `key = value` lines applied on top of the default configuration.
    pub config: Vec<String>,
    pub seed: u64,
    pub expected_digest: String,
    pub note: String,
}

impl FixtureRecord {
    pub fn config_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(&self.kind, &self.config, self.seed)).expect("serializable"));
        hex::encode(h.finalize())
    }

    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv(&self.config.join("\n"))?;
        cfg.seed = self.seed;
        Ok(cfg.effective())
    }

    fn lookup(&self, key: &str) -> Option<&str> {
        self.config.iter().find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    /// The configuration lines that are experiment keys, without the
    /// report-specific options such as `event` or `per-class`.
    fn experiment_lines(&self) -> Vec<String> {
        const OPTIONS: &[&str] = &["event", "per-class", "k-max", "runs", "cap-n", "rho", "conc-m", "conc-k"];
        self.config
            .iter()
            .filter(|line| !line.split_once('=').is_some_and(|(k, _)| OPTIONS.contains(&k.trim())))
            .cloned()
            .collect()
    }
}

fn opt<T: std::str::FromStr>(rec: &FixtureRecord, key: &str, default: T) -> Result<T> {
    match rec.lookup(key) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::config(format!("fixture option `{key}` has bad value `{v}`"))),
        None => Ok(default),
    }
}

/// Regenerates the report bytes for a fixture.
pub fn render(rec: &FixtureRecord) -> Result<String> {
    let mut base = rec.clone();
    base.config = rec.experiment_lines();
    let cfg = base.experiment_config()?;
    match rec.kind {
        ReportKind::Params => to_jsonl(&[params_report(cfg.k, opt(rec, "cap-n", 1000u64)?)?]),
        ReportKind::Lemmas => {
            let mut report = run_lemma_suite(&cfg, DEFAULT_CONCENTRATION)?;
            let trees = std::mem::take(&mut report.trees);
            let mut out = to_jsonl(&[report])?;
            out.push_str(&to_jsonl(&trees)?);
            Ok(out)
        }
        ReportKind::Concentration => {
            let p = ConcentrationParams {
                m: opt(rec, "conc-m", DEFAULT_CONCENTRATION.m)?,
                k: opt(rec, "conc-k", DEFAULT_CONCENTRATION.k)?,
                rho: rec.lookup("rho").map(parse_rho).transpose()?.unwrap_or(DEFAULT_CONCENTRATION.rho),
                ..DEFAULT_CONCENTRATION
            };
            to_jsonl(&[check_tape_concentration(p.m, p.rho, p.k)?.summary(p.threshold)])
        }
        ReportKind::Experiment => to_jsonl(&[compare_experiments(&cfg, 0.01)?]),
        ReportKind::Estimate => {
            let event = AttemptEvent::parse(rec.lookup("event").unwrap_or("succeed"))?;
            to_jsonl(&[mc_estimate(event, &cfg)?])
        }
        ReportKind::Blowup => to_csv(&blowup_bench(
            1..=opt(rec, "k-max", 3usize)?,
            cfg.m,
            &cfg.simulator,
            cfg.v,
            opt(rec, "runs", 100u64)?,
            cfg.seed,
        )?),
        ReportKind::Decide => to_jsonl(&[decider_accuracy(&cfg, opt(rec, "per-class", 5u64)?)?]),
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_manifest(dir: &Path) -> Result<Vec<FixtureRecord>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Fixture {
        name: MANIFEST.into(),
        reason: format!("unreadable manifest: {e}"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureResult {
    pub name: String,
    pub pass: bool,
    pub actual_digest: Option<String>,
    pub reason: Option<String>,
}

/// Reruns one fixture and compares its digest; also checks the stored
/// report file `<name>.out`, when present, against the same digest.
pub fn verify_one(dir: &Path, rec: &FixtureRecord) -> FixtureResult {
    let fail = |reason: String, actual: Option<String>| FixtureResult {
        name: rec.name.clone(),
        pass: false,
        actual_digest: actual,
        reason: Some(reason),
    };
    let body = match render(rec) {
        Ok(b) => b,
        Err(e) => return fail(format!("regeneration failed: {e}"), None),
    };
    let actual = digest(body.as_bytes());
    if actual != rec.expected_digest {
        return fail(format!("digest mismatch: expected {}", rec.expected_digest), Some(actual));
    }
    let stored = dir.join(format!("{}.out", rec.name));
    if stored.exists() {
        match std::fs::read(&stored) {
            Ok(bytes) if digest(&bytes) == rec.expected_digest => {}
            Ok(_) => return fail(format!("stored report {} does not match its digest", stored.display()), Some(actual)),
            Err(e) => return fail(format!("cannot read {}: {e}", stored.display()), Some(actual)),
        }
    }
    FixtureResult {
        name: rec.name.clone(),
        pass: true,
        actual_digest: Some(actual),
        reason: None,
    }
}

pub fn verify_fixtures(dir: &Path) -> Result<Vec<FixtureResult>> {
    Ok(load_manifest(dir)?.iter().map(|rec| verify_one(dir, rec)).collect())
}

/// Regenerates every report, rewrites the stored outputs and the digests.
pub fn pin_fixtures(dir: &Path) -> Result<Vec<FixtureRecord>> {
    let mut records = load_manifest(dir)?;
    for rec in &mut records {
        let body = render(rec)?;
        rec.expected_digest = digest(body.as_bytes());
        std::fs::write(dir.join(format!("{}.out", rec.name)), body)?;
    }
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(records)
}
