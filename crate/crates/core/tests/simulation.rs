use std::path::PathBuf;

use complyflow::domain::CaseStatus;
use complyflow::engine::{replay, Engine, EngineConfig};
use complyflow::rules::DEMO_RULES;
use complyflow::sim::report::{write_report, METRICS_FILE, TABLES_FILE, MANIFEST_FILE};
use complyflow::sim::training::TrainOptions;
use complyflow::sim::{generate_workload, preset, simulate, Scenario, SimulateOptions};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn scenario(count: usize) -> Scenario {
    let mut s = preset("securities-firm").unwrap();
    s.count = count;
    s
}

fn quick() -> SimulateOptions {
    SimulateOptions { train: TrainOptions::quick(), ..SimulateOptions::default() }
}

/// Set `UPDATE_GOLDEN=1` to rewrite the file after an intended generator change.
#[test]
fn workload_matches_golden_digest() {
    let w = generate_workload(&scenario(1000)).unwrap();
    let mut bytes = Vec::new();
    w.write_events(&mut bytes).unwrap();
    let mut labels = Vec::new();
    w.write_labels(&mut labels).unwrap();
    let got = json!({
        "scenario": "securities-firm",
        "count": 1000,
        "positives": w.positives(),
        "events_sha256": hex::encode(Sha256::digest(&bytes)),
        "labels_sha256": hex::encode(Sha256::digest(&labels)),
        "first_event": w.events[0].id,
        "last_timestamp": w.events[999].timestamp,
    });
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/securities-firm-1000.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(got, want);
    // 52% violations within sampling error of a 1000-event draw.
    let rate = w.positives() as f64 / 1000.0;
    assert!((rate - 0.52).abs() < 0.05, "violation rate {rate}");
}

#[test]
fn seeded_session_replays_to_the_same_state() {
    let run = simulate(&scenario(1000), &quick()).unwrap();
    let mut engine = run.engine;
    let records = engine.wal_records().unwrap();
    let replayed = replay(&records, engine.config()).unwrap();
    assert_eq!(replayed.hash(), engine.state_hash());
    assert_eq!(replayed, *engine.state());

    // Conservation: every event has exactly one case, nothing left in review.
    let m = engine.metrics();
    assert_eq!(m.ingested_total, 1000);
    assert_eq!(m.total_cases, 1000);
    assert_eq!(m.by_status.values().sum::<u64>(), 1000);
    assert_eq!(m.queue_length, 0);
    assert_eq!(m.parked, 0);
    assert_eq!(m.by_status[CaseStatus::PendingReview.as_str()], 0);
    assert_eq!(m.labels, m.verdicts_total);
    assert!(run.ingest_errors.is_empty(), "{:?}", run.ingest_errors);
}

#[test]
fn file_backed_engine_recovers_from_snapshot_and_tail() {
    let s = scenario(600);
    let w = generate_workload(&s).unwrap();
    let run = simulate(&s, &quick()).unwrap();
    let models = run.engine.models().clone();
    let dir = tempfile::tempdir().unwrap();
    let config = EngineConfig { snapshot_every: 250, ..EngineConfig::default() };
    let hash = {
        let mut e = Engine::open(dir.path(), config.clone()).unwrap();
        e.load_rules(DEMO_RULES).unwrap();
        e.set_models(models.clone()).unwrap();
        for ev in &w.events {
            e.ingest(ev.clone()).unwrap();
        }
        let pending: Vec<String> = e.cases(Some(CaseStatus::PendingReview), 20).iter().map(|c| c.case_id.clone()).collect();
        for id in &pending {
            e.submit_verdict(id, complyflow::domain::Decision::Approve, "r1", 0).unwrap();
        }
        e.state_hash()
    };
    assert!(dir.path().join(complyflow::engine::SNAPSHOT_FILE).exists());
    let mut reopened = Engine::open(dir.path(), config.clone()).unwrap();
    assert_eq!(reopened.state_hash(), hash);
    assert_eq!(reopened.rules().len(), complyflow::rules::parse_rules(DEMO_RULES).unwrap().len());
    let full = replay(&reopened.wal_records().unwrap(), &config).unwrap();
    assert_eq!(full.hash(), hash);
    // The reopened engine keeps appending where the old one stopped.
    reopened.set_models(models).unwrap();
    let mut extra = w.events[0].clone();
    extra.id = "late-arrival".into();
    reopened.ingest(extra).unwrap();
    assert_eq!(replay(&reopened.wal_records().unwrap(), &config).unwrap().hash(), reopened.state_hash());
}

#[test]
fn seeded_reports_are_byte_identical() {
    let s = scenario(800);
    let a = simulate(&s, &quick()).unwrap().report().unwrap();
    let b = simulate(&s, &quick()).unwrap().report().unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.manifest, b.manifest);

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_report(da.path(), &a).unwrap();
    write_report(db.path(), &b).unwrap();
    for f in [METRICS_FILE, TABLES_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap(), "{f}");
    }
    let manifest: Value = serde_json::from_str(&a.manifest).unwrap();
    assert_eq!(manifest["seed"], json!(s.seed));
    assert_eq!(manifest["event_count"], json!(800));
}
