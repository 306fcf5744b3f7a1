use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::domain::Channel;
use crate::dqn::{QTable, N_STATES};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::sequence::SeqModelConfig;
use crate::svm::{train_with_config, SvmConfig};

const RAW_DIM: usize = 8;

/// Low risk approves, medium escalates, high rejects.
fn bucket_policy() -> Policy {
    let mut q = QTable::default();
    for i in 0..N_STATES {
        let s = ComplianceState::from_index(i);
        let best = match s.risk {
            RiskBucket::Low => Action::AutoApprove,
            RiskBucket::Med => Action::Escalate,
            RiskBucket::High => Action::Reject,
        };
        q.values[i][best.index()] = 1.0;
    }
    Policy { q }
}

fn bundle() -> ModelBundle {
    let mut rng = SplitMix64::new(11);
    let rows: Vec<Vec<f64>> =
        (0..60).map(|_| (0..RAW_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let features = FeaturePipeline::fit(&Matrix::from_rows(&rows).unwrap(), 4).unwrap();
    let projected: Vec<Vec<f64>> = rows.iter().map(|r| features.transform(r).unwrap()).collect();
    let svm = train_with_config(&Matrix::from_rows(&projected).unwrap(), &SvmConfig::default()).unwrap();
    let mut cfg = SeqModelConfig::new(STEP_DIM);
    cfg.conv_channels = [4, 4, 4];
    cfg.lstm_hidden = [4, 4];
    ModelBundle {
        features: Some(features),
        svm: Some(svm),
        sequence: Some(SequenceModel::new(cfg)),
        doc: None,
        policy: Some(bucket_policy()),
    }
}

fn event(i: usize, amount: f64, region: &str) -> Event {
    let mut rng = SplitMix64::new(i as u64);
    Event {
        id: format!("e{i}"),
        timestamp: 1_000 * i as i64,
        account: format!("acct-{}", i % 7),
        amount,
        channel: Channel::ALL[i % 3],
        region: region.into(),
        features: Some((0..RAW_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
        doc_text: None,
    }
}

fn engine() -> Engine {
    let mut e = Engine::in_memory(EngineConfig::default()).unwrap();
    e.set_models(bundle()).unwrap();
    e.load_rules(crate::rules::DEMO_RULES).unwrap();
    e
}

#[test]
fn micro_payment_short_circuits_on_rules() {
    let mut e = Engine::in_memory(EngineConfig::default()).unwrap();
    e.load_rules(crate::rules::DEMO_RULES).unwrap();
    // No models loaded: a rule decision must not need them.
    let case = e.ingest(event(1, 80.0, "domestic")).unwrap();
    assert_eq!(case.status, CaseStatus::AutoApproved);
    assert_eq!(case.decided_by, Some(DecisionSource::Rules));
    let (_, trace) = e.case("e1").unwrap();
    assert_eq!(trace.unwrap().matched_rule.as_deref(), Some("MICRO-01"));
    assert_eq!(trace.unwrap().svm_score, None);
}

#[test]
fn duplicate_event_leaves_store_unchanged() {
    let mut e = engine();
    e.ingest(event(1, 80.0, "domestic")).unwrap();
    let before = e.state_hash();
    assert!(matches!(e.ingest(event(1, 80.0, "domestic")), Err(EngineError::DuplicateEvent(_))));
    assert_eq!(e.state_hash(), before);
}

#[test]
fn unmatched_event_without_models_is_parked_then_rescored() {
    let mut e = Engine::in_memory(EngineConfig::default()).unwrap();
    e.load_rules(crate::rules::DEMO_RULES).unwrap();
    let case = e.ingest(event(2, 30_000.0, "domestic")).unwrap();
    assert_eq!(case.status, CaseStatus::PendingScore);
    assert_eq!(e.state().parked.len(), 1);
    assert_eq!(e.rescore_parked().unwrap(), 0);
    e.set_models(bundle()).unwrap();
    assert_eq!(e.rescore_parked().unwrap(), 1);
    assert!(e.state().parked.is_empty());
    assert_ne!(e.case("e2").unwrap().0.status, CaseStatus::PendingScore);
    // Rescoring does not count the event in a second window.
    assert_eq!(e.state().windows.accepted(), 1);
    let replayed = replay(&e.wal_records().unwrap(), e.config()).unwrap();
    assert_eq!(replayed.hash(), e.state_hash());
}

#[test]
fn escalate_rule_queues_and_verdict_resolves() {
    let mut e = engine();
    let case = e.ingest(event(3, 50_000.0, "offshore")).unwrap();
    assert_eq!(case.status, CaseStatus::PendingReview);
    assert_eq!(e.cases(Some(CaseStatus::PendingReview), 10).len(), 1);
    let out = e.submit_verdict("e3", Decision::Approve, "rev-1", 99_000).unwrap();
    assert_eq!(out.status, CaseStatus::ResolvedApproved);
    assert!(e.state().queue.is_empty());
    assert_eq!(e.labels().len(), 1);
    assert_eq!(e.export_labels().lines().count(), 1);
    assert!(matches!(e.submit_verdict("e3", Decision::Reject, "rev-1", 99_500), Err(EngineError::AlreadyResolved(_))));
    assert!(matches!(e.submit_verdict("nope", Decision::Reject, "rev-1", 0), Err(EngineError::UnknownCase(_))));
    assert!(matches!(
        e.submit_verdict("e3", Decision::Reject, "", 0),
        Err(EngineError::AlreadyResolved(_))
    ));
}

#[test]
fn verdict_on_auto_case_is_already_resolved() {
    let mut e = engine();
    e.ingest(event(4, 50.0, "domestic")).unwrap();
    assert!(matches!(e.submit_verdict("e4", Decision::Approve, "rev", 1), Err(EngineError::AlreadyResolved(_))));
}

#[test]
fn model_path_uses_policy_and_conserves_counts() {
    let mut e = engine();
    for i in 0..200 {
        let amount = [30_000.0, 80.0, 9_700.0, 45_000.0][i % 4];
        e.ingest(event(100 + i, amount, ["domestic", "us", "offshore"][i % 3])).unwrap();
    }
    let m = e.metrics();
    assert_eq!(m.total_cases, 200);
    assert_eq!(m.by_status.values().sum::<u64>(), 200);
    assert!(m.model_auto_decisions + m.by_status["pending_review"] > 0);
    let recount_auto = e
        .state()
        .cases
        .values()
        .filter(|c| matches!(c.status, CaseStatus::AutoApproved | CaseStatus::AutoRejected))
        .count() as u64;
    assert_eq!(m.rule_auto_decisions + m.model_auto_decisions, recount_auto);
    let recount_rules = e.state().traces.values().filter(|t| t.matched_rule.is_some()).count() as u64;
    assert_eq!(m.rule_matched, recount_rules);
    assert_eq!(e.latency().count(), 200);
    for (id, t) in &e.state().traces {
        if t.dqn_action.is_some() {
            let c = &e.state().cases[id];
            let s = ComplianceState::parse_key(t.state.as_deref().unwrap()).unwrap();
            assert_eq!(s.risk, RiskBucket::from_score(c.risk_score));
        }
    }
}

#[test]
fn fresh_engine_metrics_are_zero() {
    let e = Engine::in_memory(EngineConfig::default()).unwrap();
    let m = e.metrics();
    assert_eq!((m.total_cases, m.ingested_total, m.queue_length, m.labels), (0, 0, 0, 0));
    assert_eq!(m.rule_coverage, 0.0);
    assert!(m.latency.is_none());
    let empty = replay(&[], e.config()).unwrap();
    assert_eq!(empty.hash(), e.state_hash());
}

#[test]
fn replay_matches_live_and_rejects_damage() {
    let mut e = engine();
    for i in 0..60 {
        e.ingest(event(i, [80.0, 30_000.0, 12_000.0][i % 3], ["domestic", "offshore"][i % 2])).unwrap();
    }
    let pending: Vec<String> = e.state().queue.iter().take(3).cloned().collect();
    for id in &pending {
        e.submit_verdict(id, Decision::Reject, "rev", 1_000_000).unwrap();
    }
    let records = e.wal_records().unwrap();
    let state = replay(&records, e.config()).unwrap();
    assert_eq!(state.hash(), e.state_hash());

    let mut gapped = records.clone();
    gapped.remove(4);
    assert!(matches!(replay(&gapped, e.config()), Err(EngineError::GapDetected(5))));
    let mut bad = records;
    bad[9].payload["amount"] = json!(1.0);
    assert!(matches!(replay(&bad, e.config()), Err(EngineError::CorruptRecord(10))));
}

#[test]
fn file_backed_engine_recovers_through_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = EngineConfig { snapshot_every: 25, ..EngineConfig::default() };
    let hash = {
        let mut e = Engine::open(dir.path(), config.clone()).unwrap();
        e.set_models(bundle()).unwrap();
        e.load_rules(crate::rules::DEMO_RULES).unwrap();
        for i in 0..40 {
            e.ingest(event(i, [80.0, 30_000.0][i % 2], "domestic")).unwrap();
        }
        e.state_hash()
    };
    assert!(dir.path().join(SNAPSHOT_FILE).exists());
    let reopened = Engine::open(dir.path(), config.clone()).unwrap();
    assert_eq!(reopened.state_hash(), hash);
    assert_eq!(reopened.rules().len(), parse_rules(crate::rules::DEMO_RULES).unwrap().len());
    let full = replay(&wal::read_wal(&dir.path().join(wal::WAL_FILE)).unwrap(), &config).unwrap();
    assert_eq!(full.hash(), hash);
}

#[test]
fn sequence_input_is_padded_to_history_length() {
    let e = engine();
    let ev = event(5, 1_000.0, "domestic");
    let seq = e.sequence_input(&ev, e.models().sequence.as_ref().unwrap());
    assert_eq!(seq.len(), 20);
    assert_eq!(seq[19], step_features(&ev));
    assert!(seq[..19].iter().all(|s| s.iter().all(|&v| v == 0.0)));
}

#[test]
fn model_kind_round_trip() {
    for k in ModelKind::ALL {
        assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
    }
    assert!("bert".parse::<ModelKind>().is_err());
}
