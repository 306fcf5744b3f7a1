//! Run the decision engine on disk, resolve some reviews, then recover it
//! from snapshot + WAL and replay the log from scratch.

use complyflow::domain::{CaseStatus, Decision};
use complyflow::engine::{replay, Engine, EngineConfig};
use complyflow::rules::DEMO_RULES;
use complyflow::sim::training::{train_bundle, TrainOptions};
use complyflow::sim::{generate_workload, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = preset("securities-firm")?;
    scenario.count = 1500;
    let workload = generate_workload(&scenario)?;
    let (models, _) = train_bundle(&workload, &TrainOptions::quick())?;

    let dir = tempfile::tempdir()?;
    let config = EngineConfig { snapshot_every: 1000, ..EngineConfig::default() };
    let hash = {
        let mut engine = Engine::open(dir.path(), config.clone())?;
        engine.load_rules(DEMO_RULES)?;
        // The first 100 events arrive before any model is loaded and are parked.
        for e in &workload.events[..100] {
            engine.ingest(e.clone())?;
        }
        println!("parked before models: {}", engine.metrics().parked);
        engine.set_models(models)?;
        println!("rescored: {}", engine.rescore_parked()?);
        for e in &workload.events[100..] {
            engine.ingest(e.clone())?;
        }
        let pending: Vec<String> = engine.cases(Some(CaseStatus::PendingReview), 25).iter().map(|c| c.case_id.clone()).collect();
        for id in &pending {
            engine.submit_verdict(id, Decision::Approve, "analyst-1", 1_700_000_100_000)?;
        }
        let m = engine.metrics();
        println!("cases {}  by status {:?}", m.total_cases, m.by_status);
        println!("rule coverage {:.4}  auto coverage {:.4}", m.rule_coverage, m.auto_coverage);
        engine.state_hash()
    };

    let mut recovered = Engine::open(dir.path(), config.clone())?;
    let replayed = replay(&recovered.wal_records()?, &config)?;
    println!("live      {hash}");
    println!("recovered {}", recovered.state_hash());
    println!("replayed  {}", replayed.hash());
    assert_eq!(hash, recovered.state_hash());
    assert_eq!(hash, replayed.hash());
    Ok(())
}
