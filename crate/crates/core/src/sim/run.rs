//! End-to-end simulation: workload, training, engine run with a simulated
//! reviewer, and the report rows.

use std::collections::{BTreeMap, HashMap};

use super::report::{config_hash, module_summary, render, ModuleSummary, ReportFiles, RunManifest};
use super::training::{train_bundle, TrainOptions, TrainSummary};
use super::{generate_workload, simulate_process, ProcessReport, Scenario, SimError, Workload};
use crate::domain::{CaseStatus, Decision, GroundTruth};
use crate::engine::{Engine, EngineConfig, ModelBundle};
use crate::rules::DEMO_RULES;

pub const REVIEWER_ID: &str = "sim-reviewer";

#[derive(Clone, Debug)]
pub struct SimulateOptions {
    pub train: TrainOptions,
    /// Pre-trained models; `None` trains a bundle from the workload.
    pub models: Option<ModelBundle>,
    pub rules: String,
    pub engine: EngineConfig,
    /// The simulated reviewer clears the queue after every this many events,
    /// answering with the synthetic label. Zero disables review.
    pub review_every: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            train: TrainOptions::default(),
            models: None,
            rules: DEMO_RULES.to_owned(),
            engine: EngineConfig::default(),
            review_every: 200,
        }
    }
}

pub struct SimulationRun {
    pub scenario: Scenario,
    pub workload: Workload,
    pub engine: Engine,
    pub train_summary: Option<TrainSummary>,
    /// Events the engine refused, by error kind.
    pub ingest_errors: BTreeMap<String, usize>,
    pub process: ProcessReport,
    pub modules: ModuleSummary,
    pub manifest: RunManifest,
}

impl SimulationRun {
    pub fn report(&self) -> Result<ReportFiles, SimError> {
        render(&self.engine.metrics(), &self.process, &self.modules, &self.manifest)
    }
}

fn review_queue(engine: &mut Engine, truth: &HashMap<String, GroundTruth>, now: i64) -> Result<(), SimError> {
    let ids: Vec<String> = engine.cases(Some(CaseStatus::PendingReview), usize::MAX).iter().map(|c| c.case_id.clone()).collect();
    for id in ids {
        let decision = match truth.get(&id) {
            Some(GroundTruth::Violation) => Decision::Reject,
            _ => Decision::Approve,
        };
        engine.submit_verdict(&id, decision, REVIEWER_ID, now)?;
    }
    Ok(())
}

pub fn simulate(scenario: &Scenario, options: &SimulateOptions) -> Result<SimulationRun, SimError> {
    let workload = generate_workload(scenario)?;
    let (models, train_summary) = match &options.models {
        Some(m) => (m.clone(), None),
        None => {
            let (m, s) = train_bundle(&workload, &options.train)?;
            (m, Some(s))
        }
    };
    let mut engine = Engine::in_memory(options.engine.clone())?;
    engine.load_rules(&options.rules)?;
    engine.set_models(models)?;

    let truth: HashMap<String, GroundTruth> =
        workload.labels.iter().map(|l| (l.case_id.clone(), l.ground_truth)).collect();
    let mut ingest_errors = BTreeMap::new();
    for (i, event) in workload.events.iter().enumerate() {
        let ts = event.timestamp;
        if let Err(e) = engine.ingest(event.clone()) {
            *ingest_errors.entry(e.code().to_owned()).or_insert(0) += 1;
        }
        if options.review_every > 0 && (i + 1) % options.review_every == 0 {
            review_queue(&mut engine, &truth, ts)?;
        }
    }
    if options.review_every > 0 {
        let end = workload.events.last().map_or(scenario.start_ms, |e| e.timestamp);
        review_queue(&mut engine, &truth, end)?;
    }

    let process = simulate_process(scenario);
    let modules = module_summary(&engine, &workload.labels);
    let t = &options.train;
    let extra_seeds = BTreeMap::from([
        ("train".to_owned(), t.seed),
        ("sequence".to_owned(), t.seq.seed),
        ("doc".to_owned(), t.doc.seed),
        ("dqn".to_owned(), t.dqn.seed),
    ]);
    let manifest = RunManifest {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        event_count: workload.events.len(),
        config_hash: config_hash(scenario),
        engine_state_hash: engine.state_hash(),
        crate_version: env!("CARGO_PKG_VERSION").to_owned(),
        extra_seeds,
    };
    Ok(SimulationRun { scenario: scenario.clone(), workload, engine, train_summary, ingest_errors, process, modules, manifest })
}
