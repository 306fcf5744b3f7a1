//! Single-writer compliance engine: ingestion, the scoring pipeline, the
//! review queue, verdicts, metrics and WAL-backed replay.
//!
//! Every mutation is logged before it becomes visible. Replaying the log
//! from the start (or from the latest snapshot) rebuilds an [`EngineState`]
//! whose canonical hash equals the live one at the same sequence number.

pub mod pipeline;
pub mod wal;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::doc::DocClassifier;
use crate::domain::{
    escalate, transition, Alert, CaseStatus, ComplianceCase, Decision, DecisionSource, Event, GroundTruth, Label,
    LabelOrigin, Millis, TransitionError, Verdict,
};
use crate::dqn::{Action, ComplianceState, Policy, QueueLoad, RiskBucket};
use crate::features::FeaturePipeline;
use crate::rules::{parse_rules, RuleAction, RuleError, RuleInput, RuleSet};
use crate::sequence::SequenceModel;
use crate::stream::{
    AlertCounts, AlertPolicy, LatencyStats, LatencySummary, StreamMetrics, ThroughputMeter, TumblingWindow,
    WindowCase, WindowProcessor, DEFAULT_LATENESS_MS, DEFAULT_WINDOW_MS,
};
use crate::svm::SvmModel;
use wal::{RecordKind, Wal, WalError, WalRecord};

/// Width of the per-event step vector fed to the sequence model.
pub const STEP_DIM: usize = 4;
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Regions the step features and the demo rules treat as elevated risk.
pub fn is_high_risk_region(region: &str) -> bool {
    matches!(region, "offshore" | "sanctioned" | "embargoed")
}

/// `[(ln(1+amount) − 8)/2, high-risk region, api channel, online channel]`.
/// The amount term is centred on roughly 3000 and stays within about [-4, 3].
pub fn step_features(event: &Event) -> Vec<f64> {
    use crate::domain::Channel;
    vec![
        (event.amount.ln_1p() - 8.0) / 2.0,
        f64::from(u8::from(is_high_risk_region(&event.region))),
        f64::from(u8::from(event.channel == Channel::Api)),
        f64::from(u8::from(event.channel == Channel::Online)),
    ]
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("duplicate event {0}")]
    DuplicateEvent(String),
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("case {0} is already resolved")]
    AlreadyResolved(String),
    #[error("case {id} is {status:?}, not awaiting review")]
    NotReviewable { id: String, status: CaseStatus },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("model not loaded: {0}")]
    ModelNotLoaded(ModelKind),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("corrupt WAL record {0}")]
    CorruptRecord(u64),
    #[error("WAL gap: expected record {0}")]
    GapDetected(u64),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Stable snake_case name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::DuplicateEvent(_) => "duplicate_event",
            EngineError::UnknownCase(_) => "unknown_case",
            EngineError::AlreadyResolved(_) => "already_resolved",
            EngineError::NotReviewable { .. } => "not_reviewable",
            EngineError::InvalidEvent(_) => "invalid_event",
            EngineError::InvalidVerdict(_) => "invalid_verdict",
            EngineError::ModelNotLoaded(_) => "model_not_loaded",
            EngineError::Model(_) => "model_error",
            EngineError::Rules(_) => "invalid_rules",
            EngineError::CorruptRecord(_) => "corrupt_record",
            EngineError::GapDetected(_) => "gap_detected",
            EngineError::Snapshot(_) => "snapshot_error",
            EngineError::Config(_) => "config_error",
            EngineError::Io(_) => "io_error",
        }
    }
}

impl From<WalError> for EngineError {
    fn from(e: WalError) -> Self {
        match e {
            WalError::CorruptRecord(s) => EngineError::CorruptRecord(s),
            WalError::GapDetected(s) => EngineError::GapDetected(s),
            WalError::Io(e) => EngineError::Io(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Features,
    Svm,
    Sequence,
    Doc,
    Dqn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Features, ModelKind::Svm, ModelKind::Sequence, ModelKind::Doc, ModelKind::Dqn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Features => "features",
            ModelKind::Svm => "svm",
            ModelKind::Sequence => "sequence",
            ModelKind::Doc => "doc",
            ModelKind::Dqn => "dqn",
        }
    }

    /// File or directory name inside a model bundle directory.
    pub fn bundle_entry(self) -> &'static str {
        match self {
            ModelKind::Features => "features.json",
            ModelKind::Svm => "svm.json",
            ModelKind::Sequence => "sequence",
            ModelKind::Doc => "doc",
            ModelKind::Dqn => "policy.json",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EngineError::Config(format!("unknown model kind {s:?}")))
    }
}

fn read_json(path: &Path) -> Result<Value, EngineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EngineError::Model(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), EngineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EngineError::Model(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Whatever scoring models are currently loaded.
#[derive(Clone, Debug, Default)]
pub struct ModelBundle {
    pub features: Option<FeaturePipeline>,
    pub svm: Option<SvmModel>,
    pub sequence: Option<SequenceModel>,
    pub doc: Option<DocClassifier>,
    pub policy: Option<Policy>,
}

impl ModelBundle {
    pub fn loaded(&self) -> Vec<ModelKind> {
        let flags = [
            self.features.is_some(),
            self.svm.is_some(),
            self.sequence.is_some(),
            self.doc.is_some(),
            self.policy.is_some(),
        ];
        ModelKind::ALL.into_iter().zip(flags).filter(|(_, f)| *f).map(|(k, _)| k).collect()
    }

    /// The first model the scoring path needs but lacks. The document
    /// classifier is optional.
    pub fn missing(&self) -> Option<ModelKind> {
        [
            (ModelKind::Features, self.features.is_some()),
            (ModelKind::Svm, self.svm.is_some()),
            (ModelKind::Sequence, self.sequence.is_some()),
            (ModelKind::Dqn, self.policy.is_some()),
        ]
        .into_iter()
        .find(|(_, present)| !present)
        .map(|(k, _)| k)
    }

    /// Loads one model from a checkpoint file (json models) or directory.
    pub fn load(&mut self, kind: ModelKind, path: &Path) -> Result<(), EngineError> {
        let err = |e: &dyn fmt::Display| EngineError::Model(format!("{kind} from {}: {e}", path.display()));
        match kind {
            ModelKind::Features => {
                self.features = Some(FeaturePipeline::from_json(read_json(path)?).map_err(|e| err(&e))?);
            }
            ModelKind::Svm => self.svm = Some(SvmModel::from_json(read_json(path)?).map_err(|e| err(&e))?),
            ModelKind::Sequence => {
                let m = SequenceModel::load(path).map_err(|e| err(&e))?;
                if m.config().input_dim != STEP_DIM {
                    return Err(err(&format!("input_dim {} != {STEP_DIM}", m.config().input_dim)));
                }
                self.sequence = Some(m);
            }
            ModelKind::Doc => self.doc = Some(DocClassifier::load(path).map_err(|e| err(&e))?),
            ModelKind::Dqn => self.policy = Some(Policy::from_json(&read_json(path)?).map_err(|e| err(&e))?),
        }
        self.check()
    }

    /// Loads every model present in a bundle directory.
    pub fn load_dir(dir: &Path) -> Result<Self, EngineError> {
        let mut b = Self::default();
        for kind in ModelKind::ALL {
            let p = dir.join(kind.bundle_entry());
            if p.exists() {
                b.load(kind, &p)?;
            }
        }
        Ok(b)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), EngineError> {
        std::fs::create_dir_all(dir)?;
        if let Some(f) = &self.features {
            write_json(&dir.join(ModelKind::Features.bundle_entry()), &f.to_json())?;
        }
        if let Some(s) = &self.svm {
            write_json(&dir.join(ModelKind::Svm.bundle_entry()), &s.to_json())?;
        }
        if let Some(s) = &self.sequence {
            s.save(&dir.join(ModelKind::Sequence.bundle_entry())).map_err(|e| EngineError::Model(e.to_string()))?;
        }
        if let Some(d) = &self.doc {
            d.save(&dir.join(ModelKind::Doc.bundle_entry())).map_err(|e| EngineError::Model(e.to_string()))?;
        }
        if let Some(p) = &self.policy {
            write_json(&dir.join(ModelKind::Dqn.bundle_entry()), &p.to_json())?;
        }
        Ok(())
    }

    fn check(&self) -> Result<(), EngineError> {
        if let (Some(f), Some(s)) = (&self.features, &self.svm) {
            if f.output_dim() != s.dim() {
                return Err(EngineError::Model(format!(
                    "feature pipeline emits {} dims but the SVM expects {}",
                    f.output_dim(),
                    s.dim()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Steps of per-account history fed to the sequence model.
    pub history_len: usize,
    /// Pending-review backlog at which the queue counts as heavy.
    pub queue_capacity: usize,
    pub window_ms: i64,
    pub lateness_ms: i64,
    pub alert_policy: AlertPolicy,
    pub snapshot_every: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            history_len: 20,
            queue_capacity: 50,
            window_ms: DEFAULT_WINDOW_MS,
            lateness_ms: DEFAULT_LATENESS_MS,
            alert_policy: AlertPolicy::default(),
            snapshot_every: 10_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.alert_policy.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        TumblingWindow::new(self.window_ms).map_err(|e| EngineError::Config(e.to_string()))?;
        if self.history_len == 0 || self.queue_capacity == 0 || self.snapshot_every == 0 {
            return Err(EngineError::Config("history_len, queue_capacity and snapshot_every must be positive".into()));
        }
        if self.lateness_ms < 0 {
            return Err(EngineError::Config("lateness_ms must be non-negative".into()));
        }
        Ok(())
    }

    fn window(&self) -> TumblingWindow {
        TumblingWindow { width_ms: self.window_ms }
    }
}

/// How a case was routed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub matched_rule: Option<String>,
    pub rule_action: Option<RuleAction>,
    pub svm_score: Option<f64>,
    pub state: Option<String>,
    pub dqn_action: Option<Action>,
    pub q_values: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub alert: Alert,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub ingested: u64,
    pub rule_matched: u64,
    pub rule_auto: u64,
    pub model_auto: u64,
    pub verdicts: u64,
}

/// Everything the WAL reconstructs. Serialized field order and sorted maps
/// make `serde_json::to_vec` canonical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub seq: u64,
    pub cases: BTreeMap<String, ComplianceCase>,
    pub traces: BTreeMap<String, CaseTrace>,
    /// Pending-review case ids, oldest first.
    pub queue: VecDeque<String>,
    /// Events whose cases wait for models, oldest first.
    pub parked: VecDeque<Event>,
    pub labels: Vec<Label>,
    pub rules_text: Option<String>,
    pub histories: BTreeMap<String, VecDeque<Vec<f64>>>,
    pub windows: WindowProcessor,
    pub alerts: Vec<AlertEntry>,
    pub counters: Counters,
}

#[derive(Serialize, Deserialize)]
struct DecisionPayload {
    case: ComplianceCase,
    trace: CaseTrace,
    /// Present when the case was parked awaiting models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event: Option<Event>,
}

#[derive(Serialize, Deserialize)]
struct VerdictPayload {
    verdict: Verdict,
    case: ComplianceCase,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("engine records serialize")
}

fn corrupt<T>(seq: u64) -> impl FnOnce(T) -> EngineError {
    move |_| EngineError::CorruptRecord(seq)
}

impl EngineState {
    pub fn empty(config: &EngineConfig) -> Self {
        Self {
            seq: 0,
            cases: BTreeMap::new(),
            traces: BTreeMap::new(),
            queue: VecDeque::new(),
            parked: VecDeque::new(),
            labels: Vec::new(),
            rules_text: None,
            histories: BTreeMap::new(),
            windows: WindowProcessor::new(config.window(), config.lateness_ms, config.alert_policy),
            alerts: Vec::new(),
            counters: Counters::default(),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn push_history(&mut self, event: &Event, history_len: usize) {
        let h = self.histories.entry(event.account.clone()).or_default();
        h.push_back(step_features(event));
        while h.len() > history_len {
            h.pop_front();
        }
    }

    fn register_event(&mut self, event: &Event, history_len: usize) {
        self.counters.ingested += 1;
        self.cases.insert(event.id.clone(), ComplianceCase::pending(event));
        self.push_history(event, history_len);
    }

    fn register_decision(&mut self, case: ComplianceCase, trace: CaseTrace, parked_event: Option<Event>) {
        let id = case.case_id.clone();
        let first = !self.traces.contains_key(&id);
        if let Some(pos) = self.parked.iter().position(|e| e.id == id) {
            self.parked.remove(pos);
        }
        if first {
            if trace.matched_rule.is_some() {
                self.counters.rule_matched += 1;
            }
            let closed = self.windows.push(WindowCase {
                case_id: id.clone(),
                timestamp: case.created_at,
                risk_score: case.risk_score,
                anomaly_flag: case.anomaly_flag,
            });
            for w in closed {
                for alert in w.alerts {
                    let seq = self.alerts.len() as u64 + 1;
                    self.alerts.push(AlertEntry { seq, alert });
                }
            }
        }
        match (case.status, case.decided_by) {
            (CaseStatus::PendingReview, _) => self.queue.push_back(id.clone()),
            (CaseStatus::PendingScore, _) => {
                if let Some(e) = parked_event {
                    self.parked.push_back(e);
                }
            }
            (_, Some(DecisionSource::Rules)) => self.counters.rule_auto += 1,
            (_, Some(DecisionSource::Model)) => self.counters.model_auto += 1,
            _ => {}
        }
        self.traces.insert(id.clone(), trace);
        self.cases.insert(id, case);
    }

    fn register_verdict(&mut self, verdict: &Verdict, case: ComplianceCase) {
        if let Some(pos) = self.queue.iter().position(|id| *id == case.case_id) {
            self.queue.remove(pos);
        }
        self.counters.verdicts += 1;
        self.labels.push(Label {
            case_id: case.case_id.clone(),
            ground_truth: match verdict.decision {
                Decision::Approve => GroundTruth::Compliant,
                Decision::Reject => GroundTruth::Violation,
            },
            origin: LabelOrigin::HumanReview,
        });
        self.cases.insert(case.case_id.clone(), case);
    }

    /// Applies one already verified record.
    fn apply(&mut self, record: &WalRecord, config: &EngineConfig) -> Result<(), EngineError> {
        let seq = record.seq;
        match record.kind {
            RecordKind::EventIngested => {
                let event: Event = serde_json::from_value(record.payload.clone()).map_err(corrupt(seq))?;
                self.register_event(&event, config.history_len);
            }
            RecordKind::Decision => {
                let p: DecisionPayload = serde_json::from_value(record.payload.clone()).map_err(corrupt(seq))?;
                self.register_decision(p.case, p.trace, p.event);
            }
            RecordKind::Verdict => {
                let p: VerdictPayload = serde_json::from_value(record.payload.clone()).map_err(corrupt(seq))?;
                self.register_verdict(&p.verdict, p.case);
            }
            RecordKind::RulesLoaded => {
                let text = record.payload.get("text").and_then(Value::as_str).ok_or(EngineError::CorruptRecord(seq))?;
                self.rules_text = Some(text.to_owned());
            }
        }
        self.seq = seq;
        Ok(())
    }
}

/// Rebuilds state from a complete log starting at record 1.
pub fn replay(records: &[WalRecord], config: &EngineConfig) -> Result<EngineState, EngineError> {
    wal::verify_sequence(records, 1)?;
    let mut state = EngineState::empty(config);
    for r in records {
        state.apply(r, config)?;
    }
    Ok(state)
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    seq: u64,
    hash: String,
    state: EngineState,
}

/// Canonical counts plus latency and alert summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seq: u64,
    pub total_cases: u64,
    pub ingested_total: u64,
    pub verdicts_total: u64,
    pub by_status: BTreeMap<String, u64>,
    pub by_decided_by: BTreeMap<String, u64>,
    pub queue_length: u64,
    pub parked: u64,
    pub rule_matched: u64,
    /// Fraction of ingested events matched by some rule.
    pub rule_coverage: f64,
    pub rule_auto_decisions: u64,
    pub model_auto_decisions: u64,
    /// Fraction of ingested events decided without a human.
    pub auto_coverage: f64,
    pub labels: u64,
    pub latency: Option<LatencySummary>,
    pub stream: StreamMetrics,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub struct Engine {
    config: EngineConfig,
    state: EngineState,
    rules: RuleSet,
    models: ModelBundle,
    wal: Wal,
    dir: Option<PathBuf>,
    last_snapshot: u64,
    latency: LatencyStats,
    meter: ThroughputMeter,
}

struct Scored {
    case: ComplianceCase,
    svm_score: f64,
}

impl Engine {
    /// An engine whose log lives in memory (tests, simulations, benchmarks).
    pub fn in_memory(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            state: EngineState::empty(&config),
            config,
            rules: RuleSet::default(),
            models: ModelBundle::default(),
            wal: Wal::in_memory(),
            dir: None,
            last_snapshot: 0,
            latency: LatencyStats::new(),
            meter: ThroughputMeter::new(),
        })
    }

    /// Opens or recovers an engine persisted under `dir`: latest snapshot,
    /// then the WAL tail after it.
    pub fn open(dir: &Path, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        std::fs::create_dir_all(dir)?;
        let records = wal::read_wal(&dir.join(wal::WAL_FILE))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut state = if snap_path.exists() {
            let snap: SnapshotFile = serde_json::from_str(&std::fs::read_to_string(&snap_path)?)
                .map_err(|e| EngineError::Snapshot(e.to_string()))?;
            if snap.state.hash() != snap.hash || snap.state.seq != snap.seq {
                return Err(EngineError::Snapshot("snapshot hash mismatch".into()));
            }
            if snap.seq > records.last().map_or(0, |r| r.seq) {
                return Err(EngineError::Snapshot(format!("snapshot at {} is ahead of the WAL", snap.seq)));
            }
            snap.state
        } else {
            EngineState::empty(&config)
        };
        let from = state.seq;
        for r in records.iter().filter(|r| r.seq > from) {
            state.apply(r, &config)?;
        }
        let rules = match &state.rules_text {
            Some(text) => parse_rules(text)?,
            None => RuleSet::default(),
        };
        let last = state.seq;
        Ok(Self {
            config,
            rules,
            models: ModelBundle::default(),
            wal: Wal::open_file(dir, last)?,
            dir: Some(dir.to_path_buf()),
            last_snapshot: from,
            state,
            latency: LatencyStats::new(),
            meter: ThroughputMeter::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn state_hash(&self) -> String {
        self.state.hash()
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn models(&self) -> &ModelBundle {
        &self.models
    }

    pub fn set_models(&mut self, models: ModelBundle) -> Result<(), EngineError> {
        models.check()?;
        self.models = models;
        Ok(())
    }

    pub fn load_model(&mut self, kind: ModelKind, path: &Path) -> Result<(), EngineError> {
        let mut next = self.models.clone();
        next.load(kind, path)?;
        self.models = next;
        Ok(())
    }

    /// All records written so far (flushes file logs first).
    pub fn wal_records(&mut self) -> Result<Vec<WalRecord>, EngineError> {
        Ok(self.wal.records()?)
    }

    /// Parses and activates a rule file; the text is logged verbatim.
    pub fn load_rules(&mut self, text: &str) -> Result<usize, EngineError> {
        let rules = parse_rules(text)?;
        let seq = self.wal.append(RecordKind::RulesLoaded, json!({ "text": text }))?;
        self.wal.flush()?;
        self.rules = rules;
        self.state.rules_text = Some(text.to_owned());
        self.state.seq = seq;
        self.after_write()?;
        Ok(self.rules.len())
    }

    fn sequence_input(&self, event: &Event, model: &SequenceModel) -> Vec<Vec<f64>> {
        let len = self.config.history_len.max(model.config().min_len());
        let mut steps: Vec<Vec<f64>> = self
            .state
            .histories
            .get(&event.account)
            .map(|h| h.iter().cloned().collect())
            .unwrap_or_default();
        steps.push(step_features(event));
        let skip = steps.len().saturating_sub(len);
        let mut out = vec![vec![0.0; STEP_DIM]; len.saturating_sub(steps.len() - skip)];
        out.extend(steps.into_iter().skip(skip));
        out
    }

    /// Model scores for one event; `ModelNotLoaded` when the path is incomplete.
    fn score(&self, event: &Event) -> Result<Scored, EngineError> {
        let m = &self.models;
        if let Some(kind) = m.missing() {
            return Err(EngineError::ModelNotLoaded(kind));
        }
        let (pipeline, svm, seq) = (m.features.as_ref().unwrap(), m.svm.as_ref().unwrap(), m.sequence.as_ref().unwrap());
        let raw = event.features.as_deref().ok_or_else(|| {
            EngineError::InvalidEvent(format!("event {} has no features; model scoring needs them", event.id))
        })?;
        if raw.len() != pipeline.input_dim() {
            return Err(EngineError::InvalidEvent(format!(
                "event {}: {} features, models expect {}",
                event.id,
                raw.len(),
                pipeline.input_dim()
            )));
        }
        let z = pipeline.transform(raw).map_err(|e| EngineError::Model(e.to_string()))?;
        let (svm_score, flag) = svm.decision(&z).map_err(|e| EngineError::Model(e.to_string()))?;
        let risk = seq.risk_score(&self.sequence_input(event, seq)).map_err(|e| EngineError::Model(e.to_string()))?;
        let mut case = ComplianceCase::pending(event);
        case.risk_score = risk;
        case.anomaly_flag = flag;
        if let (Some(doc), Some(text)) = (&m.doc, &event.doc_text) {
            case.doc_class = Some(doc.classify(text).label.as_str().to_owned());
        }
        Ok(Scored { case, svm_score })
    }

    fn decide(&self, event: &Event) -> Result<(ComplianceCase, CaseTrace, bool), EngineError> {
        let rd = self.rules.evaluate(&RuleInput::event(event))?;
        let mut trace = CaseTrace::default();
        if rd.matched {
            trace.matched_rule = rd.matched_rule_id.map(str::to_owned);
            trace.rule_action = Some(rd.action);
            let auto = |d: Decision| {
                transition(&ComplianceCase::pending(event), &Verdict::automated(&event.id, d, DecisionSource::Rules, event.timestamp))
            };
            let case = match rd.action {
                RuleAction::Approve => auto(Decision::Approve).expect("fresh case accepts rule verdicts"),
                RuleAction::Reject => auto(Decision::Reject).expect("fresh case accepts rule verdicts"),
                RuleAction::Escalate => {
                    // Reviewers still see model scores when they are available.
                    let scored = match self.score(event) {
                        Ok(s) => {
                            trace.svm_score = Some(s.svm_score);
                            s.case
                        }
                        Err(EngineError::ModelNotLoaded(_)) | Err(EngineError::InvalidEvent(_)) => {
                            ComplianceCase::pending(event)
                        }
                        Err(e) => return Err(e),
                    };
                    escalate(&scored).expect("fresh case can escalate")
                }
            };
            return Ok((case, trace, false));
        }
        let scored = match self.score(event) {
            Ok(s) => s,
            Err(EngineError::ModelNotLoaded(kind)) => {
                log::debug!("parking {}: {kind} not loaded", event.id);
                return Ok((ComplianceCase::pending(event), trace, true));
            }
            Err(e) => return Err(e),
        };
        let policy = self.models.policy.as_ref().expect("scoring checked the policy");
        let state = ComplianceState::new(
            RiskBucket::from_score(scored.case.risk_score),
            scored.case.anomaly_flag,
            QueueLoad::from_backlog(self.state.queue.len(), self.config.queue_capacity),
        );
        let action = policy.action(state);
        trace.svm_score = Some(scored.svm_score);
        trace.state = Some(state.key());
        trace.dqn_action = Some(action);
        trace.q_values = Some(policy.q.row(state));
        let model = |d| Verdict::automated(&event.id, d, DecisionSource::Model, event.timestamp);
        let case = match action {
            Action::AutoApprove => transition(&scored.case, &model(Decision::Approve)),
            Action::Reject => transition(&scored.case, &model(Decision::Reject)),
            Action::Escalate => escalate(&scored.case),
        }
        .expect("fresh case accepts model decisions");
        Ok((case, trace, false))
    }

    /// Runs one event through rules, models and the routing policy.
    ///
    /// With an incomplete model set the case is parked in `pending_score`
    /// instead of failing; [`Engine::rescore_parked`] picks it up later.
    pub fn ingest(&mut self, event: Event) -> Result<ComplianceCase, EngineError> {
        let start = Instant::now();
        event.validate().map_err(|e| EngineError::InvalidEvent(e.to_string()))?;
        if self.state.cases.contains_key(&event.id) {
            return Err(EngineError::DuplicateEvent(event.id));
        }
        let (case, trace, parked) = self.decide(&event)?;

        self.wal.append(RecordKind::EventIngested, to_value(&event))?;
        let payload = DecisionPayload { case: case.clone(), trace: trace.clone(), event: parked.then(|| event.clone()) };
        let seq = self.wal.append(RecordKind::Decision, to_value(&payload))?;
        self.wal.flush()?;

        self.state.register_event(&event, self.config.history_len);
        self.state.register_decision(case.clone(), trace, parked.then_some(event));
        self.state.seq = seq;
        self.after_write()?;
        self.latency.record(start.elapsed().as_secs_f64() * 1e3);
        self.meter.record();
        Ok(case)
    }

    /// Scores cases parked while models were missing. Returns how many left
    /// `pending_score`.
    pub fn rescore_parked(&mut self) -> Result<usize, EngineError> {
        if self.models.missing().is_some() {
            return Ok(0);
        }
        let mut done = 0;
        while let Some(event) = self.state.parked.front().cloned() {
            let (case, trace, parked) = self.decide(&event)?;
            if parked {
                break;
            }
            let seq = self.wal.append(RecordKind::Decision, to_value(&DecisionPayload { case: case.clone(), trace: trace.clone(), event: None }))?;
            self.wal.flush()?;
            self.state.register_decision(case, trace, None);
            self.state.seq = seq;
            self.after_write()?;
            done += 1;
        }
        Ok(done)
    }

    /// Resolves a pending-review case and records the verdict as a label.
    pub fn submit_verdict(
        &mut self,
        case_id: &str,
        decision: Decision,
        reviewer_id: &str,
        timestamp: Millis,
    ) -> Result<ComplianceCase, EngineError> {
        let case = self.state.cases.get(case_id).ok_or_else(|| EngineError::UnknownCase(case_id.to_owned()))?;
        let verdict = Verdict::human(case_id, decision, reviewer_id, timestamp);
        let next = transition(case, &verdict).map_err(|e| match e {
            TransitionError::AlreadyResolved(id) => EngineError::AlreadyResolved(id),
            TransitionError::SourceMismatch { case_id, status, .. } => EngineError::NotReviewable { id: case_id, status },
            TransitionError::MissingReviewer(_) => EngineError::InvalidVerdict("reviewer_id must not be empty".into()),
        })?;
        let seq = self.wal.append(RecordKind::Verdict, to_value(&VerdictPayload { verdict: verdict.clone(), case: next.clone() }))?;
        self.wal.flush()?;
        self.state.register_verdict(&verdict, next.clone());
        self.state.seq = seq;
        self.after_write()?;
        Ok(next)
    }

    fn after_write(&mut self) -> Result<(), EngineError> {
        if let Some(dir) = &self.dir {
            if self.state.seq - self.last_snapshot >= self.config.snapshot_every {
                let snap = SnapshotFile { seq: self.state.seq, hash: self.state.hash(), state: self.state.clone() };
                let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
                std::fs::write(&tmp, serde_json::to_vec(&snap).map_err(|e| EngineError::Snapshot(e.to_string()))?)?;
                std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
                self.last_snapshot = self.state.seq;
            }
        }
        Ok(())
    }

    pub fn case(&self, id: &str) -> Option<(&ComplianceCase, Option<&CaseTrace>)> {
        self.state.cases.get(id).map(|c| (c, self.state.traces.get(id)))
    }

    /// Cases filtered by status. Pending-review cases come in queue order;
    /// the rest oldest first.
    pub fn cases(&self, status: Option<CaseStatus>, limit: usize) -> Vec<&ComplianceCase> {
        if status == Some(CaseStatus::PendingReview) {
            return self.state.queue.iter().take(limit).filter_map(|id| self.state.cases.get(id)).collect();
        }
        let mut v: Vec<&ComplianceCase> =
            self.state.cases.values().filter(|c| status.is_none_or(|s| c.status == s)).collect();
        v.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.case_id.cmp(&b.case_id)));
        v.truncate(limit);
        v
    }

    pub fn alerts_since(&self, since_seq: u64) -> &[AlertEntry] {
        let start = self.state.alerts.partition_point(|a| a.seq <= since_seq);
        &self.state.alerts[start..]
    }

    pub fn labels(&self) -> &[Label] {
        &self.state.labels
    }

    /// One JSON object per line.
    pub fn export_labels(&self) -> String {
        self.state.labels.iter().map(|l| format!("{}\n", serde_json::to_string(l).expect("labels serialize"))).collect()
    }

    /// Decision latencies in milliseconds, one per successful ingest.
    pub fn latency(&self) -> &LatencyStats {
        &self.latency
    }

    pub fn metrics(&self) -> MetricsReport {
        let s = &self.state;
        let mut by_status: BTreeMap<String, u64> = CaseStatus::ALL.iter().map(|st| (st.as_str().to_owned(), 0)).collect();
        let mut by_decided_by: BTreeMap<String, u64> =
            ["rules", "model", "human"].iter().map(|k| (k.to_string(), 0)).collect();
        for c in s.cases.values() {
            *by_status.entry(c.status.as_str().to_owned()).or_default() += 1;
            if let Some(d) = c.decided_by {
                let key = match d {
                    DecisionSource::Rules => "rules",
                    DecisionSource::Model => "model",
                    DecisionSource::Human => "human",
                };
                *by_decided_by.entry(key.to_owned()).or_default() += 1;
            }
        }
        let mut latency = self.latency.clone();
        let n = s.counters.ingested;
        MetricsReport {
            seq: s.seq,
            total_cases: s.cases.len() as u64,
            ingested_total: n,
            verdicts_total: s.counters.verdicts,
            by_status,
            by_decided_by,
            queue_length: s.queue.len() as u64,
            parked: s.parked.len() as u64,
            rule_matched: s.counters.rule_matched,
            rule_coverage: ratio(s.counters.rule_matched, n),
            rule_auto_decisions: s.counters.rule_auto,
            model_auto_decisions: s.counters.model_auto,
            auto_coverage: ratio(s.counters.rule_auto + s.counters.model_auto, n),
            labels: s.labels.len() as u64,
            latency: latency.summary(),
            stream: s.windows.metrics(&mut latency, self.meter.steady_state()),
        }
    }

    /// Alerts the still-open windows would emit if the stream ended now.
    /// Does not change state.
    pub fn pending_window_alerts(&self) -> Vec<Alert> {
        let mut w = self.state.windows.clone();
        w.flush().into_iter().flat_map(|cw| cw.alerts).collect()
    }

    pub fn alert_counts(&self) -> AlertCounts {
        let mut c = AlertCounts::default();
        for a in &self.state.alerts {
            match a.alert.severity {
                crate::domain::Severity::Info => c.info += 1,
                crate::domain::Severity::Warning => c.warning += 1,
                crate::domain::Severity::High => c.high += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests;
