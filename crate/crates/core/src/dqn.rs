//! Escalation routing learned with Q-learning.
//!
//! Every case is summarized as one of twelve [`ComplianceState`]s and the
//! agent picks among approve, escalate and reject. The simulated workflow in
//! [`ComplianceEnv`] draws the ground truth of each case from a
//! risk-bucket-conditional violation probability and pays out the configured
//! rewards. Training uses an ε-greedy rollout, a uniform replay buffer and
//! either the tabular update or a small dense Q-network.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AnomalyFlag;
use crate::nn::{Adam, DenseParams, Gradients, Graph, NnError, Optimizer, ParamStore, Tensor};
use crate::rng::SplitMix64;

pub const N_STATES: usize = 12;
pub const N_ACTIONS: usize = 3;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown state key {0:?}")]
    UnknownState(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBucket {
    Low,
    Med,
    High,
}

impl RiskBucket {
    pub const ALL: [RiskBucket; 3] = [RiskBucket::Low, RiskBucket::Med, RiskBucket::High];
    pub const LOW_UPPER: f64 = 0.33;
    pub const MED_UPPER: f64 = 0.66;

    /// `[0, 0.33)` low, `[0.33, 0.66)` medium, the rest high.
    pub fn from_score(score: f64) -> Self {
        if score < Self::LOW_UPPER {
            RiskBucket::Low
        } else if score < Self::MED_UPPER {
            RiskBucket::Med
        } else {
            RiskBucket::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskBucket::Low => "low",
            RiskBucket::Med => "med",
            RiskBucket::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueLoad {
    Light,
    Heavy,
}

impl QueueLoad {
    /// Heavy once the pending-review backlog reaches `capacity`.
    pub fn from_backlog(pending: usize, capacity: usize) -> Self {
        if pending >= capacity {
            QueueLoad::Heavy
        } else {
            QueueLoad::Light
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComplianceState {
    pub risk: RiskBucket,
    pub anomaly: AnomalyFlag,
    pub queue: QueueLoad,
}

impl ComplianceState {
    pub fn new(risk: RiskBucket, anomaly: AnomalyFlag, queue: QueueLoad) -> Self {
        Self { risk, anomaly, queue }
    }

    pub fn index(self) -> usize {
        let r = self.risk as usize;
        let a = matches!(self.anomaly, AnomalyFlag::Outlier) as usize;
        let q = matches!(self.queue, QueueLoad::Heavy) as usize;
        (r * 2 + a) * 2 + q
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < N_STATES, "state index {i} out of range");
        let risk = RiskBucket::ALL[i / 4];
        let anomaly = if (i / 2) % 2 == 1 { AnomalyFlag::Outlier } else { AnomalyFlag::Inlier };
        let queue = if i % 2 == 1 { QueueLoad::Heavy } else { QueueLoad::Light };
        Self { risk, anomaly, queue }
    }

    pub fn all() -> impl Iterator<Item = ComplianceState> {
        (0..N_STATES).map(Self::from_index)
    }

    /// `"low/inlier/light"` style key used in policy files.
    pub fn key(self) -> String {
        let anomaly = match self.anomaly {
            AnomalyFlag::Inlier => "inlier",
            AnomalyFlag::Outlier => "outlier",
        };
        let queue = match self.queue {
            QueueLoad::Light => "light",
            QueueLoad::Heavy => "heavy",
        };
        format!("{}/{anomaly}/{queue}", self.risk.as_str())
    }

    pub fn parse_key(key: &str) -> Result<Self, DqnError> {
        Self::all().find(|s| s.key() == key).ok_or_else(|| DqnError::UnknownState(key.to_string()))
    }

    fn features(self) -> Vec<f64> {
        let mut x = vec![0.0; 5];
        x[self.risk as usize] = 1.0;
        x[3] = matches!(self.anomaly, AnomalyFlag::Outlier) as u8 as f64;
        x[4] = matches!(self.queue, QueueLoad::Heavy) as u8 as f64;
        x
    }
}

impl fmt::Display for ComplianceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AutoApprove,
    Escalate,
    Reject,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::AutoApprove, Action::Escalate, Action::Reject];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::AutoApprove => "auto_approve",
            Action::Escalate => "escalate",
            Action::Reject => "reject",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: ComplianceState,
    pub a: Action,
    pub r: f64,
    pub s_next: ComplianceState,
    pub terminal: bool,
}

/// The Q-learning update on one table entry:
/// `Q(s,a) ← Q(s,a) + α·(r + γ·max_a′ Q(s′,a′) − Q(s,a))`, with the
/// bootstrap term dropped on terminal transitions.
pub fn q_update(q: &mut QTable, t: &Transition, alpha: f64, gamma: f64) {
    let bootstrap = if t.terminal { 0.0 } else { gamma * q.max(t.s_next) };
    let cell = &mut q.values[t.s.index()][t.a.index()];
    *cell += alpha * (t.r + bootstrap - *cell);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: [[f64; N_ACTIONS]; N_STATES],
}

impl Default for QTable {
    fn default() -> Self {
        Self { values: [[0.0; N_ACTIONS]; N_STATES] }
    }
}

impl QTable {
    pub fn get(&self, s: ComplianceState, a: Action) -> f64 {
        self.values[s.index()][a.index()]
    }

    pub fn row(&self, s: ComplianceState) -> [f64; N_ACTIONS] {
        self.values[s.index()]
    }

    pub fn max(&self, s: ComplianceState) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: ComplianceState) -> Action {
        Action::ALL[greedy_index(&self.row(s))]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().flatten().zip(other.values.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Lowest index among the maxima.
fn greedy_index(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub approve_compliant: f64,
    pub approve_violation: f64,
    pub reject_violation: f64,
    pub reject_compliant: f64,
    pub escalate: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Self { approve_compliant: 1.0, approve_violation: -10.0, reject_violation: 1.0, reject_compliant: -5.0, escalate: -0.2 }
    }
}

/// Every constant of the simulated workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub rewards: Rewards,
    /// Violation probability per risk bucket, low/med/high.
    pub p_violation: [f64; 3],
    pub outlier_bonus: f64,
    pub p_violation_cap: f64,
    /// Distribution of the next case's risk bucket.
    pub risk_mix: [f64; 3],
    pub p_outlier: f64,
    /// Probability that the queue is heavy after an escalation.
    pub p_heavy_after_escalate: f64,
    /// Probability that the queue is heavy after an approve or reject.
    pub p_heavy_after_other: f64,
    pub episode_len: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            rewards: Rewards::default(),
            p_violation: [0.05, 0.4, 0.9],
            outlier_bonus: 0.05,
            p_violation_cap: 0.99,
            risk_mix: [0.45, 0.3, 0.25],
            p_outlier: 0.5,
            p_heavy_after_escalate: 0.7,
            p_heavy_after_other: 0.3,
            episode_len: 64,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let probs = self
            .p_violation
            .iter()
            .chain(&self.risk_mix)
            .chain([&self.p_outlier, &self.p_violation_cap, &self.p_heavy_after_escalate, &self.p_heavy_after_other]);
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return Err(DqnError::InvalidConfig(format!("probability {p} outside [0, 1]")));
            }
        }
        if (self.risk_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DqnError::InvalidConfig("risk_mix must sum to 1".into()));
        }
        if self.episode_len == 0 {
            return Err(DqnError::InvalidConfig("episode_len must be positive".into()));
        }
        Ok(())
    }

    pub fn violation_probability(&self, s: ComplianceState) -> f64 {
        let base = self.p_violation[s.risk as usize];
        let bonus = if s.anomaly == AnomalyFlag::Outlier { self.outlier_bonus } else { 0.0 };
        (base + bonus).min(self.p_violation_cap)
    }

    pub fn p_heavy_after(&self, a: Action) -> f64 {
        match a {
            Action::Escalate => self.p_heavy_after_escalate,
            _ => self.p_heavy_after_other,
        }
    }

    pub fn reward(&self, a: Action, violation: bool) -> f64 {
        let r = &self.rewards;
        match (a, violation) {
            (Action::AutoApprove, false) => r.approve_compliant,
            (Action::AutoApprove, true) => r.approve_violation,
            (Action::Reject, true) => r.reject_violation,
            (Action::Reject, false) => r.reject_compliant,
            (Action::Escalate, _) => r.escalate,
        }
    }

    pub fn reward_range(&self) -> (f64, f64) {
        let r = &self.rewards;
        let all = [r.approve_compliant, r.approve_violation, r.reject_violation, r.reject_compliant, r.escalate];
        (all.iter().copied().fold(f64::INFINITY, f64::min), all.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    fn sample_case<R: Rng + ?Sized>(&self, rng: &mut R, queue: QueueLoad) -> ComplianceState {
        let u: f64 = rng.random();
        let risk = if u < self.risk_mix[0] {
            RiskBucket::Low
        } else if u < self.risk_mix[0] + self.risk_mix[1] {
            RiskBucket::Med
        } else {
            RiskBucket::High
        };
        let anomaly = if rng.random::<f64>() < self.p_outlier { AnomalyFlag::Outlier } else { AnomalyFlag::Inlier };
        ComplianceState { risk, anomaly, queue }
    }
}

/// Samples whether a case in state `s` is truly a violation.
pub fn sample_truth<R: Rng + ?Sized>(config: &MdpConfig, s: ComplianceState, rng: &mut R) -> bool {
    rng.random::<f64>() < config.violation_probability(s)
}

/// One episode of `episode_len` cases.
#[derive(Clone, Debug)]
pub struct ComplianceEnv {
    config: MdpConfig,
    step: usize,
}

impl ComplianceEnv {
    pub fn new(config: MdpConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn config(&self) -> &MdpConfig {
        &self.config
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ComplianceState {
        self.step = 0;
        self.config.sample_case(rng, QueueLoad::Light)
    }

    /// Pays out the reward for `action` on the current case and draws the next one.
    pub fn step<R: Rng + ?Sized>(&mut self, state: ComplianceState, action: Action, rng: &mut R) -> (f64, ComplianceState, bool) {
        let violation = sample_truth(&self.config, state, rng);
        let reward = self.config.reward(action, violation);
        let queue =
            if rng.random::<f64>() < self.config.p_heavy_after(action) { QueueLoad::Heavy } else { QueueLoad::Light };
        let next = self.config.sample_case(rng, queue);
        self.step += 1;
        (reward, next, self.step >= self.config.episode_len)
    }
}

/// Ring buffer of transitions with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LearningRate {
    /// Fixed α.
    Constant { alpha: f64 },
    /// `α = κ / (κ + n)` where `n` counts earlier updates of the same entry.
    VisitDecay { kappa: f64 },
    /// `α = κ / (κ + m)` where `m` counts collected transitions of the entry.
    DataDecay { kappa: f64 },
}

impl LearningRate {
    pub fn alpha(self, updates_so_far: u64) -> f64 {
        match self {
            LearningRate::Constant { alpha } => alpha,
            LearningRate::VisitDecay { kappa } | LearningRate::DataDecay { kappa } => {
                kappa / (kappa + updates_so_far as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    Tabular,
    Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub episodes: usize,
    pub seed: u64,
    pub mode: QMode,
    pub learning_rate: LearningRate,
    /// Environment steps collected before replay updates begin.
    pub learning_starts: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Network mode only.
    pub network_lr: f64,
    pub hidden: usize,
    pub target_sync: usize,
    pub mdp: MdpConfig,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            seed: 7,
            mode: QMode::Tabular,
            learning_rate: LearningRate::VisitDecay { kappa: 2.0 },
            learning_starts: 20_000,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 1.0,
            batch_size: 32,
            replay_capacity: 10_000,
            network_lr: 1e-3,
            hidden: 16,
            target_sync: 100,
            mdp: MdpConfig::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        self.mdp.validate()?;
        if self.episodes == 0 {
            return Err(DqnError::InvalidConfig("episode budget must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DqnError::InvalidConfig(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if let LearningRate::Constant { alpha } = self.learning_rate {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(DqnError::InvalidConfig(format!("alpha {alpha} outside (0, 1]")));
            }
        }
        if let LearningRate::VisitDecay { kappa } | LearningRate::DataDecay { kappa } = self.learning_rate {
            if kappa <= 0.0 {
                return Err(DqnError::InvalidConfig("kappa must be positive".into()));
            }
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return Err(DqnError::InvalidConfig("batch size and replay capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.episodes as f64 * self.epsilon_decay_fraction).max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Greedy policy plus the Q-values it was read from.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub q: QTable,
}

#[derive(Serialize, Deserialize)]
struct PolicyEntry {
    action: Action,
    q_values: [f64; N_ACTIONS],
}

impl Policy {
    pub fn action(&self, s: ComplianceState) -> Action {
        self.q.greedy(s)
    }

    pub fn actions(&self) -> [Action; N_STATES] {
        std::array::from_fn(|i| self.q.greedy(ComplianceState::from_index(i)))
    }

    /// `{state key: {action, q_values}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: std::collections::BTreeMap<String, PolicyEntry> = ComplianceState::all()
            .map(|s| (s.key(), PolicyEntry { action: self.q.greedy(s), q_values: self.q.row(s) }))
            .collect();
        serde_json::to_value(map).expect("serializable")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, DqnError> {
        let map: std::collections::BTreeMap<String, PolicyEntry> = serde_json::from_value(value.clone())?;
        let mut q = QTable::default();
        let mut seen = 0;
        for (key, entry) in map {
            let s = ComplianceState::parse_key(&key)?;
            q.values[s.index()] = entry.q_values;
            seen += 1;
        }
        if seen != N_STATES {
            return Err(DqnError::InvalidConfig(format!("policy lists {seen} states, expected {N_STATES}")));
        }
        if !q.is_finite() {
            return Err(DqnError::InvalidConfig("policy contains non-finite q-values".into()));
        }
        Ok(Self { q })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DqnHistory {
    pub episode_returns: Vec<f64>,
    pub updates: u64,
}

/// Tabular learner state, exposed so callers can keep training.
#[derive(Clone, Debug)]
pub struct TabularAgent {
    pub q: QTable,
    counts: [[u64; N_ACTIONS]; N_STATES],
    data: [[u64; N_ACTIONS]; N_STATES],
}

impl Default for TabularAgent {
    fn default() -> Self {
        Self { q: QTable::default(), counts: [[0; N_ACTIONS]; N_STATES], data: [[0; N_ACTIONS]; N_STATES] }
    }
}

impl TabularAgent {
    pub fn apply(&mut self, t: &Transition, schedule: LearningRate, gamma: f64) {
        let (i, j) = (t.s.index(), t.a.index());
        let alpha = match schedule {
            LearningRate::DataDecay { kappa } => kappa / (kappa + self.data[i][j] as f64),
            other => other.alpha(self.counts[i][j]),
        };
        self.counts[i][j] += 1;
        q_update(&mut self.q, t, alpha, gamma);
    }

    /// Records one collected transition for data-count schedules.
    pub fn observe(&mut self, s: ComplianceState, a: Action) {
        self.data[s.index()][a.index()] += 1;
    }

    pub fn update_count(&self, s: ComplianceState, a: Action) -> u64 {
        self.counts[s.index()][a.index()]
    }
}

fn epsilon_greedy<R: Rng + ?Sized>(row: &[f64; N_ACTIONS], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        *Action::ALL.choose(rng).expect("non-empty")
    } else {
        Action::ALL[greedy_index(row)]
    }
}

/// Runs tabular training starting from `agent`.
pub fn train_tabular_from(
    config: &DqnConfig,
    agent: &mut TabularAgent,
    rng: &mut SplitMix64,
) -> Result<DqnHistory, DqnError> {
    config.validate()?;
    let mut env = ComplianceEnv::new(config.mdp.clone());
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut history = DqnHistory::default();
    let mut steps = 0usize;
    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let mut s = env.reset(rng);
        let mut ret = 0.0;
        loop {
            let a = epsilon_greedy(&agent.q.row(s), epsilon, rng);
            let (r, s_next, terminal) = env.step(s, a, rng);
            ret += r;
            replay.push(Transition { s, a, r, s_next, terminal });
            agent.observe(s, a);
            steps += 1;
            if steps >= config.learning_starts {
                for t in replay.sample(rng, config.batch_size) {
                    agent.apply(&t, config.learning_rate, config.gamma);
                    history.updates += 1;
                }
            }
            if terminal {
                break;
            }
            s = s_next;
        }
        history.episode_returns.push(ret);
    }
    Ok(history)
}

/// Dense Q-network over a 5-feature state encoding.
#[derive(Clone, Debug)]
pub struct QNetwork {
    params: ParamStore,
    hidden: DenseParams,
    out: DenseParams,
}

impl QNetwork {
    pub fn new(hidden: usize, rng: &mut SplitMix64) -> Self {
        let mut params = ParamStore::new();
        let h = DenseParams::register(&mut params, "q.hidden", 5, hidden, rng);
        let out = DenseParams::register(&mut params, "q.out", hidden, N_ACTIONS, rng);
        Self { params, hidden: h, out }
    }

    pub fn values(&self, s: ComplianceState) -> [f64; N_ACTIONS] {
        let h: Vec<f64> = self.hidden.eval(&self.params, &s.features()).into_iter().map(f64::tanh).collect();
        let q = self.out.eval(&self.params, &h);
        [q[0], q[1], q[2]]
    }

    pub fn table(&self) -> QTable {
        let mut q = QTable::default();
        for s in ComplianceState::all() {
            q.values[s.index()] = self.values(s);
        }
        q
    }

    /// Mean squared TD error gradient over `batch` with targets from `target`.
    fn step(&mut self, batch: &[Transition], target: &QNetwork, gamma: f64, opt: &mut Adam) -> Result<(), DqnError> {
        let mut grads = Gradients::zeros_for(&self.params);
        let scale = 1.0 / batch.len() as f64;
        for t in batch {
            let bootstrap =
                if t.terminal { 0.0 } else { gamma * target.values(t.s_next).into_iter().fold(f64::NEG_INFINITY, f64::max) };
            let y = t.r + bootstrap;
            let mut g = Graph::new(&self.params);
            let x = g.input(Tensor::vector(t.s.features()))?;
            let h = self.hidden.forward(&mut g, x)?;
            let h = g.tanh(h)?;
            let q = self.out.forward(&mut g, h)?;
            let qa = g.pick(q, t.a.index())?;
            let y = g.input(Tensor::scalar(y))?;
            let diff = g.sub(qa, y)?;
            let loss = g.square(diff)?;
            g.backward_into(loss, &mut grads, scale)?;
        }
        opt.step(&mut self.params, &grads);
        Ok(())
    }
}

fn train_network(config: &DqnConfig, rng: &mut SplitMix64) -> Result<(QTable, DqnHistory), DqnError> {
    let mut online = QNetwork::new(config.hidden, rng);
    let mut target = online.clone();
    let mut opt = Adam::new(config.network_lr);
    let mut env = ComplianceEnv::new(config.mdp.clone());
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut history = DqnHistory::default();
    let mut steps = 0usize;
    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let mut s = env.reset(rng);
        let mut ret = 0.0;
        loop {
            let a = epsilon_greedy(&online.values(s), epsilon, rng);
            let (r, s_next, terminal) = env.step(s, a, rng);
            ret += r;
            replay.push(Transition { s, a, r, s_next, terminal });
            let batch = replay.sample(rng, config.batch_size);
            online.step(&batch, &target, config.gamma, &mut opt)?;
            history.updates += 1;
            steps += 1;
            if steps.is_multiple_of(config.target_sync.max(1)) {
                target = online.clone();
            }
            if terminal {
                break;
            }
            s = s_next;
        }
        history.episode_returns.push(ret);
    }
    Ok((online.table(), history))
}

/// Trains a policy in the simulated workflow.
pub fn train_dqn(config: &DqnConfig) -> Result<(Policy, DqnHistory), DqnError> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let (q, history) = match config.mode {
        QMode::Tabular => {
            let mut agent = TabularAgent::default();
            let history = train_tabular_from(config, &mut agent, &mut rng)?;
            (agent.q, history)
        }
        QMode::Network => train_network(config, &mut rng)?,
    };
    if !q.is_finite() {
        return Err(NnError::NonFinite("q-values").into());
    }
    Ok((Policy { q }, history))
}

/// Mean undiscounted episode return of a fixed state → action rule.
pub fn average_return<F>(mdp: &MdpConfig, episodes: usize, seed: u64, mut choose: F) -> f64
where
    F: FnMut(ComplianceState) -> Action,
{
    let mut rng = SplitMix64::new(seed);
    let mut env = ComplianceEnv::new(mdp.clone());
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        loop {
            let (r, next, terminal) = env.step(s, choose(s), &mut rng);
            total += r;
            if terminal {
                break;
            }
            s = next;
        }
    }
    total / episodes.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(i: usize) -> ComplianceState {
        ComplianceState::from_index(i)
    }

    #[test]
    fn twelve_states_round_trip() {
        let all: Vec<_> = ComplianceState::all().collect();
        assert_eq!(all.len(), 12);
        for (i, s) in all.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(ComplianceState::parse_key(&s.key()).unwrap(), *s);
        }
    }

    #[test]
    fn bucket_thresholds() {
        assert_eq!(RiskBucket::from_score(0.0), RiskBucket::Low);
        assert_eq!(RiskBucket::from_score(0.3299), RiskBucket::Low);
        assert_eq!(RiskBucket::from_score(0.33), RiskBucket::Med);
        assert_eq!(RiskBucket::from_score(0.66), RiskBucket::High);
        assert_eq!(QueueLoad::from_backlog(9, 10), QueueLoad::Light);
        assert_eq!(QueueLoad::from_backlog(10, 10), QueueLoad::Heavy);
    }

    #[test]
    fn q_update_arithmetic() {
        let s = st(0);
        let mut q = QTable::default();
        let t = Transition { s, a: Action::AutoApprove, r: 1.0, s_next: st(1), terminal: false };
        q_update(&mut q, &t, 0.5, 0.9);
        assert_eq!(q.get(s, Action::AutoApprove), 0.5);

        let mut q = QTable::default();
        q.values[1] = [3.0, 7.0, -1.0];
        q_update(&mut q, &Transition { r: 2.5, ..t }, 1.0, 0.0);
        assert_eq!(q.get(s, Action::AutoApprove), 2.5);

        let mut q = QTable::default();
        q.values[0][0] = 2.0;
        q_update(&mut q, &Transition { r: -1.0, terminal: true, ..t }, 0.5, 0.9);
        assert_eq!(q.get(s, Action::AutoApprove), 0.5);
    }

    #[test]
    fn reward_table() {
        let mdp = MdpConfig::default();
        assert_eq!(mdp.reward(Action::AutoApprove, true), -10.0);
        assert_eq!(mdp.reward(Action::AutoApprove, false), 1.0);
        assert_eq!(mdp.reward(Action::Reject, true), 1.0);
        assert_eq!(mdp.reward(Action::Reject, false), -5.0);
        assert_eq!(mdp.reward(Action::Escalate, true), -0.2);
        assert_eq!(mdp.reward(Action::Escalate, false), -0.2);
    }

    #[test]
    fn high_outlier_approve_of_violation_costs_ten() {
        let mdp = MdpConfig { p_violation: [1.0; 3], ..MdpConfig::default() };
        let mut env = ComplianceEnv::new(mdp);
        let mut rng = SplitMix64::new(1);
        let s = ComplianceState::new(RiskBucket::High, AnomalyFlag::Outlier, QueueLoad::Light);
        env.reset(&mut rng);
        assert_eq!(env.step(s, Action::AutoApprove, &mut rng).0, -10.0);
        for i in 0..12 {
            assert_eq!(env.step(st(i), Action::Escalate, &mut rng).0, -0.2);
        }
    }

    #[test]
    fn violation_probabilities_with_outlier_bonus_and_cap() {
        let mdp = MdpConfig::default();
        let p = |r, a| mdp.violation_probability(ComplianceState::new(r, a, QueueLoad::Light));
        assert_eq!(p(RiskBucket::Low, AnomalyFlag::Inlier), 0.05);
        assert!((p(RiskBucket::Med, AnomalyFlag::Outlier) - 0.45).abs() < 1e-15);
        assert!((p(RiskBucket::High, AnomalyFlag::Outlier) - 0.95).abs() < 1e-15);
        let capped = MdpConfig { p_violation: [0.05, 0.4, 0.97], ..MdpConfig::default() };
        let s = ComplianceState::new(RiskBucket::High, AnomalyFlag::Outlier, QueueLoad::Heavy);
        assert_eq!(capped.violation_probability(s), 0.99);
    }

    #[test]
    fn episodes_last_episode_len_steps() {
        let mut env = ComplianceEnv::new(MdpConfig::default());
        let mut rng = SplitMix64::new(3);
        let mut s = env.reset(&mut rng);
        for step in 1..=64 {
            let (_, next, terminal) = env.step(s, Action::Escalate, &mut rng);
            assert_eq!(terminal, step == 64);
            s = next;
        }
    }

    #[test]
    fn replay_buffer_is_bounded() {
        let mut buf = ReplayBuffer::new(3);
        let t = Transition { s: st(0), a: Action::Reject, r: 0.0, s_next: st(0), terminal: false };
        for i in 0..5 {
            buf.push(Transition { r: i as f64, ..t });
        }
        assert_eq!(buf.len(), 3);
        let mut rng = SplitMix64::new(0);
        assert!(buf.sample(&mut rng, 50).iter().all(|t| t.r >= 2.0));
        assert!(ReplayBuffer::new(2).sample(&mut rng, 4).is_empty());
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let c = DqnConfig { episodes: 101, epsilon_decay_fraction: 1.0, ..DqnConfig::default() };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(101) - 0.05).abs() < 1e-12);
        assert!(c.epsilon(50) < c.epsilon(49));
    }

    #[test]
    fn visit_decay_starts_at_one() {
        let lr = LearningRate::VisitDecay { kappa: 4.0 };
        assert_eq!(lr.alpha(0), 1.0);
        assert_eq!(lr.alpha(4), 0.5);
        assert_eq!(LearningRate::Constant { alpha: 0.1 }.alpha(1000), 0.1);
    }

    #[test]
    fn greedy_fixed_point_without_exploration() {
        let mdp = MdpConfig { p_violation: [0.0, 1.0, 1.0], outlier_bonus: 0.0, ..MdpConfig::default() };
        let config = DqnConfig {
            episodes: 30,
            gamma: 0.0,
            epsilon_start: 0.0,
            epsilon_end: 0.0,
            mdp,
            ..DqnConfig::default()
        };
        let mut agent = TabularAgent::default();
        let mut rng = SplitMix64::new(11);
        train_tabular_from(&config, &mut agent, &mut rng).unwrap();
        let before = agent.q.clone();
        train_tabular_from(&config, &mut agent, &mut rng).unwrap();
        assert_eq!(agent.q, before);
    }

    #[test]
    fn tabular_training_is_bit_reproducible() {
        let config = DqnConfig { episodes: 40, ..DqnConfig::default() };
        let (a, _) = train_dqn(&config).unwrap();
        let (b, _) = train_dqn(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_json_round_trip() {
        let (p, _) = train_dqn(&DqnConfig { episodes: 20, ..DqnConfig::default() }).unwrap();
        let back = Policy::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.to_json()["high/outlier/heavy"]["action"], serde_json::json!(p.action(st(11)).as_str()));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(DqnConfig { gamma: 1.0, ..DqnConfig::default() }.validate().is_err());
        assert!(DqnConfig { episodes: 0, ..DqnConfig::default() }.validate().is_err());
        assert!(DqnConfig { learning_rate: LearningRate::Constant { alpha: 0.0 }, ..DqnConfig::default() }
            .validate()
            .is_err());
    }
}
