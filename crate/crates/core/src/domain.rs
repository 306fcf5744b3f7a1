//! Events, cases, verdicts, alerts and labels shared by every subsystem.
//!
//! All types serialize as flat snake_case JSON objects. Timestamps are integer
//! milliseconds since the Unix epoch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Millis = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Online,
    Branch,
    Api,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Online, Channel::Branch, Channel::Api];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Online => "online",
            Channel::Branch => "branch",
            Channel::Api => "api",
        }
    }
}

/// An ingested transaction, optionally carrying raw features and a document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    pub timestamp: Millis,
    pub account: String,
    pub amount: f64,
    pub channel: Channel,
    pub region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_text: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("event id must not be empty")]
    EmptyId,
    #[error("event {0}: amount must be a non-negative finite number")]
    BadAmount(String),
    #[error("event {0}: timestamp must be non-negative")]
    BadTimestamp(String),
    #[error("event {0}: features contain non-finite values")]
    NonFiniteFeatures(String),
}

impl Event {
    pub fn validate(&self) -> Result<(), EventError> {
        if self.id.is_empty() {
            return Err(EventError::EmptyId);
        }
        if !(self.amount.is_finite() && self.amount >= 0.0) {
            return Err(EventError::BadAmount(self.id.clone()));
        }
        if self.timestamp < 0 {
            return Err(EventError::BadTimestamp(self.id.clone()));
        }
        if let Some(f) = &self.features {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(EventError::NonFiniteFeatures(self.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyFlag {
    Inlier,
    Outlier,
}

impl AnomalyFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyFlag::Inlier => "inlier",
            AnomalyFlag::Outlier => "outlier",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    PendingScore,
    AutoApproved,
    AutoRejected,
    PendingReview,
    ResolvedApproved,
    ResolvedRejected,
}

impl CaseStatus {
    pub const ALL: [CaseStatus; 6] = [
        CaseStatus::PendingScore,
        CaseStatus::AutoApproved,
        CaseStatus::AutoRejected,
        CaseStatus::PendingReview,
        CaseStatus::ResolvedApproved,
        CaseStatus::ResolvedRejected,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CaseStatus::AutoApproved
                | CaseStatus::AutoRejected
                | CaseStatus::ResolvedApproved
                | CaseStatus::ResolvedRejected
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseStatus::PendingScore => "pending_score",
            CaseStatus::AutoApproved => "auto_approved",
            CaseStatus::AutoRejected => "auto_rejected",
            CaseStatus::PendingReview => "pending_review",
            CaseStatus::ResolvedApproved => "resolved_approved",
            CaseStatus::ResolvedRejected => "resolved_rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Rules,
    Model,
    Human,
}

impl DecisionSource {
    pub const ALL: [DecisionSource; 3] =
        [DecisionSource::Rules, DecisionSource::Model, DecisionSource::Human];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplianceCase {
    pub case_id: String,
    pub event_ref: String,
    pub risk_score: f64,
    pub anomaly_flag: AnomalyFlag,
    #[serde(default)]
    pub doc_class: Option<String>,
    pub status: CaseStatus,
    /// Who produced the terminal decision; unset until the case is terminal.
    #[serde(default)]
    pub decided_by: Option<DecisionSource>,
    pub created_at: Millis,
    #[serde(default)]
    pub resolved_at: Option<Millis>,
}

impl ComplianceCase {
    /// A freshly ingested case awaiting scoring. The case id mirrors the event id.
    pub fn pending(event: &Event) -> Self {
        Self {
            case_id: event.id.clone(),
            event_ref: event.id.clone(),
            risk_score: 0.0,
            anomaly_flag: AnomalyFlag::Inlier,
            doc_class: None,
            status: CaseStatus::PendingScore,
            decided_by: None,
            created_at: event.timestamp,
            resolved_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub case_id: String,
    pub decision: Decision,
    pub source: DecisionSource,
    #[serde(default)]
    pub reviewer_id: Option<String>,
    pub timestamp: Millis,
}

impl Verdict {
    pub fn automated(case_id: &str, decision: Decision, source: DecisionSource, timestamp: Millis) -> Self {
        Self { case_id: case_id.to_owned(), decision, source, reviewer_id: None, timestamp }
    }

    pub fn human(case_id: &str, decision: Decision, reviewer_id: &str, timestamp: Millis) -> Self {
        Self {
            case_id: case_id.to_owned(),
            decision,
            source: DecisionSource::Human,
            reviewer_id: Some(reviewer_id.to_owned()),
            timestamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub case_id: String,
    pub severity: Severity,
    pub reason: String,
    pub emitted_at: Millis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Compliant,
    Violation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOrigin {
    Synthetic,
    HumanReview,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub case_id: String,
    pub ground_truth: GroundTruth,
    pub origin: LabelOrigin,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("case {0} is already resolved")]
    AlreadyResolved(String),
    #[error("case {case_id}: {verdict_source:?} verdict not allowed in status {status:?}")]
    SourceMismatch { case_id: String, status: CaseStatus, verdict_source: DecisionSource },
    #[error("case {0}: human verdict without reviewer_id")]
    MissingReviewer(String),
}

/// Applies a verdict to a case.
///
/// Automated verdicts (rules, model) decide cases still awaiting scoring;
/// human verdicts resolve escalated cases. Terminal states are absorbing.
pub fn transition(case: &ComplianceCase, verdict: &Verdict) -> Result<ComplianceCase, TransitionError> {
    use CaseStatus::*;
    let target = match (case.status, verdict.source, verdict.decision) {
        (s, _, _) if s.is_terminal() => return Err(TransitionError::AlreadyResolved(case.case_id.clone())),
        (PendingScore, DecisionSource::Rules | DecisionSource::Model, Decision::Approve) => AutoApproved,
        (PendingScore, DecisionSource::Rules | DecisionSource::Model, Decision::Reject) => AutoRejected,
        (PendingReview, DecisionSource::Human, Decision::Approve) => ResolvedApproved,
        (PendingReview, DecisionSource::Human, Decision::Reject) => ResolvedRejected,
        (status, source, _) => {
            return Err(TransitionError::SourceMismatch { case_id: case.case_id.clone(), status, verdict_source: source })
        }
    };
    if verdict.source == DecisionSource::Human && verdict.reviewer_id.as_deref().is_none_or(str::is_empty) {
        return Err(TransitionError::MissingReviewer(case.case_id.clone()));
    }
    let mut next = case.clone();
    next.status = target;
    next.decided_by = Some(verdict.source);
    next.resolved_at = Some(verdict.timestamp.max(case.created_at));
    Ok(next)
}

/// Moves a case awaiting scoring into the human review queue.
pub fn escalate(case: &ComplianceCase) -> Result<ComplianceCase, TransitionError> {
    match case.status {
        CaseStatus::PendingScore => {
            let mut next = case.clone();
            next.status = CaseStatus::PendingReview;
            Ok(next)
        }
        s if s.is_terminal() => Err(TransitionError::AlreadyResolved(case.case_id.clone())),
        status => Err(TransitionError::SourceMismatch {
            case_id: case.case_id.clone(),
            status,
            verdict_source: DecisionSource::Model,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(status: CaseStatus) -> ComplianceCase {
        ComplianceCase {
            case_id: "c1".into(),
            event_ref: "c1".into(),
            risk_score: 0.2,
            anomaly_flag: AnomalyFlag::Inlier,
            doc_class: None,
            status,
            decided_by: None,
            created_at: 1_000,
            resolved_at: None,
        }
    }

    fn verdict(decision: Decision, source: DecisionSource) -> Verdict {
        match source {
            DecisionSource::Human => Verdict::human("c1", decision, "rev-7", 2_000),
            s => Verdict::automated("c1", decision, s, 2_000),
        }
    }

    #[test]
    fn human_approve_resolves_escalated_case() {
        let out = transition(&case(CaseStatus::PendingReview), &verdict(Decision::Approve, DecisionSource::Human)).unwrap();
        assert_eq!(out.status, CaseStatus::ResolvedApproved);
        assert_eq!(out.decided_by, Some(DecisionSource::Human));
        assert_eq!(out.resolved_at, Some(2_000));
    }

    #[test]
    fn terminal_state_is_absorbing() {
        let err = transition(&case(CaseStatus::AutoApproved), &verdict(Decision::Reject, DecisionSource::Human)).unwrap_err();
        assert_eq!(err, TransitionError::AlreadyResolved("c1".into()));
    }

    #[test]
    fn rules_reject_on_fresh_case() {
        let out = transition(&case(CaseStatus::PendingScore), &verdict(Decision::Reject, DecisionSource::Rules)).unwrap();
        assert_eq!(out.status, CaseStatus::AutoRejected);
    }

    #[test]
    fn human_on_unescalated_case_is_source_mismatch() {
        let err = transition(&case(CaseStatus::PendingScore), &verdict(Decision::Approve, DecisionSource::Human)).unwrap_err();
        assert!(matches!(err, TransitionError::SourceMismatch { .. }));
    }

    #[test]
    fn human_verdict_requires_reviewer() {
        let mut v = verdict(Decision::Approve, DecisionSource::Human);
        v.reviewer_id = None;
        assert_eq!(
            transition(&case(CaseStatus::PendingReview), &v).unwrap_err(),
            TransitionError::MissingReviewer("c1".into())
        );
    }

    #[test]
    fn resolved_timestamp_never_precedes_creation() {
        let mut v = verdict(Decision::Approve, DecisionSource::Rules);
        v.timestamp = 10;
        let out = transition(&case(CaseStatus::PendingScore), &v).unwrap();
        assert_eq!(out.resolved_at, Some(1_000));
    }

    #[test]
    fn state_machine_closure_over_all_36_combinations() {
        let mut outcomes = 0;
        for status in CaseStatus::ALL {
            for decision in [Decision::Approve, Decision::Reject] {
                for source in DecisionSource::ALL {
                    let before = case(status);
                    match transition(&before, &verdict(decision, source)) {
                        Ok(after) => {
                            assert!(after.status.is_terminal());
                            assert!(!status.is_terminal());
                            let expected_from = if source == DecisionSource::Human {
                                CaseStatus::PendingReview
                            } else {
                                CaseStatus::PendingScore
                            };
                            assert_eq!(status, expected_from);
                            assert!(after.resolved_at.unwrap() >= after.created_at);
                        }
                        Err(TransitionError::AlreadyResolved(_)) => assert!(status.is_terminal()),
                        Err(TransitionError::SourceMismatch { .. }) => assert!(!status.is_terminal()),
                        Err(e) => panic!("unexpected {e}"),
                    }
                    outcomes += 1;
                }
            }
        }
        assert_eq!(outcomes, 36);
    }

    #[test]
    fn escalate_only_from_pending_score() {
        assert_eq!(escalate(&case(CaseStatus::PendingScore)).unwrap().status, CaseStatus::PendingReview);
        assert!(escalate(&case(CaseStatus::PendingReview)).is_err());
        assert!(matches!(escalate(&case(CaseStatus::AutoRejected)), Err(TransitionError::AlreadyResolved(_))));
    }

    #[test]
    fn event_json_is_flat_snake_case() {
        let e = Event {
            id: "e1".into(),
            timestamp: 5,
            account: "acc".into(),
            amount: 12.5,
            channel: Channel::Api,
            region: "eu".into(),
            features: None,
            doc_text: None,
        };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["channel"], "api");
        assert_eq!(v["amount"], 12.5);
        let back: Event = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn event_validation() {
        let mut e = Event {
            id: "e1".into(),
            timestamp: 5,
            account: "acc".into(),
            amount: -1.0,
            channel: Channel::Api,
            region: "eu".into(),
            features: None,
            doc_text: None,
        };
        assert_eq!(e.validate(), Err(EventError::BadAmount("e1".into())));
        e.amount = 3.0;
        e.features = Some(vec![f64::NAN]);
        assert!(matches!(e.validate(), Err(EventError::NonFiniteFeatures(_))));
    }
}
