//! Event-time tumbling windows, threshold alerting, latency percentiles and
//! throughput metering.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Alert, AnomalyFlag, Millis, Severity};

pub const DEFAULT_WINDOW_MS: i64 = 60_000;
pub const DEFAULT_LATENESS_MS: i64 = 5_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("percentile of an empty sample")]
    EmptySample,
    #[error("percentile {0} outside (0, 100]")]
    BadPercentile(f64),
    #[error("invalid alert policy: {0}")]
    BadPolicy(String),
    #[error("window width must be positive, got {0}")]
    BadWidth(i64),
}

/// Epoch-aligned fixed-width windows; window `n` covers `[n·width, (n+1)·width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TumblingWindow {
    pub width_ms: i64,
}

impl Default for TumblingWindow {
    fn default() -> Self {
        Self { width_ms: DEFAULT_WINDOW_MS }
    }
}

impl TumblingWindow {
    pub fn new(width_ms: i64) -> Result<Self, StreamError> {
        if width_ms <= 0 {
            return Err(StreamError::BadWidth(width_ms));
        }
        Ok(Self { width_ms })
    }

    pub fn assign(&self, timestamp: Millis) -> i64 {
        timestamp.div_euclid(self.width_ms)
    }

    pub fn start(&self, index: i64) -> Millis {
        index * self.width_ms
    }

    pub fn end(&self, index: i64) -> Millis {
        (index + 1) * self.width_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertPolicy {
    pub score_warn: f64,
    pub score_high: f64,
    /// Outliers per window at which one extra window-level high alert fires.
    pub rate_threshold: usize,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        Self { score_warn: 0.80, score_high: 0.95, rate_threshold: 10 }
    }
}

impl AlertPolicy {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(0.0 < self.score_warn && self.score_warn < self.score_high && self.score_high <= 1.0) {
            return Err(StreamError::BadPolicy(format!(
                "need 0 < score_warn < score_high <= 1, got {} and {}",
                self.score_warn, self.score_high
            )));
        }
        Ok(())
    }

    pub fn severity(&self, score: f64) -> Option<Severity> {
        if score >= self.score_high {
            Some(Severity::High)
        } else if score >= self.score_warn {
            Some(Severity::Warning)
        } else {
            None
        }
    }
}

/// The parts of a scored case that alerting looks at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCase {
    pub case_id: String,
    pub timestamp: Millis,
    pub risk_score: f64,
    pub anomaly_flag: AnomalyFlag,
}

/// Alerts for one closed window, ordered by severity (high first), then time.
pub fn emit_alerts(policy: &AlertPolicy, window: TumblingWindow, index: i64, cases: &[WindowCase]) -> Vec<Alert> {
    let mut alerts: Vec<Alert> = Vec::new();
    for c in cases {
        if let Some(severity) = policy.severity(c.risk_score) {
            let threshold = if severity == Severity::High { policy.score_high } else { policy.score_warn };
            alerts.push(Alert {
                alert_id: String::new(),
                case_id: c.case_id.clone(),
                severity,
                reason: format!("risk score {:.4} >= {threshold}", c.risk_score),
                emitted_at: c.timestamp,
            });
        }
    }
    let outliers = cases.iter().filter(|c| c.anomaly_flag == AnomalyFlag::Outlier).count();
    if policy.rate_threshold > 0 && outliers >= policy.rate_threshold {
        alerts.push(Alert {
            alert_id: String::new(),
            case_id: format!("window-{index}"),
            severity: Severity::High,
            reason: format!("{outliers} outliers in window {index} (threshold {})", policy.rate_threshold),
            emitted_at: window.end(index) - 1,
        });
    }
    alerts.sort_by(|a, b| {
        b.severity.cmp(&a.severity).then(a.emitted_at.cmp(&b.emitted_at)).then_with(|| a.case_id.cmp(&b.case_id))
    });
    for (i, a) in alerts.iter_mut().enumerate() {
        a.alert_id = format!("w{index}-{i}");
    }
    alerts
}

/// Nearest-rank percentile over an ascending slice: the value at 1-based rank ⌈p/100·n⌉.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64, StreamError> {
    if sorted.is_empty() {
        return Err(StreamError::EmptySample);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(StreamError::BadPercentile(p));
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Latency sample in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    samples: Vec<f64>,
    #[serde(skip)]
    sorted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mut s = Self { samples, sorted: false };
        s.sort();
        s
    }

    pub fn record(&mut self, ms: f64) {
        self.samples.push(ms);
        self.sorted = false;
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    fn sort(&mut self) {
        if !self.sorted {
            self.samples.sort_by(f64::total_cmp);
            self.sorted = true;
        }
    }

    pub fn percentile(&mut self, p: f64) -> Result<f64, StreamError> {
        self.sort();
        nearest_rank(&self.samples, p)
    }

    pub fn summary(&mut self) -> Option<LatencySummary> {
        if self.samples.is_empty() {
            return None;
        }
        self.sort();
        let n = self.samples.len();
        Some(LatencySummary {
            count: n,
            mean_ms: self.samples.iter().sum::<f64>() / n as f64,
            p50_ms: nearest_rank(&self.samples, 50.0).ok()?,
            p95_ms: nearest_rank(&self.samples, 95.0).ok()?,
            p99_ms: nearest_rank(&self.samples, 99.0).ok()?,
            max_ms: self.samples[n - 1],
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

pub fn throughput(count: usize, seconds: f64) -> f64 {
    if count == 0 || seconds <= 0.0 {
        0.0
    } else {
        count as f64 / seconds
    }
}

/// Records completion times and reports the rate over the middle 90% of the run.
#[derive(Clone, Debug)]
pub struct ThroughputMeter {
    start: Instant,
    completions: Vec<f64>,
}

impl Default for ThroughputMeter {
    fn default() -> Self {
        Self::new()
    }
}

impl ThroughputMeter {
    pub fn new() -> Self {
        Self { start: Instant::now(), completions: Vec::new() }
    }

    pub fn record(&mut self) {
        self.completions.push(self.start.elapsed().as_secs_f64());
    }

    pub fn record_at(&mut self, seconds_since_start: f64) {
        self.completions.push(seconds_since_start);
    }

    pub fn count(&self) -> usize {
        self.completions.len()
    }

    pub fn steady_state(&self) -> f64 {
        steady_state_throughput(&self.completions)
    }
}

/// Completions per second, ignoring the first and last 5% of the run's span.
pub fn steady_state_throughput(completion_seconds: &[f64]) -> f64 {
    if completion_seconds.len() < 2 {
        return 0.0;
    }
    let first = completion_seconds.iter().copied().fold(f64::INFINITY, f64::min);
    let last = completion_seconds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = last - first;
    if span <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = (first + 0.05 * span, last - 0.05 * span);
    let inside = completion_seconds.iter().filter(|&&t| t >= lo && t <= hi).count();
    throughput(inside, hi - lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedWindow {
    pub index: i64,
    pub start: Millis,
    pub end: Millis,
    pub count: usize,
    pub outliers: usize,
    pub alerts: Vec<Alert>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertCounts {
    pub info: u64,
    pub warning: u64,
    pub high: u64,
}

impl AlertCounts {
    fn add(&mut self, s: Severity) {
        match s {
            Severity::Info => self.info += 1,
            Severity::Warning => self.warning += 1,
            Severity::High => self.high += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub windows_closed: u64,
    pub alerts_by_severity: AlertCounts,
    pub throughput_eps: f64,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub dead_letter_count: u64,
}

/// Single-consumer window assembler with a lateness allowance.
///
/// The watermark trails the largest timestamp seen by `lateness_ms`. A window
/// closes once the watermark reaches its end; events for closed windows are
/// counted as dead letters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProcessor {
    window: TumblingWindow,
    lateness_ms: i64,
    policy: AlertPolicy,
    open: BTreeMap<i64, Vec<WindowCase>>,
    max_seen: Option<Millis>,
    /// Windows below this index are closed.
    closed_below: i64,
    windows_closed: u64,
    alert_counts: AlertCounts,
    dead_letters: u64,
    accepted: u64,
}

impl WindowProcessor {
    pub fn new(window: TumblingWindow, lateness_ms: i64, policy: AlertPolicy) -> Self {
        Self {
            window,
            lateness_ms,
            policy,
            open: BTreeMap::new(),
            max_seen: None,
            closed_below: i64::MIN,
            windows_closed: 0,
            alert_counts: AlertCounts::default(),
            dead_letters: 0,
            accepted: 0,
        }
    }

    pub fn window(&self) -> TumblingWindow {
        self.window
    }

    /// Adds one case; returns the windows this closes, oldest first.
    pub fn push(&mut self, case: WindowCase) -> Vec<ClosedWindow> {
        let idx = self.window.assign(case.timestamp);
        if idx < self.closed_below {
            self.dead_letters += 1;
            return Vec::new();
        }
        self.accepted += 1;
        self.max_seen = Some(self.max_seen.map_or(case.timestamp, |m| m.max(case.timestamp)));
        self.open.entry(idx).or_default().push(case);
        let watermark = self.max_seen.expect("just set") - self.lateness_ms;
        // Window n is complete once the watermark passes its end.
        let closable = self.window.assign(watermark);
        self.close_below(closable)
    }

    /// Closes every open window.
    pub fn flush(&mut self) -> Vec<ClosedWindow> {
        match self.open.keys().next_back().copied() {
            Some(last) => self.close_below(last + 1),
            None => Vec::new(),
        }
    }

    fn close_below(&mut self, bound: i64) -> Vec<ClosedWindow> {
        let mut out = Vec::new();
        if bound <= self.closed_below {
            return out;
        }
        let rest = self.open.split_off(&bound);
        let done = std::mem::replace(&mut self.open, rest);
        for (index, cases) in done {
            let alerts = emit_alerts(&self.policy, self.window, index, &cases);
            for a in &alerts {
                self.alert_counts.add(a.severity);
            }
            self.windows_closed += 1;
            out.push(ClosedWindow {
                index,
                start: self.window.start(index),
                end: self.window.end(index),
                count: cases.len(),
                outliers: cases.iter().filter(|c| c.anomaly_flag == AnomalyFlag::Outlier).count(),
                alerts,
            });
        }
        self.closed_below = bound;
        out
    }

    pub fn dead_letters(&self) -> u64 {
        self.dead_letters
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn open_count(&self) -> usize {
        self.open.values().map(Vec::len).sum()
    }

    pub fn metrics(&self, latency: &mut LatencyStats, throughput_eps: f64) -> StreamMetrics {
        let summary = latency.summary();
        StreamMetrics {
            windows_closed: self.windows_closed,
            alerts_by_severity: self.alert_counts.clone(),
            throughput_eps,
            p50_ms: summary.map(|s| s.p50_ms),
            p95_ms: summary.map(|s| s.p95_ms),
            p99_ms: summary.map(|s| s.p99_ms),
            dead_letter_count: self.dead_letters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wc(id: &str, ts: Millis, score: f64, outlier: bool) -> WindowCase {
        WindowCase {
            case_id: id.into(),
            timestamp: ts,
            risk_score: score,
            anomaly_flag: if outlier { AnomalyFlag::Outlier } else { AnomalyFlag::Inlier },
        }
    }

    #[test]
    fn window_assignment() {
        let w = TumblingWindow::default();
        assert_eq!(w.assign(125_000), 2);
        assert_eq!(w.assign(120_000), 2);
        assert_eq!(w.assign(119_999), 1);
        assert_eq!((w.start(2), w.end(2)), (120_000, 180_000));
        assert!(TumblingWindow::new(0).is_err());
    }

    #[test]
    fn severity_thresholds() {
        let p = AlertPolicy::default();
        let a = emit_alerts(&p, TumblingWindow::default(), 0, &[wc("a", 1, 0.97, false)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].severity, Severity::High);
        assert!(emit_alerts(&p, TumblingWindow::default(), 0, &[wc("b", 1, 0.5, false)]).is_empty());
        let w = emit_alerts(&p, TumblingWindow::default(), 0, &[wc("c", 1, 0.80, false)]);
        assert_eq!(w[0].severity, Severity::Warning);
        assert!(AlertPolicy { score_warn: 0.9, score_high: 0.9, rate_threshold: 1 }.validate().is_err());
    }

    #[test]
    fn rate_rule_adds_one_window_alert() {
        let p = AlertPolicy::default();
        let cases: Vec<_> = (0..12).map(|i| wc(&format!("c{i}"), i, 0.1, true)).collect();
        let alerts = emit_alerts(&p, TumblingWindow::default(), 3, &cases);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].case_id, "window-3");
        assert_eq!(alerts[0].severity, Severity::High);
        let nine: Vec<_> = cases[..9].to_vec();
        assert!(emit_alerts(&p, TumblingWindow::default(), 3, &nine).is_empty());
    }

    #[test]
    fn alerts_sorted_and_idempotent() {
        let p = AlertPolicy::default();
        let cases = vec![wc("late-warn", 50, 0.85, false), wc("high", 70, 0.99, false), wc("early-warn", 10, 0.9, false)];
        let a = emit_alerts(&p, TumblingWindow::default(), 0, &cases);
        let ids: Vec<_> = a.iter().map(|x| x.case_id.as_str()).collect();
        assert_eq!(ids, vec!["high", "early-warn", "late-warn"]);
        assert_eq!(a, emit_alerts(&p, TumblingWindow::default(), 0, &cases));
    }

    #[test]
    fn nearest_rank_cases() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 95.0).unwrap(), 95.0);
        assert_eq!(nearest_rank(&v, 100.0).unwrap(), 100.0);
        assert_eq!(nearest_rank(&v, 0.5).unwrap(), 1.0);
        for p in [1.0, 50.0, 99.9] {
            assert_eq!(nearest_rank(&[42.0], p).unwrap(), 42.0);
        }
        assert_eq!(nearest_rank(&[], 50.0), Err(StreamError::EmptySample));
        assert!(nearest_rank(&v, 0.0).is_err());
    }

    #[test]
    fn throughput_arithmetic() {
        assert_eq!(throughput(10_000, 2.0), 5_000.0);
        assert_eq!(throughput(0, 2.0), 0.0);
        // Evenly spaced completions over 10 s at 1 000 per second.
        let times: Vec<f64> = (0..10_000).map(|i| i as f64 / 1000.0).collect();
        let r = steady_state_throughput(&times);
        assert!((r - 1000.0).abs() < 1.0, "{r}");
        assert_eq!(steady_state_throughput(&[]), 0.0);
    }

    #[test]
    fn processor_closes_after_lateness_and_counts_dead_letters() {
        let mut p = WindowProcessor::new(TumblingWindow::new(1_000).unwrap(), 500, AlertPolicy::default());
        assert!(p.push(wc("a", 100, 0.1, false)).is_empty());
        assert!(p.push(wc("b", 1_200, 0.1, false)).is_empty());
        // Watermark 1 000 closes window 0.
        let closed = p.push(wc("c", 1_500, 0.1, false));
        assert_eq!(closed.len(), 1);
        assert_eq!((closed[0].index, closed[0].count), (0, 1));
        // Within lateness for window 1, too late for window 0.
        assert!(p.push(wc("late-ok", 1_100, 0.1, false)).is_empty());
        assert!(p.push(wc("too-late", 900, 0.1, false)).is_empty());
        assert_eq!(p.dead_letters(), 1);
        let rest = p.flush();
        assert_eq!(rest.iter().map(|w| w.count).sum::<usize>(), 3);
        assert_eq!(p.accepted(), 4);
    }

    #[test]
    fn latency_summary_is_monotone() {
        let mut s = LatencyStats::new();
        for v in [5.0, 1.0, 9.0, 3.0, 7.0] {
            s.record(v);
        }
        let sum = s.summary().unwrap();
        assert!(sum.p50_ms <= sum.p95_ms && sum.p95_ms <= sum.p99_ms && sum.p99_ms <= sum.max_ms);
        assert_eq!(sum.p50_ms, 5.0);
        assert_eq!(LatencyStats::new().summary(), None);
    }
}
