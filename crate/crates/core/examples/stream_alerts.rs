//! Tumbling-window alerting with a lateness allowance and latency percentiles.

use complyflow::domain::AnomalyFlag;
use complyflow::rng::SplitMix64;
use complyflow::stream::{AlertPolicy, LatencyStats, TumblingWindow, WindowCase, WindowProcessor};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SplitMix64::new(4);
    let mut wp = WindowProcessor::new(TumblingWindow::new(10_000)?, 2_000, AlertPolicy::default());
    let mut latency = LatencyStats::new();
    let mut closed = Vec::new();
    for i in 0..400 {
        // Mostly in order, with a few stragglers up to 15 s late.
        let late = if rng.random_bool(0.03) { rng.random_range(0..15_000) } else { rng.random_range(0..300) };
        let ts = (i * 150 - late).max(0);
        let risk = if (180..200).contains(&i) { rng.random_range(0.9..1.0) } else { rng.random_range(0.0..0.7) };
        let flag = if risk > 0.9 { AnomalyFlag::Outlier } else { AnomalyFlag::Inlier };
        closed.extend(wp.push(WindowCase { case_id: format!("case-{i}"), timestamp: ts, risk_score: risk, anomaly_flag: flag }));
        latency.record(rng.random_range(0.2..3.0));
    }
    closed.extend(wp.flush());
    for w in &closed {
        let sev: Vec<_> = w.alerts.iter().map(|a| a.severity).collect();
        println!("window {:>2} [{:>6}, {:>6})  cases {:>3}  outliers {:>2}  alerts {:?}", w.index, w.start, w.end, w.count, w.outliers, sev);
    }
    let m = wp.metrics(&mut latency, 0.0);
    println!("closed {}  dead letters {}  alerts {:?}", m.windows_closed, m.dead_letter_count, m.alerts_by_severity);
    println!("latency p50 {:?}  p95 {:?}  p99 {:?}", m.p50_ms, m.p95_ms, m.p99_ms);
    Ok(())
}
