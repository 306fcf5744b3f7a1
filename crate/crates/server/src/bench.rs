//! Closed-loop HTTP load bench against a running service.
//!
//! Each concurrency level runs N workers that each keep exactly one
//! `POST /v1/events` in flight for the level's duration. The report has one
//! row per level with the columns of the classic concurrent-users table,
//! followed by latency percentiles.

use std::time::{Duration, Instant};

use complyflow::domain::Event;
use complyflow::stream::LatencyStats;
use serde_json::Value;
use thiserror::Error;

use crate::sysstat::{cpu_percent, ProcessStats};

pub const HEADER: [&str; 9] = [
    "Concurrent Users",
    "Response Time (ms)",
    "TPS",
    "CPU Usage (%)",
    "Memory Usage (%)",
    "Success Rate (%)",
    "p50 (ms)",
    "p95 (ms)",
    "p99 (ms)",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("target {target} unreachable: {message}")]
    TargetUnreachable { target: String, message: String },
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("writing report: {0}")]
    Report(String),
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Service base URL, e.g. `http://127.0.0.1:8080`.
    pub target: String,
    pub levels: Vec<usize>,
    pub duration: Duration,
    pub token: Option<String>,
    pub request_timeout: Duration,
    /// Events replayed round-robin with fresh ids.
    pub events: Vec<Event>,
    /// Prefix for generated event ids so repeated runs do not collide.
    pub run_id: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelResult {
    pub concurrent_users: usize,
    pub requests: u64,
    pub successes: u64,
    pub elapsed_s: f64,
    /// Response time of every request that got an HTTP response.
    pub latencies_ms: Vec<f64>,
    pub cpu_percent: Option<f64>,
    pub memory_percent: Option<f64>,
}

impl LevelResult {
    pub fn mean_ms(&self) -> Option<f64> {
        (!self.latencies_ms.is_empty()).then(|| self.latencies_ms.iter().sum::<f64>() / self.latencies_ms.len() as f64)
    }

    pub fn tps(&self) -> f64 {
        complyflow::stream::throughput(self.successes as usize, self.elapsed_s)
    }

    /// Fraction in [0, 1]; 1 when nothing was sent.
    pub fn success_rate(&self) -> f64 {
        if self.requests == 0 {
            1.0
        } else {
            self.successes as f64 / self.requests as f64
        }
    }

    pub fn percentile(&self, p: f64) -> Option<f64> {
        LatencyStats::from_samples(self.latencies_ms.clone()).percentile(p).ok()
    }

    fn row(&self) -> Vec<String> {
        let f = |v: Option<f64>, digits: usize| v.map(|x| format!("{x:.digits$}")).unwrap_or_default();
        vec![
            self.concurrent_users.to_string(),
            f(self.mean_ms(), 2),
            format!("{:.1}", self.tps()),
            f(self.cpu_percent, 1),
            f(self.memory_percent, 1),
            format!("{:.2}", self.success_rate() * 100.0),
            f(self.percentile(50.0), 2),
            f(self.percentile(95.0), 2),
            f(self.percentile(99.0), 2),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub levels: Vec<LevelResult>,
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let err = |e: csv::Error| BenchError::Report(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).map_err(err)?;
        for l in &self.levels {
            w.write_record(l.row()).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BenchError::Report(e.to_string()))
    }
}

#[derive(Clone)]
struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
}

impl Client {
    fn request(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        let rb = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    async fn process_stats(&self) -> Option<ProcessStats> {
        let v: Value = self.request(reqwest::Method::GET, "/v1/metrics").send().await.ok()?.json().await.ok()?;
        serde_json::from_value(v.get("process")?.clone()).ok()
    }
}

async fn worker(client: &Client, cfg: &BenchConfig, level: usize, w: usize, deadline: Instant) -> (u64, u64, Vec<f64>) {
    let (mut requests, mut ok, mut lat) = (0u64, 0u64, Vec::new());
    let mut n = 0usize;
    while Instant::now() < deadline {
        let mut event = cfg.events[(w + n * level) % cfg.events.len()].clone();
        event.id = format!("{}-c{level}-w{w}-{n}", cfg.run_id);
        n += 1;
        let start = Instant::now();
        requests += 1;
        match client.request(reqwest::Method::POST, "/v1/events").json(&event).send().await {
            Ok(resp) => {
                let success = resp.status().is_success();
                // Drain the body so the connection can be reused.
                let _ = resp.bytes().await;
                lat.push(start.elapsed().as_secs_f64() * 1e3);
                if success {
                    ok += 1;
                }
            }
            Err(e) => log::debug!("request failed: {e}"),
        }
    }
    (requests, ok, lat)
}

async fn run_level(client: &Client, cfg: &BenchConfig, level: usize) -> LevelResult {
    let before = client.process_stats().await;
    let started = Instant::now();
    let deadline = started + cfg.duration;
    let mut tasks = Vec::with_capacity(level);
    let shared = std::sync::Arc::new((client.clone(), cfg.clone()));
    for w in 0..level {
        let s = shared.clone();
        tasks.push(tokio::spawn(async move { worker(&s.0, &s.1, level, w, deadline).await }));
    }
    let mut result = LevelResult { concurrent_users: level, ..LevelResult::default() };
    for t in tasks {
        if let Ok((r, ok, lat)) = t.await {
            result.requests += r;
            result.successes += ok;
            result.latencies_ms.extend(lat);
        }
    }
    result.elapsed_s = started.elapsed().as_secs_f64();
    let after = client.process_stats().await;
    if let (Some(b), Some(a)) = (before, after) {
        result.cpu_percent = Some(cpu_percent(&b, &a, result.elapsed_s));
        result.memory_percent = Some(a.memory_percent());
    }
    result
}

pub async fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.levels.is_empty() || cfg.levels.contains(&0) {
        return Err(BenchError::InvalidConfig("levels must be positive".into()));
    }
    if cfg.events.is_empty() {
        return Err(BenchError::InvalidConfig("no template events".into()));
    }
    let http = reqwest::Client::builder()
        .timeout(cfg.request_timeout)
        .pool_max_idle_per_host(cfg.levels.iter().copied().max().unwrap_or(1))
        .build()
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let client = Client { http, base: cfg.target.trim_end_matches('/').to_owned(), token: cfg.token.clone() };
    let unreachable = |message: String| BenchError::TargetUnreachable { target: cfg.target.clone(), message };
    let resp = client.request(reqwest::Method::GET, "/v1/health").send().await.map_err(|e| unreachable(e.to_string()))?;
    if !resp.status().is_success() {
        return Err(unreachable(format!("health returned {}", resp.status())));
    }
    let mut report = BenchReport::default();
    for &level in &cfg.levels {
        let r = run_level(&client, cfg, level).await;
        log::info!("{level} users: {} requests, {:.1} tps", r.requests, r.tps());
        report.levels.push(r);
    }
    Ok(report)
}
