mod common;

use std::time::Duration;

use common::{event, TestServer};
use complyflow::domain::Channel;
use complyflow::oracles::sorted_percentile;
use complyflow_server::bench::{run_bench, BenchConfig, BenchError, LevelResult, HEADER};

fn config(target: String, levels: Vec<usize>) -> BenchConfig {
    BenchConfig {
        target,
        levels,
        duration: Duration::from_millis(400),
        token: None,
        request_timeout: Duration::from_secs(5),
        events: (0..10).map(|i| event(&format!("t{i}"), 40.0 + i as f64, Channel::Online, "domestic", "acct-1")).collect(),
        run_id: "test".into(),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn csv_has_one_row_per_level_and_all_requests_succeed() {
    let srv = TestServer::with_rules().await;
    let report = run_bench(&config(format!("http://{}", srv.addr), vec![1, 4])).await.unwrap();
    assert_eq!(report.levels.len(), 2);
    for (l, users) in report.levels.iter().zip([1, 4]) {
        assert_eq!(l.concurrent_users, users);
        assert!(l.requests > 0);
        assert_eq!(l.successes, l.requests);
        assert_eq!(l.latencies_ms.len() as u64, l.requests);
        assert!(l.cpu_percent.is_some() && l.memory_percent.is_some());
    }
    let csv = report.to_csv().unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header, HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "4");
    assert_eq!(&rows[1][5], "100.00");

    // Every accepted event became a case.
    let (_, m) = srv.get("/v1/metrics").await;
    let sent: u64 = report.levels.iter().map(|l| l.successes).sum();
    assert_eq!(m["ingested_total"].as_u64().unwrap(), sent);
    srv.stop().await;
}

#[test]
fn percentiles_match_the_sorting_oracle() {
    let latencies: Vec<f64> = (0..257).map(|i| ((i * 7919) % 257) as f64 * 0.37 + 1.0).collect();
    let level = LevelResult { concurrent_users: 1, requests: 257, successes: 250, elapsed_s: 2.0, latencies_ms: latencies.clone(), ..Default::default() };
    for p in [50.0, 95.0, 99.0, 100.0] {
        assert_eq!(level.percentile(p), Some(sorted_percentile(&latencies, p)));
    }
    assert!((level.success_rate() - 250.0 / 257.0).abs() < 1e-15);
    assert_eq!(level.tps(), 125.0);
}

#[tokio::test]
async fn unreachable_target_is_reported() {
    // Bind then drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = run_bench(&config(format!("http://127.0.0.1:{port}"), vec![1])).await.unwrap_err();
    assert!(matches!(err, BenchError::TargetUnreachable { .. }), "{err}");
    let err = run_bench(&config("http://127.0.0.1:1".into(), vec![])).await.unwrap_err();
    assert!(matches!(err, BenchError::InvalidConfig(_)));
}
