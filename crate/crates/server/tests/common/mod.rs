#![allow(dead_code)]

use std::net::SocketAddr;

use complyflow::domain::{Channel, Event};
use complyflow::engine::{Engine, EngineConfig};
use complyflow_server::{serve, AppState, Shared};
use serde_json::Value;
use tokio::sync::oneshot;

pub struct TestServer {
    pub addr: SocketAddr,
    pub state: Shared,
    pub client: reqwest::Client,
    token: Option<String>,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
}

impl TestServer {
    pub async fn start(engine: Engine, token: Option<&str>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let state = AppState::new(engine, token.map(str::to_owned));
        let (tx, rx) = oneshot::channel::<()>();
        let handle = tokio::spawn({
            let state = state.clone();
            async move {
                serve(listener, state, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            }
        });
        Self { addr, state, client: reqwest::Client::new(), token: token.map(str::to_owned), stop: Some(tx), handle: Some(handle) }
    }

    pub async fn with_rules() -> Self {
        let mut engine = Engine::in_memory(EngineConfig::default()).unwrap();
        engine.load_rules(complyflow::rules::DEMO_RULES).unwrap();
        Self::start(engine, None).await
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    fn auth(&self, rb: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.auth(self.client.get(self.url(path))).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let resp = self.auth(self.client.post(self.url(path))).json(body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn post_text(&self, path: &str, body: &str) -> (u16, Value) {
        let resp = self.auth(self.client.post(self.url(path))).body(body.to_owned()).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            h.await.unwrap();
        }
    }
}

pub fn event(id: &str, amount: f64, channel: Channel, region: &str, account: &str) -> Event {
    Event {
        id: id.into(),
        timestamp: 1_700_000_000_000,
        account: account.into(),
        amount,
        channel,
        region: region.into(),
        features: Some(vec![0.1; 8]),
        doc_text: None,
    }
}
