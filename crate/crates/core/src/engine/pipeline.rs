//! Multi-producer ingestion into the single-writer engine over a bounded
//! channel. Producers block when the channel is full; nothing is dropped.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::Engine;
use crate::domain::Event;
use crate::stream::{steady_state_throughput, throughput};

pub type Producer = Box<dyn Iterator<Item = Event> + Send>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// Events producers handed to the channel.
    pub accepted: u64,
    /// Events the engine consumed, successful or not.
    pub processed: u64,
    pub ingest_errors: u64,
    pub elapsed_s: f64,
    pub throughput_eps: f64,
    /// Rate over the middle 90% of the run.
    pub steady_eps: f64,
    /// Most producers waited on a full channel at least this many times.
    pub blocked_sends: u64,
}

impl PipelineReport {
    pub fn dropped(&self) -> u64 {
        self.accepted - self.processed
    }
}

/// Drains every producer through a channel of `capacity` slots into `engine`.
///
/// With `run_for` set, producers stop offering new events once it elapses;
/// events already accepted are still processed.
pub fn run_pipeline(engine: &mut Engine, producers: Vec<Producer>, capacity: usize, run_for: Option<Duration>) -> PipelineReport {
    let (tx, rx) = sync_channel::<Event>(capacity.max(1));
    let accepted = AtomicU64::new(0);
    let blocked = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let start = Instant::now();
    let mut completions = Vec::new();
    let (mut processed, mut errors) = (0u64, 0u64);

    std::thread::scope(|scope| {
        for producer in producers {
            let tx = tx.clone();
            let (accepted, blocked, stop) = (&accepted, &blocked, &stop);
            scope.spawn(move || {
                for event in producer {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let event = match tx.try_send(event) {
                        Ok(()) => {
                            accepted.fetch_add(1, Ordering::Relaxed);
                            continue;
                        }
                        Err(std::sync::mpsc::TrySendError::Full(e)) => e,
                        Err(std::sync::mpsc::TrySendError::Disconnected(_)) => break,
                    };
                    blocked.fetch_add(1, Ordering::Relaxed);
                    if tx.send(event).is_err() {
                        break;
                    }
                    accepted.fetch_add(1, Ordering::Relaxed);
                }
            });
        }
        drop(tx);
        for event in rx.iter() {
            if let Some(limit) = run_for {
                if !stop.load(Ordering::Relaxed) && start.elapsed() >= limit {
                    stop.store(true, Ordering::Relaxed);
                }
            }
            if let Err(e) = engine.ingest(event) {
                log::warn!("ingest failed: {e}");
                errors += 1;
            }
            processed += 1;
            completions.push(start.elapsed().as_secs_f64());
        }
    });

    let elapsed = start.elapsed().as_secs_f64();
    PipelineReport {
        accepted: accepted.into_inner(),
        processed,
        ingest_errors: errors,
        elapsed_s: elapsed,
        throughput_eps: throughput(processed as usize, elapsed),
        steady_eps: steady_state_throughput(&completions),
        blocked_sends: blocked.into_inner(),
    }
}
