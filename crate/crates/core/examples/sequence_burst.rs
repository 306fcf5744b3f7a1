//! Train the conv + LSTM risk model on the burst task: a sequence is a
//! violation iff it holds three consecutive high-amount steps.
//!
//! `cargo run --release --example sequence_burst -- full` uses the default
//! budget (2000 sequences, 20 epochs); without arguments a smaller one.

use complyflow::engine::STEP_DIM;
use complyflow::sequence::{train_sequence_model, SeqModelConfig};
use complyflow::sim::tasks::{burst_task, shuffle_labels};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let full = std::env::args().any(|a| a == "full");
    let (n_train, epochs) = if full { (2000, 20) } else { (600, 8) };
    let train = burst_task(n_train, 20, 1);
    let valid = burst_task(500, 20, 2);
    let mut config = SeqModelConfig::new(STEP_DIM);
    config.epochs = epochs;

    let started = std::time::Instant::now();
    let (model, history) = train_sequence_model(config.clone(), &train, &valid)?;
    for e in &history.epochs {
        println!("epoch {:>2}  loss {:.4}  valid acc {:.4}", e.epoch, e.train_loss, e.valid_accuracy);
    }
    println!("kept epoch {} ({:.1}s)", history.best_epoch, started.elapsed().as_secs_f64());
    println!("score of first validation sequence: {:.4}", model.risk_score(&valid[0].sequence)?);

    let (_, control) = train_sequence_model(config, &shuffle_labels(&train, 3), &valid)?;
    let last = control.epochs.last().map_or(0.0, |e| e.valid_accuracy);
    println!("shuffled-label control, final valid acc {last:.4}");
    Ok(())
}
