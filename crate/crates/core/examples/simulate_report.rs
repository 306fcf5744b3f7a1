//! Full simulation of a preset and the report files.
//!
//! `cargo run --release --example simulate_report -- [preset] [out-dir] [quick]`

use complyflow::sim::report::write_report;
use complyflow::sim::training::TrainOptions;
use complyflow::sim::{preset, simulate, SimulateOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("securities-firm", String::as_str);
    let out = args.get(1).map_or("sim-report", String::as_str);
    let mut options = SimulateOptions::default();
    if args.iter().any(|a| a == "quick") {
        options.train = TrainOptions::quick();
    }
    let run = simulate(&preset(name)?, &options)?;
    if let Some(s) = &run.train_summary {
        println!("trained: {s:?}");
    }
    let files = run.report()?;
    write_report(std::path::Path::new(out), &files)?;
    print!("{}", files.tables);
    println!("state hash {}", run.manifest.engine_state_hash);
    println!("report written to {out}/");
    Ok(())
}
