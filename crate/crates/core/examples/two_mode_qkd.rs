//! Two modes transmitted together, each demultiplexed and analyzed.
//!
//! Usage: `cargo run --release --example two_mode_qkd [pulses_per_mode]`

use std::time::Instant;

use oam_qkd::scenario::{run_qkd, ScenarioConfig};

fn main() -> oam_qkd::Result<()> {
    let mut cfg = ScenarioConfig::two_mode();
    if let Some(n) = std::env::args().nth(1) {
        cfg.simulation.pulses_per_point = Some(n.parse().expect("pulse count"));
    }
    let started = Instant::now();
    let run = run_qkd(&cfg, &cfg.mode_numbers())?;
    print!("{}", run.report.qber_table_csv());
    println!();
    print!("{}", run.report.skr_csv());
    println!("\n{} pulses per mode in {:.1} s", cfg.simulated_pulses(), started.elapsed().as_secs_f64());
    Ok(())
}
