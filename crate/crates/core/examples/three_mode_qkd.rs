//! Three modes multiplexed; prints the QBER table and per-mode key rates.
//!
//! Usage: `cargo run --release --example three_mode_qkd [pulses_per_mode]`

use oam_qkd::scenario::{run_qkd, ScenarioConfig};

fn main() -> oam_qkd::Result<()> {
    let mut cfg = ScenarioConfig::three_mode();
    if let Some(n) = std::env::args().nth(1) {
        cfg.simulation.pulses_per_point = Some(n.parse().expect("pulse count"));
    }
    let run = run_qkd(&cfg, &cfg.mode_numbers())?;
    print!("{}", run.report.qber_table_csv());
    for m in &run.report.modes {
        println!("mode {:>2}: {:.0} bit/s", m.mode, m.skr_bits_per_s);
    }
    println!("total: {:.0} bit/s", run.report.aggregate_skr);
    Ok(())
}
