//! Crosstalk of a preset measured by power and by time of flight.
//!
//! Usage: `cargo run --release --example crosstalk_matrix [2mode|3mode]`

use oam_qkd::scenario::{run_crosstalk, Preset};

fn main() -> oam_qkd::Result<()> {
    let preset: Preset = std::env::args().nth(1).as_deref().unwrap_or("3mode").parse()?;
    let run = run_crosstalk(&preset.config())?;
    println!("coupling strength {:.4}", run.coupling_strength);
    println!("emitter leakage {:.1} dB -> {:.1} dB after calibration", run.emitter_db_before, run.emitter_db_after);
    println!("\nby power (dB)\n{}", run.power.to_csv());
    println!("by time of flight (dB)\n{}", run.time_of_flight.to_csv());
    Ok(())
}
