//! 75-minute acquisition on mode −7 with phase-lock feedback and heater drift.
//!
//! Usage: `cargo run --release --example stability_run [--no-feedback] [--no-drift]`

use oam_qkd::scenario::{run_stability, ScenarioConfig};

fn main() -> oam_qkd::Result<()> {
    let mut cfg = ScenarioConfig::two_mode();
    for arg in std::env::args().skip(1) {
        match arg.as_str() {
            "--no-feedback" => cfg.stability.feedback = false,
            "--no-drift" => cfg.stability.drift = false,
            other => panic!("unknown flag {other}"),
        }
    }
    let run = run_stability(&cfg)?;
    let worst_z = run.windows.iter().map(|w| w.q_z).fold(0.0, f64::max);
    let worst_x = run.windows.iter().map(|w| w.q_x).fold(0.0, f64::max);
    for w in &run.windows {
        println!("{:>6.0} s  Q_Z {:5.2}%  Q_X {:5.2}%", w.start_s, 100.0 * w.q_z, 100.0 * w.q_x);
    }
    println!("worst window: Q_Z {:.2}%, Q_X {:.2}%", 100.0 * worst_z, 100.0 * worst_x);
    Ok(())
}
