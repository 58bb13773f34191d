//! Aggregate key rate of N identical, independent channels.
//!
//! Usage: `cargo run --release --example sdm_scaling [pulses_per_channel]`

use oam_qkd::scenario::{run_qkd, ScenarioConfig};
use oam_qkd::security::KeyRateReport;

fn main() -> oam_qkd::Result<()> {
    let pulses: u64 = std::env::args().nth(1).map_or(20_000_000_000, |s| s.parse().expect("pulses"));
    let mut reports = Vec::new();
    for k in 0..3u64 {
        let mut cfg = ScenarioConfig::two_mode();
        cfg.seed += k;
        cfg.simulation.pulses_per_point = Some(pulses);
        reports.push(run_qkd(&cfg, &[-7])?.report.modes.remove(0));
    }
    let single = reports[0].skr_bits_per_s;
    for n in 1..=3 {
        let total = KeyRateReport::new(reports[..n].to_vec()).aggregate_skr;
        println!("N = {n}: {total:.0} bit/s, {:.4} x single channel", total / single);
    }
    Ok(())
}
