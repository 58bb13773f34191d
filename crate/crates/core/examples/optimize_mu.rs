//! Grid search for the decoy intensities of one mode using the analytic count model.
//!
//! Usage: `cargo run --release --example optimize_mu [mode]`

use oam_qkd::scenario::{run_optimize_mu, ScenarioConfig};

fn main() -> oam_qkd::Result<()> {
    let cfg = ScenarioConfig::two_mode();
    let mode = std::env::args().nth(1).map_or(-7, |m| m.parse().expect("mode number"));
    let run = run_optimize_mu(&cfg, mode)?;
    let opt = &run.optimum;
    println!("mode {mode}: mu1 = {:.2}, mu2 = {:.2}, predicted {:.0} bit/s", opt.mu1, opt.mu2, opt.skr);
    let configured = cfg.mode(mode)?;
    if let Some(p) = opt
        .surface
        .iter()
        .find(|p| (p.0 - configured.mu1).abs() < 1e-9 && (p.1 - configured.mu2).abs() < 1e-9)
    {
        println!("configured ({:.2}, {:.2}): {:.0} bit/s", p.0, p.1, p.2);
    }
    Ok(())
}
