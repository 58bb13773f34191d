//! Interferometer output of the X state versus phase, for two visibilities.

use oam_qkd::detection::interfere;
use oam_qkd::protocol::{PulsePair, State};

fn main() -> oam_qkd::Result<()> {
    let pair = PulsePair::for_state(State::XPlus, 1.0);
    println!("phase/pi   dark/bright (V=1)   dark/bright (V=0.92)");
    for k in 0..=8 {
        let phase = std::f64::consts::PI * k as f64 / 8.0;
        let ratio = |v| -> oam_qkd::Result<f64> {
            let f = interfere(pair, 800.0, 800.0, v, phase)?;
            Ok(f.dark[1] / (f.dark[1] + f.bright[1]))
        };
        println!("{:>8.3}   {:>17.4}   {:>20.4}", k as f64 / 8.0, ratio(1.0)?, ratio(0.92)?);
    }
    Ok(())
}
