//! Coordinate-descent heater calibration on a randomly misaligned chip.
//!
//! Usage: `cargo run --release --example heater_calibration [sigma_rad] [seed]`

use oam_qkd::emitter::{calibrate_heaters, emitter_crosstalk_db, ChipGeometry, HeaterState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> oam_qkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma: f64 = args.next().map_or(0.2, |s| s.parse().expect("sigma"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let chip = ChipGeometry::default();
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<f64> = (0..chip.num_outputs()).map(|_| noise.sample(&mut rng)).collect();
    let misaligned = HeaterState::zeros(chip.num_outputs()).perturbed(&offsets);
    let ports = [-7, 6, -5];
    let objective = |h: &HeaterState| emitter_crosstalk_db(&ports, &chip, h).unwrap();
    println!("before: {:.1} dB", objective(&misaligned));
    for rounds in 1..=6 {
        let h = calibrate_heaters(&ports, &misaligned, rounds, 64, objective)?;
        println!("{rounds} round(s): {:.1} dB", objective(&h));
    }
    Ok(())
}
