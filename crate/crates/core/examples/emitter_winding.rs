//! Field emitted by the star coupler for each input port, and its azimuthal
//! spectrum. Perfect heaters give a single harmonic per port.

use oam_qkd::emitter::{emit_field, power_ratio_db, ChipGeometry, HeaterState};

fn main() -> oam_qkd::Result<()> {
    let chip = ChipGeometry::default();
    let heaters = HeaterState::zeros(chip.num_outputs());
    println!("port  step/2pi   own power   worst leakage");
    for l in chip.ports() {
        let field = emit_field(l, &chip, &heaters, 1.0)?;
        let a = field.amplitudes();
        let step = (a[1] / a[0]).arg() / std::f64::consts::TAU;
        let own = field.harmonic(l).norm_sqr();
        let leak = (-12..=13)
            .filter(|&m| m != l)
            .map(|m| field.harmonic(m).norm_sqr() / own)
            .fold(0.0, f64::max);
        println!("{l:>4}  {step:>8.4}  {own:>10.3e}  {:>8.1} dB", power_ratio_db(leak));
    }
    Ok(())
}
