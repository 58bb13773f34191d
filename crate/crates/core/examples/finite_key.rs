//! Finite-key length of a fixed tally as the block grows.

use oam_qkd::detection::TallyBlock;
use oam_qkd::protocol::{Basis, Intensity};
use oam_qkd::security::{decoy_bounds, finite_key, DecoySetting, SecurityParams};

fn main() -> oam_qkd::Result<()> {
    let mut t = TallyBlock {
        duration_s: 300.0,
        ..Default::default()
    };
    t.set(Basis::Z, Intensity::Mu1, 49_000_000, 1_050_000);
    t.set(Basis::Z, Intensity::Mu2, 10_500_000, 224_000);
    t.set(Basis::X, Intensity::Mu1, 460_000, 19_500);
    t.set(Basis::X, Intensity::Mu2, 99_000, 4_050);
    let setting = DecoySetting::new(0.26, 0.13, 0.7)?;
    let params = SecurityParams::default();
    println!("scale   s1_lower      phi_upper   key bits     bits per Z click");
    for scale in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let s = t.scaled(scale);
        let b = decoy_bounds(&s, &setting, &params)?;
        let l = finite_key(&s, &setting, &params)?;
        println!(
            "{scale:>6}  {:>12.4e}  {:>9.4}  {:>11.4e}  {:.4}",
            b.s1_lower,
            b.phi_z_upper,
            l,
            l / s.n.total(Basis::Z) as f64
        );
    }
    Ok(())
}
