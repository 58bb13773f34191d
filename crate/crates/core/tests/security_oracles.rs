mod common;

use oam_qkd::detection::TallyBlock;
use oam_qkd::protocol::{Basis, Intensity};
use oam_qkd::security::{binary_entropy, decoy_bounds, finite_key, DecoySetting, SecurityParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tally(nz: [u64; 2], mz: [u64; 2], nx: [u64; 2], mx: [u64; 2]) -> TallyBlock {
    let mut t = TallyBlock {
        duration_s: 300.0,
        ..Default::default()
    };
    t.set(Basis::Z, Intensity::Mu1, nz[0], mz[0]);
    t.set(Basis::Z, Intensity::Mu2, nz[1], mz[1]);
    t.set(Basis::X, Intensity::Mu1, nx[0], mx[0]);
    t.set(Basis::X, Intensity::Mu2, nx[1], mx[1]);
    t
}

#[test]
fn entropy_matches_extended_precision() {
    let mut z = common::Big::new();
    for p in [1e-6, 0.01, 0.11, 0.25, 0.4999] {
        let x = z.f(p);
        let h = z.entropy(&x);
        let reference = z.to_f64(&h);
        assert!((binary_entropy(p).unwrap() - reference).abs() < 1e-14, "p={p}");
    }
    let x = z.f(0.11);
    let h = z.entropy(&x);
    assert!((z.to_f64(&h) - 0.499_916_0).abs() < 5e-8);
}

#[test]
fn key_length_matches_extended_precision() {
    let cases = [
        (tally([49_000_000, 10_500_000], [1_050_000, 224_000], [460_000, 99_000], [19_500, 4_050]), 0.26, 0.13),
        (tally([30_000_000, 9_000_000], [405_000, 180_000], [290_000, 88_000], [10_200, 3_600]), 0.36, 0.13),
        (tally([3_000_000, 1_400_000], [54_000, 27_000], [30_000, 14_000], [1_900, 850]), 0.28, 0.18),
        (tally([800_000, 300_000], [10_000, 4_000], [8_000, 3_000], [0, 0]), 0.5, 0.1),
    ];
    let p = SecurityParams::default();
    for (t, mu1, mu2) in cases {
        let d = DecoySetting::new(mu1, mu2, 0.7).unwrap();
        let fast = finite_key(&t, &d, &p).unwrap();
        let slow = common::key_length_oracle(&t, mu1, mu2, 0.7, p.eps_sec, p.eps_corr, p.f_ec);
        assert!(slow > 0.0);
        assert!(((fast - slow) / slow).abs() < 1e-9, "{fast} vs {slow}");
    }
}

#[test]
fn tagged_photon_bounds_hold() {
    let trials = 2_000;
    let allowed = (10.0 * SecurityParams::default().eps_sec * trials as f64).floor() as u32;
    let violations = common::tagged_violations(trials, 200_000_000, 0x7a66);
    assert!(violations <= allowed, "{violations} violations");
}

#[test]
fn bounds_are_not_vacuous_for_tagged_source() {
    let src = common::tagged_source();
    let d = DecoySetting::new(0.4, 0.15, 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = src.run(2_000_000_000, &mut rng);
    let b = decoy_bounds(&truth.tally, &d, &SecurityParams::default()).unwrap();
    assert!(b.s1_lower > 0.5 * truth.s1 as f64);
    assert!(b.phi_z_upper < 0.2);
}
