//! Deterministic seed derivation.
//!
//! Every random stream in a scenario is derived from the master seed by
//! folding a path of integers through SplitMix64:
//!
//! ```text
//! s_0 = master
//! s_{j+1} = splitmix64(s_j ^ splitmix64(component_j + 0x9E37_79B9_7F4A_7C15))
//! ```
//!
//! Paths used by the scenario runner are listed in [`stream`].

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output step applied to `x`.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of components.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &c| {
        splitmix64(s ^ splitmix64(c.wrapping_add(GOLDEN)))
    })
}

/// Stream identifiers used as the first path component.
pub mod stream {
    pub const SYMBOLS: u64 = 1;
    pub const DETECTION: u64 = 2;
    pub const HEATER_NOISE: u64 = 3;
    pub const PLL: u64 = 4;
    pub const HEATER_DRIFT: u64 = 5;
    pub const COUPLING: u64 = 6;
    pub const TIME_OF_FLIGHT: u64 = 7;
}

/// Maps a (possibly negative) mode number onto a path component.
pub fn mode_component(mode: i32) -> u64 {
    mode as i64 as u64
}
