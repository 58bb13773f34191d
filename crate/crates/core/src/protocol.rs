//! Transmitter side of the three-state time-bin protocol with one decoy.
//!
//! Each pulse consumes a 33-bit word, read least-significant bit first:
//!
//! | bits      | use                                                   |
//! |-----------|-------------------------------------------------------|
//! | `0..16`   | basis: value `< round(p_Z · 2¹⁶)` selects Z, else X+  |
//! | `16`      | Z value: 0 → Z0 (early), 1 → Z1 (late)                |
//! | `17..33`  | intensity: value `< round(p_μ1 · 2¹⁶)` selects μ1     |
//!
//! Words come either from a PRBS bit stream (33 consecutive bits per pulse)
//! or from a keyed counter generator that gives random access to any pulse.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::splitmix64;

pub const BITS_PER_PULSE: usize = 33;

/// Period of the 12-bit maximal-length sequence.
pub const PRBS_PERIOD: usize = 4095;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub qubit_rate_hz: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
    pub p_z: f64,
    pub bin_separation_ps: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            qubit_rate_hz: 5.95e8,
            mu1: 0.26,
            mu2: 0.13,
            p_mu1: 0.7,
            p_z: 0.9,
            bin_separation_ps: 800.0,
        }
    }
}

impl ProtocolParams {
    pub fn with_intensities(mu1: f64, mu2: f64) -> Self {
        ProtocolParams {
            mu1,
            mu2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.qubit_rate_hz > 0.0 && self.qubit_rate_hz.is_finite()) {
            return Err(Error::invalid("qubit_rate_hz", "must be positive"));
        }
        if !(self.mu2 > 0.0 && self.mu1 > self.mu2 && self.mu1.is_finite()) {
            return Err(Error::invalid(
                "mu1/mu2",
                format!("need 0 < mu2 < mu1, got mu1 = {}, mu2 = {}", self.mu1, self.mu2),
            ));
        }
        for (name, p) in [("p_mu1", self.p_mu1), ("p_z", self.p_z)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {p}")));
            }
        }
        if !(self.bin_separation_ps > 0.0 && self.bin_separation_ps < self.period_ps()) {
            return Err(Error::invalid(
                "bin_separation_ps",
                format!(
                    "must be positive and below the qubit period {:.3} ps",
                    self.period_ps()
                ),
            ));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.qubit_rate_hz
    }

    pub fn mu(&self, intensity: Intensity) -> f64 {
        match intensity {
            Intensity::Mu1 => self.mu1,
            Intensity::Mu2 => self.mu2,
        }
    }

    pub fn p_intensity(&self, intensity: Intensity) -> f64 {
        match intensity {
            Intensity::Mu1 => self.p_mu1,
            Intensity::Mu2 => 1.0 - self.p_mu1,
        }
    }

    pub fn p_basis(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.p_z,
            Basis::X => 1.0 - self.p_z,
        }
    }

    fn thresholds(&self) -> Thresholds {
        Thresholds {
            z: threshold16(self.p_z),
            mu1: threshold16(self.p_mu1),
        }
    }
}

fn threshold16(p: f64) -> u32 {
    (p.clamp(0.0, 1.0) * 65536.0).round() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Thresholds {
    z: u32,
    mu1: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Z0,
    Z1,
    XPlus,
}

impl State {
    pub fn basis(self) -> Basis {
        match self {
            State::Z0 | State::Z1 => Basis::Z,
            State::XPlus => Basis::X,
        }
    }

    fn code(self) -> u8 {
        match self {
            State::Z0 => 0,
            State::Z1 => 1,
            State::XPlus => 2,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            State::Z0 => "Z0",
            State::Z1 => "Z1",
            State::XPlus => "X+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intensity {
    Mu1,
    Mu2,
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intensity::Mu1 => "mu1",
            Intensity::Mu2 => "mu2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub state: State,
    pub intensity: Intensity,
}

fn symbol_from_word(word: u64, t: Thresholds) -> Symbol {
    let basis_draw = (word & 0xFFFF) as u32;
    let z_bit = (word >> 16) & 1;
    let intensity_draw = ((word >> 17) & 0xFFFF) as u32;
    let state = if basis_draw < t.z {
        if z_bit == 0 {
            State::Z0
        } else {
            State::Z1
        }
    } else {
        State::XPlus
    };
    let intensity = if intensity_draw < t.mu1 {
        Intensity::Mu1
    } else {
        Intensity::Mu2
    };
    Symbol { state, intensity }
}

fn pack_word(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0u64, |w, (j, &b)| w | ((b as u64) << j))
}

/// 12-bit Fibonacci LFSR for the primitive polynomial x¹² + x⁶ + x⁴ + x + 1.
#[derive(Debug, Clone)]
pub struct Lfsr12 {
    state: u16,
}

impl Lfsr12 {
    pub fn new(seed: u16) -> Result<Self> {
        if seed == 0 || seed > 0x0FFF {
            return Err(Error::InvalidSeed(seed));
        }
        Ok(Lfsr12 { state: seed })
    }

    pub fn state(&self) -> u16 {
        self.state
    }
}

impl Iterator for Lfsr12 {
    type Item = bool;

    fn next(&mut self) -> Option<bool> {
        let s = self.state;
        let out = s & 1 == 1;
        // taps 12, 6, 4, 1 counted from the output end
        let fb = (s ^ (s >> 6) ^ (s >> 8) ^ (s >> 11)) & 1;
        self.state = (s >> 1) | (fb << 11);
        Some(out)
    }
}

/// First `length` bits of the maximal-length sequence started at `seed`.
pub fn prbs_stream(seed: u16, length: usize) -> Result<Vec<bool>> {
    Ok(Lfsr12::new(seed)?.take(length).collect())
}

/// Random-access source of per-pulse symbols.
pub trait SymbolSource: Sync {
    fn symbol(&self, pulse: u64) -> Symbol;
}

/// Counter-based generator: pulse `i` uses `splitmix64(key + i·γ)` as its word.
#[derive(Debug, Clone)]
pub struct KeyedSymbols {
    key: u64,
    thresholds: Thresholds,
}

impl KeyedSymbols {
    pub fn new(params: &ProtocolParams, key: u64) -> Self {
        KeyedSymbols {
            key,
            thresholds: params.thresholds(),
        }
    }
}

impl SymbolSource for KeyedSymbols {
    fn symbol(&self, pulse: u64) -> Symbol {
        let word = splitmix64(self.key.wrapping_add(pulse.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        symbol_from_word(word, self.thresholds)
    }
}

/// Symbols read from a PRBS, 33 bits per pulse, cycling with the sequence.
///
/// Because gcd(33, 4095) = 3, the symbol pattern repeats every 1365 pulses.
#[derive(Debug, Clone)]
pub struct PrbsSymbols {
    pattern: Vec<Symbol>,
}

impl PrbsSymbols {
    pub fn new(params: &ProtocolParams, seed: u16) -> Result<Self> {
        let period = PRBS_PERIOD * BITS_PER_PULSE / gcd(PRBS_PERIOD, BITS_PER_PULSE);
        let pulses = period / BITS_PER_PULSE;
        let bits = prbs_stream(seed, period)?;
        let t = params.thresholds();
        let pattern = bits
            .chunks_exact(BITS_PER_PULSE)
            .map(|c| symbol_from_word(pack_word(c), t))
            .collect::<Vec<_>>();
        debug_assert_eq!(pattern.len(), pulses);
        Ok(PrbsSymbols { pattern })
    }

    pub fn pattern_len(&self) -> usize {
        self.pattern.len()
    }
}

impl SymbolSource for PrbsSymbols {
    fn symbol(&self, pulse: u64) -> Symbol {
        self.pattern[(pulse % self.pattern.len() as u64) as usize]
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Transmitter log: one symbol per pulse.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymbolSequence {
    pub symbols: Vec<Symbol>,
}

const LOG_MAGIC: &[u8; 4] = b"OQS1";

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn from_source(source: &dyn SymbolSource, n_pulses: usize) -> Self {
        SymbolSequence {
            symbols: (0..n_pulses as u64).map(|i| source.symbol(i)).collect(),
        }
    }

    /// Packs each pulse into a nibble: bits 0–1 state, bit 2 intensity (1 = μ2).
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len().div_ceil(2));
        out.extend_from_slice(LOG_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for pair in self.symbols.chunks(2) {
            let nib = |s: &Symbol| s.state.code() | ((s.intensity == Intensity::Mu2) as u8) << 2;
            let lo = nib(&pair[0]);
            let hi = pair.get(1).map(nib).unwrap_or(0);
            out.push(lo | (hi << 4));
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != LOG_MAGIC {
            return Err(Error::Decode("symbol log: bad header".into()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != n.div_ceil(2) {
            return Err(Error::Decode(format!(
                "symbol log: {n} pulses need {} bytes, found {}",
                n.div_ceil(2),
                body.len()
            )));
        }
        let mut symbols = Vec::with_capacity(n);
        for i in 0..n {
            let nib = (body[i / 2] >> (4 * (i % 2))) & 0x0F;
            let state = match nib & 0b11 {
                0 => State::Z0,
                1 => State::Z1,
                2 => State::XPlus,
                _ => return Err(Error::Decode(format!("symbol log: bad state at pulse {i}"))),
            };
            if nib & 0b1000 != 0 {
                return Err(Error::Decode(format!("symbol log: reserved bit set at pulse {i}")));
            }
            let intensity = if nib & 0b100 != 0 {
                Intensity::Mu2
            } else {
                Intensity::Mu1
            };
            symbols.push(Symbol { state, intensity });
        }
        Ok(SymbolSequence { symbols })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,state,intensity\n");
        for (i, s) in self.symbols.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", s.state, s.intensity));
        }
        out
    }
}

/// Builds `n_pulses` symbols from an explicit entropy bit stream,
/// consuming [`BITS_PER_PULSE`] bits per pulse.
pub fn generate_symbols(
    params: &ProtocolParams,
    n_pulses: usize,
    entropy: &[bool],
) -> Result<SymbolSequence> {
    let t = params.thresholds();
    let mut symbols = Vec::with_capacity(n_pulses);
    for i in 0..n_pulses {
        let chunk = entropy
            .get(i * BITS_PER_PULSE..(i + 1) * BITS_PER_PULSE)
            .ok_or(Error::EntropyExhausted { pulse: i })?;
        symbols.push(symbol_from_word(pack_word(chunk), t));
    }
    Ok(SymbolSequence { symbols })
}

/// Mean photon numbers of the early and late bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsePair {
    pub early: f64,
    pub late: f64,
}

impl PulsePair {
    pub fn for_state(state: State, mu: f64) -> Self {
        match state {
            State::Z0 => PulsePair { early: mu, late: 0.0 },
            State::Z1 => PulsePair { early: 0.0, late: mu },
            State::XPlus => PulsePair {
                early: mu / 2.0,
                late: mu / 2.0,
            },
        }
    }

    pub fn total(&self) -> f64 {
        self.early + self.late
    }
}

pub fn encode(symbol: Symbol, params: &ProtocolParams) -> PulsePair {
    PulsePair::for_state(symbol.state, params.mu(symbol.intensity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prbs_period_and_balance() {
        for seed in [1u16, 0x0ABC, 0x0FFF] {
            let bits = prbs_stream(seed, 2 * PRBS_PERIOD).unwrap();
            assert_eq!(bits[..PRBS_PERIOD], bits[PRBS_PERIOD..]);
            assert_eq!(bits[..PRBS_PERIOD].iter().filter(|&&b| b).count(), 2048);
            // no shorter period
            let mut lfsr = Lfsr12::new(seed).unwrap();
            let mut first_return = None;
            for step in 1..=PRBS_PERIOD {
                lfsr.next();
                if lfsr.state() == seed {
                    first_return = Some(step);
                    break;
                }
            }
            assert_eq!(first_return, Some(PRBS_PERIOD));
        }
    }

    #[test]
    fn prbs_autocorrelation_two_valued() {
        let bits = prbs_stream(0x123, PRBS_PERIOD).unwrap();
        let s: Vec<i64> = bits.iter().map(|&b| if b { -1 } else { 1 }).collect();
        for lag in 1..PRBS_PERIOD {
            let sum: i64 = (0..PRBS_PERIOD).map(|i| s[i] * s[(i + lag) % PRBS_PERIOD]).sum();
            assert_eq!(sum, -1, "lag {lag}");
        }
    }

    #[test]
    fn prbs_rejects_bad_seed() {
        assert!(matches!(prbs_stream(0, 10), Err(Error::InvalidSeed(0))));
        assert!(matches!(prbs_stream(0x1000, 10), Err(Error::InvalidSeed(0x1000))));
    }

    #[test]
    fn prbs_deterministic() {
        assert_eq!(prbs_stream(77, 500).unwrap(), prbs_stream(77, 500).unwrap());
    }

    #[test]
    fn p_z_one_gives_only_z() {
        let mut p = ProtocolParams::default();
        p.p_z = 1.0;
        let src = KeyedSymbols::new(&p, 5);
        assert!((0..10_000).all(|i| src.symbol(i).state.basis() == Basis::Z));
    }

    #[test]
    fn keyed_fractions_within_binomial_band() {
        let p = ProtocolParams::default();
        let src = KeyedSymbols::new(&p, 42);
        let n = 1_000_000u64;
        let (mut z, mut m1, mut z1) = (0u64, 0u64, 0u64);
        for i in 0..n {
            let s = src.symbol(i);
            z += (s.state.basis() == Basis::Z) as u64;
            z1 += (s.state == State::Z1) as u64;
            m1 += (s.intensity == Intensity::Mu1) as u64;
        }
        let band = |k: u64, trials: u64, p: f64| {
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            (k as f64 - trials as f64 * p).abs() < 3.0 * sigma
        };
        assert!(band(z, n, 0.9));
        assert!(band(m1, n, 0.7));
        assert!(band(z1, z, 0.5));
    }

    #[test]
    fn generate_from_bits_matches_prbs_source() {
        let p = ProtocolParams::default();
        let bits = prbs_stream(99, 40 * BITS_PER_PULSE).unwrap();
        let seq = generate_symbols(&p, 40, &bits).unwrap();
        let src = PrbsSymbols::new(&p, 99).unwrap();
        assert_eq!(src.pattern_len(), 1365);
        for (i, s) in seq.symbols.iter().enumerate() {
            assert_eq!(*s, src.symbol(i as u64));
            assert_eq!(*s, src.symbol(i as u64 + 1365));
        }
    }

    #[test]
    fn entropy_exhaustion_reports_pulse() {
        let p = ProtocolParams::default();
        let bits = vec![false; 2 * BITS_PER_PULSE + 5];
        assert!(matches!(
            generate_symbols(&p, 3, &bits),
            Err(Error::EntropyExhausted { pulse: 2 })
        ));
    }

    #[test]
    fn bit_mapping_is_documented_layout() {
        let p = ProtocolParams::default();
        let t = p.thresholds();
        assert_eq!(t.z, 58982);
        // all-zero word: Z basis, Z0, μ1
        assert_eq!(
            symbol_from_word(0, t),
            Symbol { state: State::Z0, intensity: Intensity::Mu1 }
        );
        let word = 0xFFFFu64 | (1 << 16);
        assert_eq!(symbol_from_word(word, t).state, State::XPlus);
        assert_eq!(symbol_from_word(1 << 16, t).state, State::Z1);
        assert_eq!(symbol_from_word(0xFFFF << 17, t).intensity, Intensity::Mu2);
    }

    #[test]
    fn encode_examples() {
        let p = ProtocolParams::default();
        let z0 = encode(Symbol { state: State::Z0, intensity: Intensity::Mu1 }, &p);
        assert_eq!(z0, PulsePair { early: 0.26, late: 0.0 });
        let x = encode(Symbol { state: State::XPlus, intensity: Intensity::Mu2 }, &p);
        assert!((x.early - 0.065).abs() < 1e-15 && (x.late - 0.065).abs() < 1e-15);
        assert_eq!(PulsePair::for_state(State::Z1, 0.0), PulsePair { early: 0.0, late: 0.0 });
    }

    #[test]
    fn params_validation() {
        assert!(ProtocolParams::default().validate().is_ok());
        assert!(ProtocolParams::with_intensities(0.1, 0.2).validate().is_err());
        let mut p = ProtocolParams::default();
        p.bin_separation_ps = 2000.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn binary_log_rejects_garbage() {
        assert!(SymbolSequence::from_binary(b"XXXX").is_err());
        let mut bytes = SymbolSequence::default().to_binary();
        bytes[4] = 3;
        assert!(SymbolSequence::from_binary(&bytes).is_err());
    }

    #[test]
    fn csv_layout() {
        let seq = SymbolSequence {
            symbols: vec![
                Symbol { state: State::XPlus, intensity: Intensity::Mu2 },
                Symbol { state: State::Z1, intensity: Intensity::Mu1 },
            ],
        };
        assert_eq!(seq.to_csv(), "index,state,intensity\n0,X+,mu2\n1,Z1,mu1\n");
    }

    proptest! {
        #[test]
        fn binary_log_round_trip(key in any::<u64>(), n in 0usize..200) {
            let p = ProtocolParams::default();
            let seq = SymbolSequence::from_source(&KeyedSymbols::new(&p, key), n);
            let bytes = seq.to_binary();
            prop_assert_eq!(bytes.len(), 12 + n.div_ceil(2));
            prop_assert_eq!(SymbolSequence::from_binary(&bytes).unwrap(), seq);
        }

        #[test]
        fn encoding_conserves_mean(mu1 in 0.01f64..1.0, frac in 0.01f64..0.99, word in any::<u64>()) {
            let p = ProtocolParams::with_intensities(mu1, mu1 * frac);
            let s = symbol_from_word(word, p.thresholds());
            let pair = encode(s, &p);
            prop_assert!((pair.total() - p.mu(s.intensity)).abs() < 1e-15);
        }
    }
}
