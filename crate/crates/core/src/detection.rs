//! Receiver model: basis split, time-bin interferometer, SNSPD clicks and sifting.
//!
//! Detector ids: `0` is the Z-basis detector, `1` and `2` are the bright and
//! dark output ports of the X-basis interferometer. Pulse `i` starts at tag
//! `t_i = round(i · T)` ps for qubit period `T`. The Z detector sees the early
//! and late bins at `t_i` and `t_i + d` (`d` the bin separation). Each X port
//! sees a satellite at `t_i`, the interfering central slot at `t_i + d` and a
//! second satellite at `t_i + 2d`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Basis, Intensity, ProtocolParams, PulsePair, State, SymbolSource};
use crate::seed::{derive, splitmix64};

pub const DETECTOR_Z: u8 = 0;
pub const DETECTOR_X_BRIGHT: u8 = 1;
pub const DETECTOR_X_DARK: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_cps: f64,
    pub dead_time_ps: f64,
    pub tag_resolution_ps: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            efficiency: 0.83,
            dark_cps: 50.0,
            dead_time_ps: 33.0,
            tag_resolution_ps: 1.0,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid("efficiency", format!("must lie in (0, 1], got {}", self.efficiency)));
        }
        for (name, v) in [
            ("dark_cps", self.dark_cps),
            ("dead_time_ps", self.dead_time_ps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.tag_resolution_ps > 0.0) {
            return Err(Error::invalid("tag_resolution_ps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSpec {
    pub split_z: f64,
    pub split_x: f64,
    pub interferometer_delay_ps: f64,
    pub visibility: f64,
    pub residual_phase_rms_rad: f64,
    /// Proportional feedback gain of the phase lock, in 1/s.
    pub pll_gain_per_s: f64,
    pub pll_step_s: f64,
    /// Probability that a Z-basis photon is found in the wrong time bin.
    pub z_misalignment: f64,
    pub background_z_cps: f64,
    /// Total X-basis background, shared equally by the two output ports.
    pub background_x_cps: f64,
    pub sync_loss_db: f64,
}

impl Default for ReceiverSpec {
    fn default() -> Self {
        ReceiverSpec {
            split_z: 0.9,
            split_x: 0.1,
            interferometer_delay_ps: 800.0,
            visibility: 0.92,
            residual_phase_rms_rad: 0.2,
            pll_gain_per_s: 10.0,
            pll_step_s: 1e-3,
            z_misalignment: 0.0,
            background_z_cps: 4000.0,
            background_x_cps: 200_000.0,
            sync_loss_db: 9.15,
        }
    }
}

impl ReceiverSpec {
    pub fn validate(&self, protocol: &ProtocolParams) -> Result<()> {
        if (self.split_z + self.split_x - 1.0).abs() > 1e-9
            || !(0.0..=1.0).contains(&self.split_z)
            || !(0.0..=1.0).contains(&self.split_x)
        {
            return Err(Error::invalid("split_z/split_x", "must be in [0, 1] and sum to one"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::invalid("visibility", "must lie in [0, 1]"));
        }
        if !(0.0..=0.5).contains(&self.z_misalignment) {
            return Err(Error::invalid("z_misalignment", "must lie in [0, 0.5]"));
        }
        for (name, v) in [
            ("residual_phase_rms_rad", self.residual_phase_rms_rad),
            ("pll_gain_per_s", self.pll_gain_per_s),
            ("background_z_cps", self.background_z_cps),
            ("background_x_cps", self.background_x_cps),
            ("sync_loss_db", self.sync_loss_db),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.pll_step_s > 0.0) {
            return Err(Error::invalid("pll_step_s", "must be positive"));
        }
        check_delay(self.interferometer_delay_ps, protocol.bin_separation_ps)
    }

    /// Phase-lock parameters reproducing the configured residual RMS.
    ///
    /// With `feedback == false` the same diffusion runs without correction.
    pub fn pll(&self, feedback: bool) -> PllParams {
        let locked = PllParams::for_residual(
            self.residual_phase_rms_rad,
            self.pll_gain_per_s,
            self.pll_step_s,
        );
        if feedback {
            locked
        } else {
            PllParams {
                gain_per_s: 0.0,
                ..locked
            }
        }
    }
}

fn check_delay(delay_ps: f64, bin_separation_ps: f64) -> Result<()> {
    if (delay_ps - bin_separation_ps).abs() > 0.5 {
        return Err(Error::DelayMismatch {
            delay_ps,
            bin_separation_ps,
        });
    }
    Ok(())
}

/// Mean photon number reaching each interferometer output slot, per unit
/// of X-arm transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fringe {
    /// `[early satellite, central, late satellite]` at the bright port.
    pub bright: [f64; 3],
    /// Same slots at the dark port.
    pub dark: [f64; 3],
}

/// Unbalanced Michelson with arm difference `delay_ps`.
///
/// Each port receives a quarter of each bin in its satellites; the central
/// slot carries `(E + L ± 2√(EL)·V·cos φ)/4`.
pub fn interfere(
    pair: PulsePair,
    delay_ps: f64,
    bin_separation_ps: f64,
    visibility: f64,
    phase: f64,
) -> Result<Fringe> {
    check_delay(delay_ps, bin_separation_ps)?;
    Ok(fringe(pair, visibility, phase.cos()))
}

#[inline]
fn fringe(pair: PulsePair, visibility: f64, cos_phase: f64) -> Fringe {
    let (e, l) = (pair.early, pair.late);
    let cross = 2.0 * (e * l).sqrt() * visibility * cos_phase;
    Fringe {
        bright: [e / 4.0, (e + l + cross) / 4.0, l / 4.0],
        dark: [e / 4.0, (e + l - cross) / 4.0, l / 4.0],
    }
}

/// Uniformly sampled scalar time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub step_s: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn constant(value: f64) -> Self {
        TimeSeries {
            step_s: f64::INFINITY,
            values: vec![value],
        }
    }

    /// Sample in effect at time `t_s` (held beyond the last sample).
    #[inline]
    pub fn at(&self, t_s: f64) -> f64 {
        let idx = if self.step_s.is_finite() {
            ((t_s / self.step_s).floor().max(0.0) as usize).min(self.values.len() - 1)
        } else {
            0
        };
        self.values[idx]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Discrete phase-lock loop: `φ ← φ(1 − g·dt) + √(D·dt)·N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    pub gain_per_s: f64,
    pub diffusion_rad2_per_s: f64,
    pub step_s: f64,
    pub initial_rad: f64,
}

impl PllParams {
    /// Diffusion chosen so the locked loop has stationary RMS `rms`.
    pub fn for_residual(rms: f64, gain_per_s: f64, step_s: f64) -> Self {
        let a = 1.0 - gain_per_s * step_s;
        PllParams {
            gain_per_s,
            diffusion_rad2_per_s: rms * rms * (1.0 - a * a) / step_s,
            step_s,
            initial_rad: 0.0,
        }
    }

    /// Stationary RMS of the locked loop, infinite without feedback.
    pub fn stationary_rms(&self) -> f64 {
        let a = 1.0 - self.gain_per_s * self.step_s;
        if self.gain_per_s <= 0.0 {
            return if self.diffusion_rad2_per_s > 0.0 { f64::INFINITY } else { 0.0 };
        }
        (self.diffusion_rad2_per_s * self.step_s / (1.0 - a * a)).sqrt()
    }
}

/// Residual interferometer phase sampled every `step_s` over `duration_s`.
pub fn pll_phase_process(params: &PllParams, duration_s: f64, seed: u64) -> Result<TimeSeries> {
    if params.gain_per_s < 0.0 {
        return Err(Error::invalid("gain", "must be non-negative"));
    }
    if !(params.step_s > 0.0) || params.gain_per_s * params.step_s >= 2.0 {
        return Err(Error::invalid("step_s", "must be positive with gain·step < 2"));
    }
    if !(duration_s >= 0.0) {
        return Err(Error::invalid("duration_s", "must be non-negative"));
    }
    let n = (duration_s / params.step_s).ceil() as usize + 1;
    let a = 1.0 - params.gain_per_s * params.step_s;
    let kick = (params.diffusion_rad2_per_s * params.step_s).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = params.initial_rad;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(phi);
        let z: f64 = StandardNormal.sample(&mut rng);
        phi = phi * a + kick * z;
    }
    Ok(TimeSeries {
        step_s: params.step_s,
        values,
    })
}

/// Detection event on one detector at an integer picosecond tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Click {
    pub time_ps: i64,
    pub detector: u8,
}

/// Time-ordered detection events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClickLog {
    pub events: Vec<Click>,
}

impl ClickLog {
    /// Merges coincident tags and drops clicks inside each detector's dead time.
    pub fn from_raw(mut events: Vec<Click>, dead_time_ps: f64) -> Self {
        events.sort_unstable_by_key(|c| (c.detector, c.time_ps));
        let mut kept = Vec::with_capacity(events.len());
        let mut last: Option<Click> = None;
        for c in events {
            if let Some(prev) = last {
                if prev.detector == c.detector && ((c.time_ps - prev.time_ps) as f64) < dead_time_ps.max(1.0) {
                    continue;
                }
            }
            kept.push(c);
            last = Some(c);
        }
        kept.sort_unstable();
        ClickLog { events: kept }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, detector: u8) -> usize {
        self.events.iter().filter(|c| c.detector == detector).count()
    }

    /// Smallest gap between consecutive clicks on any one detector.
    pub fn min_same_detector_gap(&self) -> Option<i64> {
        let mut last = [None::<i64>; 256];
        let mut gap: Option<i64> = None;
        for c in &self.events {
            let slot = &mut last[c.detector as usize];
            if let Some(prev) = *slot {
                let g = c.time_ps - prev;
                gap = Some(gap.map_or(g, |x| x.min(g)));
            }
            *slot = Some(c.time_ps);
        }
        gap
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector_id,time_ps\n");
        for c in &self.events {
            out.push_str(&format!("{},{}\n", c.detector, c.time_ps));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityCounts {
    pub mu1: u64,
    pub mu2: u64,
}

impl IntensityCounts {
    pub fn get(&self, k: Intensity) -> u64 {
        match k {
            Intensity::Mu1 => self.mu1,
            Intensity::Mu2 => self.mu2,
        }
    }

    fn slot(&mut self, k: Intensity) -> &mut u64 {
        match k {
            Intensity::Mu1 => &mut self.mu1,
            Intensity::Mu2 => &mut self.mu2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasisCounts {
    #[serde(rename = "Z")]
    pub z: IntensityCounts,
    #[serde(rename = "X")]
    pub x: IntensityCounts,
}

impl BasisCounts {
    pub fn get(&self, b: Basis, k: Intensity) -> u64 {
        match b {
            Basis::Z => self.z.get(k),
            Basis::X => self.x.get(k),
        }
    }

    fn slot(&mut self, b: Basis, k: Intensity) -> &mut u64 {
        match b {
            Basis::Z => self.z.slot(k),
            Basis::X => self.x.slot(k),
        }
    }

    pub fn total(&self, b: Basis) -> u64 {
        self.get(b, Intensity::Mu1) + self.get(b, Intensity::Mu2)
    }
}

/// Sifted detections `n` and errors `m` per basis and intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TallyBlock {
    pub n: BasisCounts,
    pub m: BasisCounts,
    pub duration_s: f64,
}

impl TallyBlock {
    pub fn new(n: BasisCounts, m: BasisCounts, duration_s: f64) -> Result<Self> {
        let t = TallyBlock { n, m, duration_s };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for b in [Basis::Z, Basis::X] {
            for k in [Intensity::Mu1, Intensity::Mu2] {
                if self.m.get(b, k) > self.n.get(b, k) {
                    return Err(Error::InvalidTally(format!(
                        "{b:?}/{k}: {} errors exceed {} detections",
                        self.m.get(b, k),
                        self.n.get(b, k)
                    )));
                }
            }
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidTally("duration must be non-negative".into()));
        }
        Ok(())
    }

    pub fn qber(&self, b: Basis, k: Intensity) -> f64 {
        let n = self.n.get(b, k);
        if n == 0 {
            0.0
        } else {
            self.m.get(b, k) as f64 / n as f64
        }
    }

    /// Basis QBER over both intensities.
    pub fn basis_qber(&self, b: Basis) -> f64 {
        let n = self.n.total(b);
        if n == 0 {
            0.0
        } else {
            self.m.total(b) as f64 / n as f64
        }
    }

    pub fn merge(&self, other: &TallyBlock) -> TallyBlock {
        let mut out = *self;
        for b in [Basis::Z, Basis::X] {
            for k in [Intensity::Mu1, Intensity::Mu2] {
                *out.n.slot(b, k) += other.n.get(b, k);
                *out.m.slot(b, k) += other.m.get(b, k);
            }
        }
        out.duration_s += other.duration_s;
        out
    }

    /// Multiplies every count by `c` (rounded), keeping the duration.
    pub fn scaled(&self, c: f64) -> TallyBlock {
        let mut out = *self;
        for b in [Basis::Z, Basis::X] {
            for k in [Intensity::Mu1, Intensity::Mu2] {
                *out.n.slot(b, k) = (self.n.get(b, k) as f64 * c).round() as u64;
                *out.m.slot(b, k) = (self.m.get(b, k) as f64 * c).round() as u64;
            }
        }
        out
    }

    pub fn set(&mut self, b: Basis, k: Intensity, n: u64, m: u64) {
        *self.n.slot(b, k) = n;
        *self.m.slot(b, k) = m;
    }
}

/// Gate half-widths around each slot center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gates {
    pub z_half_width_ps: f64,
    pub x_half_width_ps: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Gates {
            z_half_width_ps: 250.0,
            x_half_width_ps: 250.0,
        }
    }
}

impl Gates {
    pub fn validate(&self, timing: &Timing) -> Result<()> {
        for hw in [self.z_half_width_ps, self.x_half_width_ps] {
            if !(hw >= 0.0) {
                return Err(Error::invalid("gate", "half-width must be non-negative"));
            }
            if 2.0 * hw > timing.period_ps {
                return Err(Error::GateTooWide {
                    window_ps: 2.0 * hw,
                    period_ps: timing.period_ps,
                });
            }
        }
        if 2.0 * self.z_half_width_ps >= timing.bin_separation_ps
            || 2.0 * self.z_half_width_ps >= timing.period_ps - timing.bin_separation_ps
        {
            return Err(Error::invalid(
                "z_half_width_ps",
                "early and late gates would overlap",
            ));
        }
        Ok(())
    }

    /// Number of picosecond-resolution tags inside a gate of half-width `hw`.
    fn width_ps(hw: f64, resolution_ps: f64) -> f64 {
        (2.0 * (hw / resolution_ps).floor() + 1.0) * resolution_ps
    }
}

/// Pulse clock of the transmitter, shared with the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub period_ps: f64,
    pub bin_separation_ps: f64,
    pub resolution_ps: f64,
}

impl Timing {
    pub fn new(protocol: &ProtocolParams, detector: &DetectorSpec) -> Self {
        Timing {
            period_ps: protocol.period_ps(),
            bin_separation_ps: protocol.bin_separation_ps,
            resolution_ps: detector.tag_resolution_ps,
        }
    }

    #[inline]
    pub fn quantize(&self, t_ps: f64) -> i64 {
        ((t_ps / self.resolution_ps).round() * self.resolution_ps) as i64
    }

    /// Tag of pulse `i`'s early bin.
    #[inline]
    pub fn pulse_tag(&self, i: u64) -> i64 {
        self.quantize(i as f64 * self.period_ps)
    }

    pub fn duration_s(&self, pulses: u64) -> f64 {
        pulses as f64 * self.period_ps * 1e-12
    }

    fn bin_tag(&self) -> i64 {
        self.quantize(self.bin_separation_ps)
    }
}

/// One transmitter whose photons reach the demultiplexed receiver.
#[derive(Clone, Copy)]
pub struct Stream<'a> {
    pub source: &'a dyn SymbolSource,
    pub protocol: &'a ProtocolParams,
    /// Arrival offset relative to the receiver's own pulse clock.
    pub offset_ps: f64,
    /// Fraction of the launched photons that end up in the received mode.
    pub fraction: f64,
}

/// Everything needed to simulate clicks at one demultiplexed mode.
///
/// `streams[0]` is the mode's own transmitter; further streams are
/// neighbors leaking into it.
#[derive(Clone)]
pub struct Reception<'a> {
    pub timing: Timing,
    pub receiver: &'a ReceiverSpec,
    pub detector: &'a DetectorSpec,
    pub gates: Gates,
    /// Link transmission after the chip: fiber, demultiplexer and sync losses.
    pub transmission: f64,
    pub streams: Vec<Stream<'a>>,
    pub phase: &'a TimeSeries,
    /// Optional slow multiplier on all received power.
    pub drift: Option<&'a TimeSeries>,
}

/// `(detector, slot offset in ps, mean detected photons)` for one pulse of one stream.
type Component = (u8, f64, f64);

impl<'a> Reception<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::EmptyTargets);
        }
        self.gates.validate(&self.timing)?;
        if !(self.transmission >= 0.0 && self.transmission <= 1.0) {
            return Err(Error::invalid("transmission", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn components(&self, stream: &Stream, pair: PulsePair, cos_phase: f64, gain: f64) -> [Component; 8] {
        let r = self.receiver;
        let scale = stream.fraction * self.transmission * gain * self.detector.efficiency;
        let e = r.z_misalignment;
        let z = r.split_z * scale;
        let x = r.split_x * scale;
        let d = self.timing.bin_separation_ps;
        let f = fringe(pair, r.visibility, cos_phase);
        [
            (DETECTOR_Z, 0.0, z * (pair.early * (1.0 - e) + pair.late * e)),
            (DETECTOR_Z, d, z * (pair.late * (1.0 - e) + pair.early * e)),
            (DETECTOR_X_BRIGHT, 0.0, x * f.bright[0]),
            (DETECTOR_X_BRIGHT, d, x * f.bright[1]),
            (DETECTOR_X_BRIGHT, 2.0 * d, x * f.bright[2]),
            (DETECTOR_X_DARK, 0.0, x * f.dark[0]),
            (DETECTOR_X_DARK, d, x * f.dark[1]),
            (DETECTOR_X_DARK, 2.0 * d, x * f.dark[2]),
        ]
    }

    fn pulse_components(&self, i: u64, stream: &Stream) -> [Component; 8] {
        let t_s = i as f64 * self.timing.period_ps * 1e-12;
        let symbol = stream.source.symbol(i);
        let pair = PulsePair::for_state(symbol.state, stream.protocol.mu(symbol.intensity));
        let gain = self.drift.map_or(1.0, |g| g.at(t_s));
        self.components(stream, pair, self.phase.at(t_s).cos(), gain)
    }

    fn tag(&self, i: u64, stream: &Stream, slot_ps: f64) -> i64 {
        self.timing.pulse_tag(i) + self.timing.quantize(stream.offset_ps + slot_ps)
    }

    fn background_rates(&self) -> [(u8, f64); 3] {
        let r = self.receiver;
        let dark = self.detector.dark_cps;
        [
            (DETECTOR_Z, r.background_z_cps + dark),
            (DETECTOR_X_BRIGHT, r.background_x_cps / 2.0 + dark),
            (DETECTOR_X_DARK, r.background_x_cps / 2.0 + dark),
        ]
    }

    fn add_background(&self, pulses: &Range<u64>, rng: &mut ChaCha8Rng, events: &mut Vec<Click>) {
        let start = pulses.start as f64 * self.timing.period_ps;
        let span_ps = (pulses.end - pulses.start) as f64 * self.timing.period_ps;
        for (detector, cps) in self.background_rates() {
            let mean = cps * span_ps * 1e-12;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
            for _ in 0..count {
                let t = start + rng.gen::<f64>() * span_ps;
                events.push(Click {
                    time_ps: self.timing.quantize(t),
                    detector,
                });
            }
        }
    }

    /// Upper bound on the mean number of detected signal photons per pulse.
    fn max_pulse_mean(&self) -> f64 {
        let gain = self.drift.map_or(1.0, |g| g.max().max(0.0));
        let photons: f64 = self
            .streams
            .iter()
            .map(|s| s.fraction * s.protocol.mu1.max(s.protocol.mu2))
            .sum();
        photons * self.transmission * gain * self.detector.efficiency
    }
}

/// Per-pulse reference simulation: every slot of every pulse gets its own
/// Poisson draw. Slow but transparent; used to cross-check [`simulate_clicks`].
pub fn detect_block(reception: &Reception, pulses: Range<u64>, seed: u64) -> Result<ClickLog> {
    reception.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for i in pulses.clone() {
        for stream in &reception.streams {
            for (detector, slot, mean) in reception.pulse_components(i, stream) {
                if mean > 0.0 && rng.gen::<f64>() < -(-mean).exp_m1() {
                    events.push(Click {
                        time_ps: reception.tag(i, stream, slot),
                        detector,
                    });
                }
            }
        }
    }
    reception.add_background(&pulses, &mut rng, &mut events);
    Ok(ClickLog::from_raw(events, reception.detector.dead_time_ps))
}

/// Event-driven simulation of the same process as [`detect_block`].
///
/// Pulses are visited by geometric skipping with the bound `Λ` from
/// [`Reception::max_pulse_mean`] and accepted with probability
/// `(1 − e^{−λ_i}) / (1 − e^{−Λ})`. An accepted pulse emits a zero-truncated
/// Poisson number of detected photons spread over its slots in proportion to
/// their means.
pub fn simulate_clicks(reception: &Reception, pulses: Range<u64>, seed: u64) -> Result<ClickLog> {
    reception.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let bound = reception.max_pulse_mean();
    if bound > 0.0 {
        let p_max = -(-bound).exp_m1();
        let log_q = (-bound).max(f64::MIN_POSITIVE.ln());
        let mut comps: Vec<(usize, Component)> = Vec::with_capacity(8 * reception.streams.len());
        let mut i = pulses.start;
        loop {
            let u: f64 = rng.gen();
            let skip = ((1.0 - u).ln() / log_q).floor();
            if !(skip < (pulses.end - i) as f64) {
                break;
            }
            i += skip as u64;
            comps.clear();
            for (s, stream) in reception.streams.iter().enumerate() {
                for c in reception.pulse_components(i, stream) {
                    if c.2 > 0.0 {
                        comps.push((s, c));
                    }
                }
            }
            let lambda: f64 = comps.iter().map(|c| c.1 .2).sum();
            let p_i = -(-lambda).exp_m1();
            if rng.gen::<f64>() * p_max < p_i {
                let photons = zero_truncated_poisson(lambda, &mut rng);
                for _ in 0..photons {
                    let mut pick = rng.gen::<f64>() * lambda;
                    let mut chosen = comps[comps.len() - 1];
                    for c in &comps {
                        if pick < c.1 .2 {
                            chosen = *c;
                            break;
                        }
                        pick -= c.1 .2;
                    }
                    let (s, (detector, slot, _)) = chosen;
                    events.push(Click {
                        time_ps: reception.tag(i, &reception.streams[s], slot),
                        detector,
                    });
                }
            }
            i += 1;
            if i >= pulses.end {
                break;
            }
        }
    }
    reception.add_background(&pulses, &mut rng, &mut events);
    Ok(ClickLog::from_raw(events, reception.detector.dead_time_ps))
}

fn zero_truncated_poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    // inversion on P(k | k ≥ 1)
    let norm = -(-lambda).exp_m1();
    let mut u = rng.gen::<f64>() * norm;
    let mut k = 1u64;
    let mut p = lambda * (-lambda).exp();
    loop {
        if u < p || k > 1000 {
            return k;
        }
        u -= p;
        k += 1;
        p *= lambda / k as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    ZEarly,
    ZLate,
    XBright,
    XDark,
}

fn assign(click: &Click, timing: &Timing, gates: &Gates, pulses: &Range<u64>) -> Option<(u64, Slot)> {
    let d = timing.bin_tag();
    let candidates: &[(i64, Slot, f64)] = match click.detector {
        DETECTOR_Z => &[
            (0, Slot::ZEarly, gates.z_half_width_ps),
            (d, Slot::ZLate, gates.z_half_width_ps),
        ],
        DETECTOR_X_BRIGHT => &[(d, Slot::XBright, gates.x_half_width_ps)],
        DETECTOR_X_DARK => &[(d, Slot::XDark, gates.x_half_width_ps)],
        _ => return None,
    };
    for &(offset, slot, hw) in candidates {
        let rel = (click.time_ps - offset) as f64 / timing.period_ps;
        let i = rel.round();
        if i < pulses.start as f64 || i >= pulses.end as f64 {
            continue;
        }
        let i = i as u64;
        if ((click.time_ps - timing.pulse_tag(i) - offset) as f64).abs() <= hw {
            return Some((i, slot));
        }
    }
    None
}

/// Matches clicks to pulse slots and counts detections and errors.
///
/// Z-basis pulses use the Z detector; a click in the wrong bin is an error.
/// X+ pulses use the central interferometer slot; a dark-port click is an
/// error. Clicks in both slots of a basis are resolved by a fair coin derived
/// from `tie_key` and the pulse index.
pub fn sift(
    source: &dyn SymbolSource,
    clicks: &ClickLog,
    pulses: Range<u64>,
    timing: &Timing,
    gates: &Gates,
    tie_key: u64,
) -> Result<TallyBlock> {
    gates.validate(timing)?;
    let mut hits: Vec<(u64, Slot)> = clicks
        .events
        .iter()
        .filter_map(|c| assign(c, timing, gates, &pulses))
        .collect();
    hits.sort_unstable_by_key(|h| h.0);
    let mut tally = TallyBlock {
        duration_s: timing.duration_s(pulses.end - pulses.start),
        ..Default::default()
    };
    let mut idx = 0;
    while idx < hits.len() {
        let pulse = hits[idx].0;
        let mut seen = [false; 4];
        while idx < hits.len() && hits[idx].0 == pulse {
            seen[hits[idx].1 as usize] = true;
            idx += 1;
        }
        let symbol = source.symbol(pulse);
        let coin = splitmix64(tie_key ^ pulse) & 1 == 1;
        let (right, wrong) = match symbol.state {
            State::Z0 => (seen[Slot::ZEarly as usize], seen[Slot::ZLate as usize]),
            State::Z1 => (seen[Slot::ZLate as usize], seen[Slot::ZEarly as usize]),
            State::XPlus => (seen[Slot::XBright as usize], seen[Slot::XDark as usize]),
        };
        if !(right || wrong) {
            continue;
        }
        let error = if right && wrong { coin } else { wrong };
        let b = symbol.state.basis();
        *tally.n.slot(b, symbol.intensity) += 1;
        *tally.m.slot(b, symbol.intensity) += error as u64;
    }
    Ok(tally)
}

/// Simulates and sifts `pulses` in sub-blocks of at most `sub_block` pulses,
/// each with its own derived seed; sub-block tallies merge in index order.
pub fn simulate_tally(
    reception: &Reception,
    pulses: Range<u64>,
    sub_block: u64,
    seed: u64,
) -> Result<TallyBlock> {
    reception.validate()?;
    if sub_block == 0 {
        return Err(Error::invalid("sub_block", "must be positive"));
    }
    let total = pulses.end.saturating_sub(pulses.start);
    let blocks = total.div_ceil(sub_block);
    let tie_key = derive(seed, &[u64::MAX]);
    let parts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = pulses.start + b * sub_block;
            let range = start..(start + sub_block).min(pulses.end);
            let clicks = simulate_clicks(reception, range.clone(), derive(seed, &[b]))?;
            sift(
                reception.streams[0].source,
                &clicks,
                range,
                &reception.timing,
                &reception.gates,
                tie_key,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts
        .iter()
        .fold(TallyBlock::default(), |acc, t| acc.merge(t)))
}

/// Expected detections and errors per basis and intensity (index 0 = μ1).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectedTally {
    pub n_z: [f64; 2],
    pub m_z: [f64; 2],
    pub n_x: [f64; 2],
    pub m_x: [f64; 2],
    pub duration_s: f64,
}

impl ExpectedTally {
    pub fn qber(&self, b: Basis, k: Intensity) -> f64 {
        let j = k as usize;
        let (n, m) = match b {
            Basis::Z => (self.n_z[j], self.m_z[j]),
            Basis::X => (self.n_x[j], self.m_x[j]),
        };
        if n > 0.0 {
            m / n
        } else {
            0.0
        }
    }

    /// Rounds to an integer tally.
    pub fn to_tally(&self) -> TallyBlock {
        let mut t = TallyBlock {
            duration_s: self.duration_s,
            ..Default::default()
        };
        for (j, k) in [Intensity::Mu1, Intensity::Mu2].into_iter().enumerate() {
            t.set(Basis::Z, k, self.n_z[j].round() as u64, self.m_z[j].round() as u64);
            t.set(Basis::X, k, self.n_x[j].round() as u64, self.m_x[j].round() as u64);
        }
        t
    }
}

fn pair_error(p_right: f64, p_wrong: f64) -> (f64, f64) {
    let detected = 1.0 - (1.0 - p_right) * (1.0 - p_wrong);
    let error = p_wrong * (1.0 - p_right) + 0.5 * p_right * p_wrong;
    (detected, error)
}

/// Closed-form counterpart of [`simulate_tally`] for `n_pulses` pulses.
///
/// Uses the stationary phase average `E[cos φ] = exp(−σ²/2)`, treats photons
/// from other pulses or streams that land inside a gate as an extra
/// symbol-averaged Poisson mean, and ignores dead time.
pub fn expected_tally(reception: &Reception, n_pulses: f64) -> Result<ExpectedTally> {
    reception.validate()?;
    let timing = &reception.timing;
    let gates = &reception.gates;
    let cos_avg = (-reception.receiver.residual_phase_rms_rad.powi(2) / 2.0).exp();
    let d = timing.bin_tag() as f64;
    // gate index: 0 Z early, 1 Z late, 2 X bright central, 3 X dark central
    let gate_of = |detector: u8, rel: f64| -> Option<(usize, bool)> {
        let opts: &[(usize, f64, f64)] = match detector {
            DETECTOR_Z => &[(0, 0.0, gates.z_half_width_ps), (1, d, gates.z_half_width_ps)],
            DETECTOR_X_BRIGHT => &[(2, d, gates.x_half_width_ps)],
            DETECTOR_X_DARK => &[(3, d, gates.x_half_width_ps)],
            _ => &[],
        };
        for &(g, c, hw) in opts {
            let q = ((rel - c) / timing.period_ps).round();
            if (rel - c - q * timing.period_ps).abs() <= hw {
                return Some((g, q == 0.0));
            }
        }
        None
    };
    let states = |p: &ProtocolParams| {
        [
            (State::Z0, p.p_z / 2.0),
            (State::Z1, p.p_z / 2.0),
            (State::XPlus, 1.0 - p.p_z),
        ]
    };
    let intensities = [Intensity::Mu1, Intensity::Mu2];
    let mut leak = [0.0f64; 4];
    for (s, stream) in reception.streams.iter().enumerate() {
        for (state, ps) in states(stream.protocol) {
            for k in intensities {
                let pk = stream.protocol.p_intensity(k);
                let pair = PulsePair::for_state(state, stream.protocol.mu(k));
                for (det, slot, mean) in reception.components(stream, pair, cos_avg, 1.0) {
                    let rel = timing.quantize(stream.offset_ps + slot) as f64;
                    if let Some((g, same_pulse)) = gate_of(det, rel) {
                        if !(s == 0 && same_pulse) {
                            leak[g] += ps * pk * mean;
                        }
                    }
                }
            }
        }
    }
    let rates = reception.background_rates();
    let res = timing.resolution_ps;
    let wz = Gates::width_ps(gates.z_half_width_ps, res) * 1e-12;
    let wx = Gates::width_ps(gates.x_half_width_ps, res) * 1e-12;
    let background = [rates[0].1 * wz, rates[0].1 * wz, rates[1].1 * wx, rates[2].1 * wx];

    let own = &reception.streams[0];
    let mut out = ExpectedTally {
        duration_s: n_pulses * timing.period_ps * 1e-12,
        ..Default::default()
    };
    for (j, k) in intensities.into_iter().enumerate() {
        let pk = own.protocol.p_intensity(k);
        for (state, ps) in states(own.protocol) {
            let pair = PulsePair::for_state(state, own.protocol.mu(k));
            let mut lam = leak;
            for g in 0..4 {
                lam[g] += background[g];
            }
            for (det, slot, mean) in reception.components(own, pair, cos_avg, 1.0) {
                let rel = timing.quantize(own.offset_ps + slot) as f64;
                if let Some((g, true)) = gate_of(det, rel) {
                    lam[g] += mean;
                }
            }
            let p = lam.map(|l| -(-l).exp_m1());
            let weight = n_pulses * ps * pk;
            match state {
                State::Z0 | State::Z1 => {
                    let (right, wrong) = if state == State::Z0 { (p[0], p[1]) } else { (p[1], p[0]) };
                    let (det, err) = pair_error(right, wrong);
                    out.n_z[j] += weight * det;
                    out.m_z[j] += weight * err;
                }
                State::XPlus => {
                    let (det, err) = pair_error(p[2], p[3]);
                    out.n_x[j] += weight * det;
                    out.m_x[j] += weight * err;
                }
            }
        }
    }
    Ok(out)
}

/// Link transmission for the loss budget after the chip, `10^(−dB/10)`.
pub fn transmission_from_db(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::KeyedSymbols;
    use proptest::prelude::*;

    fn all_z_mu1() -> ProtocolParams {
        ProtocolParams {
            p_z: 1.0,
            p_mu1: 1.0,
            ..ProtocolParams::default()
        }
    }

    fn quiet_receiver() -> ReceiverSpec {
        ReceiverSpec {
            background_z_cps: 0.0,
            background_x_cps: 0.0,
            visibility: 1.0,
            residual_phase_rms_rad: 0.0,
            ..ReceiverSpec::default()
        }
    }

    fn reception<'a>(
        source: &'a KeyedSymbols,
        protocol: &'a ProtocolParams,
        receiver: &'a ReceiverSpec,
        detector: &'a DetectorSpec,
        phase: &'a TimeSeries,
        transmission: f64,
    ) -> Reception<'a> {
        Reception {
            timing: Timing::new(protocol, detector),
            receiver,
            detector,
            gates: Gates::default(),
            transmission,
            streams: vec![Stream {
                source,
                protocol,
                offset_ps: 0.0,
                fraction: 1.0,
            }],
            phase,
            drift: None,
        }
    }

    #[test]
    fn vacuum_gives_empty_log() {
        let p = ProtocolParams::default();
        let src = KeyedSymbols::new(&p, 1);
        let r = quiet_receiver();
        let d = DetectorSpec {
            dark_cps: 0.0,
            ..DetectorSpec::default()
        };
        let phase = TimeSeries::constant(0.0);
        let rec = reception(&src, &p, &r, &d, &phase, 0.0);
        assert!(detect_block(&rec, 0..100_000, 1).unwrap().is_empty());
        assert!(simulate_clicks(&rec, 0..100_000, 1).unwrap().is_empty());
    }

    #[test]
    fn z_click_probability_matches_closed_form() {
        let p = all_z_mu1();
        let src = KeyedSymbols::new(&p, 2);
        let r = quiet_receiver();
        let d = DetectorSpec {
            dark_cps: 0.0,
            ..DetectorSpec::default()
        };
        let phase = TimeSeries::constant(0.0);
        let t = transmission_from_db(25.15);
        let rec = reception(&src, &p, &r, &d, &phase, t);
        let lambda: f64 = 0.26 * t * 0.9 * 0.83;
        assert!((lambda - 5.94e-4).abs() < 0.01e-4);
        let prob = -(-lambda).exp_m1();
        for (n, log) in [
            (2_000_000u64, detect_block(&rec, 0..2_000_000, 3).unwrap()),
            (20_000_000u64, simulate_clicks(&rec, 0..20_000_000, 3).unwrap()),
        ] {
            let k = log.count(DETECTOR_Z) as f64;
            let mean = n as f64 * prob;
            assert!((k - mean).abs() < 3.0 * mean.sqrt(), "{k} vs {mean}");
        }
    }

    #[test]
    fn dark_counts_one_second() {
        let p = ProtocolParams::default();
        let src = KeyedSymbols::new(&p, 1);
        let r = quiet_receiver();
        let d = DetectorSpec::default();
        let phase = TimeSeries::constant(0.0);
        let rec = reception(&src, &p, &r, &d, &phase, 0.0);
        let pulses = (1.0 / (p.period_ps() * 1e-12)).round() as u64;
        let log = simulate_clicks(&rec, 0..pulses, 4).unwrap();
        for det in [DETECTOR_Z, DETECTOR_X_BRIGHT, DETECTOR_X_DARK] {
            let k = log.count(det) as f64;
            assert!((k - 50.0).abs() < 3.0 * 50f64.sqrt(), "detector {det}: {k}");
        }
    }

    #[test]
    fn interference_examples() {
        let x = PulsePair::for_state(State::XPlus, 1.0);
        let f = interfere(x, 800.0, 800.0, 1.0, 0.0).unwrap();
        assert_eq!(f.dark[1], 0.0);
        let flipped = interfere(x, 800.0, 800.0, 1.0, std::f64::consts::PI).unwrap();
        assert!((flipped.dark[1] - 0.5).abs() < 1e-15);
        let partial = interfere(x, 800.0, 800.0, 0.92, 0.0).unwrap();
        let q = partial.dark[1] / (partial.dark[1] + partial.bright[1]);
        assert!((q - 0.04).abs() < 1e-12);
        assert!(matches!(
            interfere(x, 700.0, 800.0, 1.0, 0.0),
            Err(Error::DelayMismatch { .. })
        ));
    }

    #[test]
    fn pll_constant_without_noise() {
        let p = PllParams {
            gain_per_s: 0.0,
            diffusion_rad2_per_s: 0.0,
            step_s: 1e-3,
            initial_rad: 0.3,
        };
        let trace = pll_phase_process(&p, 1.0, 1).unwrap();
        assert!(trace.values.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn pll_stationary_rms() {
        let p = PllParams::for_residual(0.2, 10.0, 1e-3);
        // oracle: stationary variance of the discrete OU recursion
        let a: f64 = 1.0 - 10.0 * 1e-3;
        let var = p.diffusion_rad2_per_s * 1e-3 / (1.0 - a * a);
        assert!((var.sqrt() - 0.2).abs() < 1e-12);
        let trace = pll_phase_process(&p, 2000.0, 7).unwrap();
        let rms = trace.rms();
        assert!((rms - 0.2).abs() < 0.02, "rms {rms}");
    }

    #[test]
    fn residual_phase_sets_x_error() {
        let p = PllParams::for_residual(0.29, 10.0, 1e-3);
        let trace = pll_phase_process(&p, 2000.0, 8).unwrap();
        let q: f64 = trace.values.iter().map(|v| (1.0 - v.cos()) / 2.0).sum::<f64>()
            / trace.values.len() as f64;
        let closed = (1.0 - (-0.29f64.powi(2) / 2.0).exp()) / 2.0;
        assert!((closed - 0.0206).abs() < 1e-3);
        assert!((q - closed).abs() < 0.1 * closed, "{q} vs {closed}");
    }

    #[test]
    fn feedback_reduces_window_variance() {
        let r = ReceiverSpec::default();
        let window = |trace: &TimeSeries| -> Vec<f64> {
            trace
                .values
                .chunks(1000)
                .map(|c| c.iter().map(|v| (1.0 - 0.92 * v.cos()) / 2.0).sum::<f64>() / c.len() as f64)
                .collect()
        };
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
        };
        let locked = pll_phase_process(&r.pll(true), 200.0, 9).unwrap();
        let free = pll_phase_process(&r.pll(false), 200.0, 9).unwrap();
        assert!(var(&window(&locked)) < var(&window(&free)));
    }

    #[test]
    fn noiseless_sifting_is_error_free() {
        let p = ProtocolParams {
            p_z: 0.5,
            ..ProtocolParams::with_intensities(1.0, 0.5)
        };
        let src = KeyedSymbols::new(&p, 5);
        let r = quiet_receiver();
        let d = DetectorSpec {
            efficiency: 1.0,
            dark_cps: 0.0,
            ..DetectorSpec::default()
        };
        let phase = TimeSeries::constant(0.0);
        let rec = reception(&src, &p, &r, &d, &phase, 1.0);
        let log = detect_block(&rec, 0..100_000, 6).unwrap();
        let tally = sift(&src, &log, 0..100_000, &rec.timing, &rec.gates, 1).unwrap();
        assert!(tally.n.total(Basis::Z) > 1000 && tally.n.total(Basis::X) > 100);
        assert_eq!(tally.m.total(Basis::Z), 0);
        assert_eq!(tally.m.total(Basis::X), 0);
    }

    #[test]
    fn background_only_gives_half_z_errors() {
        let p = ProtocolParams::default();
        let src = KeyedSymbols::new(&p, 5);
        let r = ReceiverSpec {
            background_z_cps: 5e6,
            ..quiet_receiver()
        };
        let d = DetectorSpec::default();
        let phase = TimeSeries::constant(0.0);
        let rec = reception(&src, &p, &r, &d, &phase, 0.0);
        let n = 5_000_000;
        let log = simulate_clicks(&rec, 0..n, 7).unwrap();
        let tally = sift(&src, &log, 0..n, &rec.timing, &rec.gates, 2).unwrap();
        let nz = tally.n.total(Basis::Z) as f64;
        let q = tally.basis_qber(Basis::Z);
        assert!(nz > 10_000.0);
        assert!((q - 0.5).abs() < 3.0 * (0.25 / nz).sqrt(), "Q_Z = {q}");
    }

    #[test]
    fn fringe_law_at_dark_port() {
        let p = ProtocolParams {
            p_z: 0.0,
            p_mu1: 1.0,
            mu1: 1.0,
            ..ProtocolParams::default()
        };
        let src = KeyedSymbols::new(&p, 9);
        let r = quiet_receiver();
        let d = DetectorSpec {
            dark_cps: 0.0,
            ..DetectorSpec::default()
        };
        for step in 0..8 {
            let phi = step as f64 * std::f64::consts::TAU / 8.0;
            let phase = TimeSeries::constant(phi);
            let rec = reception(&src, &p, &r, &d, &phase, 0.05);
            let n = 400_000;
            let log = simulate_clicks(&rec, 0..n, step).unwrap();
            let tally = sift(&src, &log, 0..n, &rec.timing, &rec.gates, 3).unwrap();
            let q = tally.basis_qber(Basis::X);
            let expect = (1.0 - phi.cos()) / 2.0;
            let nx = tally.n.total(Basis::X) as f64;
            let sigma = (expect * (1.0 - expect) / nx).sqrt().max(1.0 / nx);
            assert!((q - expect).abs() < 4.0 * sigma + 2e-3, "φ={phi}: {q} vs {expect}");
        }
    }

    #[test]
    fn event_engine_matches_reference() {
        let p = ProtocolParams::with_intensities(0.5, 0.2);
        let src = KeyedSymbols::new(&p, 11);
        let r = ReceiverSpec {
            z_misalignment: 0.03,
            background_z_cps: 2e5,
            background_x_cps: 2e6,
            ..ReceiverSpec::default()
        };
        let d = DetectorSpec::default();
        let phase = pll_phase_process(&r.pll(true), 0.01, 1).unwrap();
        let rec = reception(&src, &p, &r, &d, &phase, 0.02);
        let n = 3_000_000;
        let a = detect_block(&rec, 0..n, 21).unwrap();
        let b = simulate_clicks(&rec, 0..n, 22).unwrap();
        for det in [DETECTOR_Z, DETECTOR_X_BRIGHT, DETECTOR_X_DARK] {
            let (ka, kb) = (a.count(det) as f64, b.count(det) as f64);
            assert!((ka - kb).abs() < 4.0 * (ka + kb).sqrt(), "detector {det}: {ka} vs {kb}");
        }
        let ta = sift(&src, &a, 0..n, &rec.timing, &rec.gates, 1).unwrap();
        let tb = sift(&src, &b, 0..n, &rec.timing, &rec.gates, 1).unwrap();
        for basis in [Basis::Z, Basis::X] {
            let (qa, qb) = (ta.basis_qber(basis), tb.basis_qber(basis));
            let n = ta.n.total(basis).min(tb.n.total(basis)) as f64;
            let sigma = (2.0 * qa * (1.0 - qa) / n).sqrt();
            assert!((qa - qb).abs() < 4.0 * sigma, "{basis:?}: {qa} vs {qb}");
        }
    }

    #[test]
    fn expected_tally_matches_simulation() {
        let p = ProtocolParams::with_intensities(0.5, 0.2);
        let src = KeyedSymbols::new(&p, 12);
        let r = ReceiverSpec {
            z_misalignment: 0.02,
            background_z_cps: 4e5,
            background_x_cps: 4e6,
            ..ReceiverSpec::default()
        };
        let d = DetectorSpec::default();
        let phase = pll_phase_process(&r.pll(true), 0.05, 2).unwrap();
        let mut rec = reception(&src, &p, &r, &d, &phase, 0.01);
        rec.gates = Gates {
            z_half_width_ps: 100.0,
            x_half_width_ps: 20.0,
        };
        let n = 20_000_000u64;
        let sim = simulate_tally(&rec, 0..n, 4_000_000, 5).unwrap();
        let exp = expected_tally(&rec, n as f64).unwrap();
        for k in [Intensity::Mu1, Intensity::Mu2] {
            let j = k as usize;
            let nz = sim.n.get(Basis::Z, k) as f64;
            assert!((nz - exp.n_z[j]).abs() < 4.0 * exp.n_z[j].sqrt(), "n_Z {nz} vs {}", exp.n_z[j]);
            let nx = sim.n.get(Basis::X, k) as f64;
            assert!((nx - exp.n_x[j]).abs() < 4.0 * exp.n_x[j].sqrt(), "n_X {nx} vs {}", exp.n_x[j]);
            for b in [Basis::Z, Basis::X] {
                let q = exp.qber(b, k);
                let n = sim.n.get(b, k) as f64;
                let sigma = (q * (1.0 - q) / n).sqrt();
                assert!((sim.qber(b, k) - q).abs() < 4.0 * sigma, "{b:?} {k}: {} vs {q}", sim.qber(b, k));
            }
        }
    }

    #[test]
    fn gate_validation() {
        let p = ProtocolParams::default();
        let timing = Timing::new(&p, &DetectorSpec::default());
        let wide = Gates {
            z_half_width_ps: 100.0,
            x_half_width_ps: 900.0,
        };
        assert!(matches!(wide.validate(&timing), Err(Error::GateTooWide { .. })));
        let overlapping = Gates {
            z_half_width_ps: 420.0,
            x_half_width_ps: 10.0,
        };
        assert!(overlapping.validate(&timing).is_err());
        assert!(Gates::default().validate(&timing).is_ok());
    }

    #[test]
    fn tally_rejects_impossible_counts() {
        let mut n = BasisCounts::default();
        let mut m = BasisCounts::default();
        n.z.mu1 = 3;
        m.z.mu1 = 4;
        assert!(matches!(TallyBlock::new(n, m, 1.0), Err(Error::InvalidTally(_))));
        m.z.mu1 = 2;
        let t = TallyBlock::new(n, m, 1.0).unwrap();
        let json = serde_json::to_value(t).unwrap();
        assert_eq!(json["n"]["Z"]["mu1"], 3);
        assert_eq!(json["m"]["Z"]["mu1"], 2);
        assert_eq!(json["duration_s"], 1.0);
    }

    #[test]
    fn click_csv_layout() {
        let log = ClickLog::from_raw(
            vec![
                Click { time_ps: 20, detector: 2 },
                Click { time_ps: 5, detector: 0 },
            ],
            33.0,
        );
        assert_eq!(log.to_csv(), "detector_id,time_ps\n0,5\n2,20\n");
    }

    fn arb_tally() -> impl Strategy<Value = TallyBlock> {
        (proptest::array::uniform8(0u64..1000), 0.0f64..10.0).prop_map(|(v, dur)| {
            let mut t = TallyBlock {
                duration_s: dur,
                ..Default::default()
            };
            t.set(Basis::Z, Intensity::Mu1, v[0] + v[1], v[1]);
            t.set(Basis::Z, Intensity::Mu2, v[2] + v[3], v[3]);
            t.set(Basis::X, Intensity::Mu1, v[4] + v[5], v[5]);
            t.set(Basis::X, Intensity::Mu2, v[6] + v[7], v[7]);
            t
        })
    }

    proptest! {
        #[test]
        fn dead_time_invariant(times in proptest::collection::vec((0i64..5000, 0u8..3), 0..300), dead in 0.0f64..80.0) {
            let raw = times.iter().map(|&(t, d)| Click { time_ps: t, detector: d }).collect();
            let log = ClickLog::from_raw(raw, dead);
            if let Some(gap) = log.min_same_detector_gap() {
                prop_assert!(gap as f64 >= dead.max(1.0));
            }
            prop_assert!(log.events.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn merge_is_associative_and_commutative(a in arb_tally(), b in arb_tally(), c in arb_tally()) {
            let left = a.merge(&b).merge(&c);
            let right = a.merge(&b.merge(&c));
            prop_assert_eq!(left.n, right.n);
            prop_assert_eq!(left.m, right.m);
            prop_assert!((left.duration_s - right.duration_s).abs() < 1e-12);
            prop_assert_eq!(a.merge(&b).n, b.merge(&a).n);
        }

        #[test]
        fn qbers_are_probabilities(t in arb_tally()) {
            for b in [Basis::Z, Basis::X] {
                for k in [Intensity::Mu1, Intensity::Mu2] {
                    let q = t.qber(b, k);
                    prop_assert!((0.0..=1.0).contains(&q));
                }
            }
        }
    }
}
