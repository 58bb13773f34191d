//! Scenario configuration, presets and the runners behind the `oamqkd` binary.
//!
//! A scenario is one JSON document ([`ScenarioConfig`]); omitted fields take
//! the 2-mode preset values. All randomness derives from `seed` through
//! [`crate::seed::derive`] with these paths:
//!
//! | stream                          | path                               |
//! |---------------------------------|------------------------------------|
//! | heater misalignment             | `[HEATER_NOISE]`                   |
//! | fiber coupling generator        | `[COUPLING]`                       |
//! | time-of-flight histogram        | `[TIME_OF_FLIGHT, ℓ]`              |
//! | symbols of mode ℓ               | `[SYMBOLS, ℓ]`                     |
//! | phase lock of mode ℓ            | `[PLL, ℓ]`                         |
//! | detection, mode ℓ, span `j`     | `[DETECTION, ℓ, j]`                |
//! | heater drift                    | `[HEATER_DRIFT]`                   |
//! | replica `k > 0` of mode ℓ       | `[PLL, ℓ, k]`, `[DETECTION, ℓ, k]` |
//!
//! Negative ℓ enter the path through [`crate::seed::mode_component`].

mod fit;
mod runs;

pub use fit::*;
pub use runs::*;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{
    crosstalk_power, default_group_delays, random_hermitian, FiberSpec, ModeTransferMatrix,
    OpticalLink,
};
use crate::detection::{transmission_from_db, DetectorSpec, Gates, Reception, ReceiverSpec, Stream, TimeSeries, Timing};
use crate::emitter::{calibrate_heaters, emitter_crosstalk_db, ChipGeometry, HeaterState};
use crate::error::{Error, Result};
use crate::protocol::{KeyedSymbols, ProtocolParams};
use crate::security::{MuGrid, SecurityParams};
use crate::seed::{derive, mode_component, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub rounds: usize,
    pub grid_points: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            rounds: 6,
            grid_points: 64,
        }
    }
}

/// Crosstalk level the fiber coupling strength is tuned to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrosstalkTarget {
    /// Largest off-diagonal entry, in dB.
    WorstDb(f64),
    /// Smallest off-diagonal entry, in dB.
    BestDb(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberConfig {
    pub length_m: f64,
    pub loss_db: f64,
    pub mode_set: Vec<i32>,
    /// One delay per entry of `mode_set`; 1.5 ns spacing when omitted.
    pub group_delay_ns: Option<Vec<f64>>,
    /// Strength ε of `exp(iεH)`; ignored when `crosstalk_target` is set.
    pub coupling_strength: f64,
    pub crosstalk_target: Option<CrosstalkTarget>,
}

impl Default for FiberConfig {
    fn default() -> Self {
        FiberConfig {
            length_m: 800.0,
            loss_db: 1.0,
            mode_set: vec![-7, -5],
            group_delay_ns: None,
            coupling_strength: 0.0,
            crosstalk_target: None,
        }
    }
}

/// Per-mode transmitter and receiver settings. `None` falls back to the
/// shared receiver and gate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub mode: i32,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(default)]
    pub launch_offset_ps: f64,
    #[serde(default)]
    pub z_misalignment: Option<f64>,
    #[serde(default)]
    pub visibility: Option<f64>,
    #[serde(default)]
    pub x_gate_half_width_ps: Option<f64>,
}

impl ModeConfig {
    pub fn new(mode: i32, mu1: f64, mu2: f64) -> Self {
        ModeConfig {
            mode,
            mu1,
            mu2,
            launch_offset_ps: 0.0,
            z_misalignment: None,
            visibility: None,
            x_gate_half_width_ps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Pulses simulated per mode; counts are rescaled to the full block.
    /// `None` simulates every pulse of the block.
    pub pulses_per_point: Option<u64>,
    /// Number of evenly spaced contiguous spans the simulated pulses are split into.
    pub spans: u64,
    pub sub_block: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            pulses_per_point: None,
            spans: 200,
            sub_block: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub mode: i32,
    pub mu1: f64,
    pub mu2: f64,
    pub duration_s: f64,
    pub window_s: f64,
    pub pulses_per_window: u64,
    pub spans_per_window: u64,
    /// Alignment of the monitored mode during this acquisition; `None` keeps the mode's own values.
    pub z_misalignment: Option<f64>,
    pub visibility: Option<f64>,
    /// Phase-lock feedback on.
    pub feedback: bool,
    /// Phase noise and heater drift on; off gives a static receiver.
    pub drift: bool,
    /// RMS of the relative power fluctuation caused by heater drift.
    pub heater_drift_rms: f64,
    pub heater_drift_correlation_s: f64,
    pub heater_drift_step_s: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            mode: -7,
            mu1: 0.24,
            mu2: 0.13,
            duration_s: 4500.0,
            window_s: 75.0,
            pulses_per_window: 5_000_000_000,
            spans_per_window: 150,
            z_misalignment: Some(0.01694),
            visibility: Some(0.94477),
            feedback: true,
            drift: true,
            heater_drift_rms: 0.05,
            heater_drift_correlation_s: 600.0,
            heater_drift_step_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeOfFlightConfig {
    pub pulse_width_ns: f64,
    pub samples: usize,
    pub bin_width_ns: f64,
}

impl Default for TimeOfFlightConfig {
    fn default() -> Self {
        TimeOfFlightConfig {
            pulse_width_ns: 0.1,
            samples: 2000,
            bin_width_ns: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub chip: ChipGeometry,
    /// RMS of the uncalibrated heater phase errors, in rad.
    pub heater_noise_rad: f64,
    pub calibration: CalibrationConfig,
    pub fiber: FiberConfig,
    pub demux_loss_db: f64,
    pub modes: Vec<ModeConfig>,
    pub protocol: ProtocolParams,
    pub receiver: ReceiverSpec,
    pub detector: DetectorSpec,
    pub gates: Gates,
    pub security: SecurityParams,
    /// Length of one key block in seconds.
    pub duration_s: f64,
    pub simulation: SimulationConfig,
    pub stability: StabilityConfig,
    pub optimizer: MuGrid,
    pub time_of_flight: TimeOfFlightConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::two_mode()
    }
}

/// Shipped parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TwoMode,
    ThreeMode,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2mode" => Ok(Preset::TwoMode),
            "3mode" => Ok(Preset::ThreeMode),
            _ => Err(Error::invalid("preset", format!("unknown preset `{s}`, expected 2mode or 3mode"))),
        }
    }
}

impl Preset {
    pub fn config(self) -> ScenarioConfig {
        match self {
            Preset::TwoMode => ScenarioConfig::two_mode(),
            Preset::ThreeMode => ScenarioConfig::three_mode(),
        }
    }
}

fn fitted(mode: i32, mu: (f64, f64), offset: f64, z_mis: f64, vis: f64, x_gate: f64) -> ModeConfig {
    ModeConfig {
        mode,
        mu1: mu.0,
        mu2: mu.1,
        launch_offset_ps: offset,
        z_misalignment: Some(z_mis),
        visibility: Some(vis),
        x_gate_half_width_ps: Some(x_gate),
    }
}

impl ScenarioConfig {
    fn base(name: &str, modes: Vec<ModeConfig>, target: CrosstalkTarget) -> Self {
        ScenarioConfig {
            name: name.into(),
            seed: 20_231_017,
            chip: ChipGeometry::default(),
            heater_noise_rad: 0.2,
            calibration: CalibrationConfig::default(),
            fiber: FiberConfig {
                mode_set: modes.iter().map(|m| m.mode).collect(),
                crosstalk_target: Some(target),
                ..Default::default()
            },
            demux_loss_db: 15.0,
            modes,
            protocol: ProtocolParams::default(),
            receiver: ReceiverSpec::default(),
            detector: DetectorSpec::default(),
            gates: Gates {
                z_half_width_ps: 100.0,
                x_half_width_ps: 5.0,
            },
            security: SecurityParams::default(),
            duration_s: 300.0,
            simulation: SimulationConfig::default(),
            stability: StabilityConfig::default(),
            optimizer: MuGrid::default(),
            time_of_flight: TimeOfFlightConfig::default(),
        }
    }

    /// Modes −7 and −5, fitted to the two-mode measurement.
    pub fn two_mode() -> Self {
        ScenarioConfig::base(
            "2mode",
            vec![
                fitted(-7, (0.26, 0.13), 0.0, 0.01923, 0.94477, 0.0),
                fitted(-5, (0.36, 0.13), 350.0, 0.01476, 0.95073, 0.0),
            ],
            CrosstalkTarget::WorstDb(-12.0),
        )
    }

    /// Modes −7, +6 and −5, fitted to the three-mode measurement.
    pub fn three_mode() -> Self {
        ScenarioConfig::base(
            "3mode",
            vec![
                fitted(-7, (0.28, 0.18), 0.0, 0.01694, 0.90215, 0.0),
                fitted(6, (0.41, 0.28), 350.0, 0.04259, 0.91802, 4.0),
                fitted(-5, (0.46, 0.305), 1400.0, 0.02084, 0.93272, 4.0),
            ],
            CrosstalkTarget::BestDb(-18.0),
        )
    }

    /// Parses a JSON document, reporting schema violations with their field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ScenarioConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn mode(&self, mode: i32) -> Result<&ModeConfig> {
        self.modes
            .iter()
            .find(|m| m.mode == mode)
            .ok_or(Error::ModeNotInSet(mode))
    }

    pub fn mode_numbers(&self) -> Vec<i32> {
        self.modes.iter().map(|m| m.mode).collect()
    }

    /// Pulses in one key block.
    pub fn block_pulses(&self) -> u64 {
        (self.duration_s * self.protocol.qubit_rate_hz).round() as u64
    }

    pub fn simulated_pulses(&self) -> u64 {
        self.simulation.pulses_per_point.unwrap_or_else(|| self.block_pulses())
    }

    /// Loss after the chip: fiber, demultiplexer and synchronization.
    pub fn link_loss_db(&self) -> f64 {
        self.fiber.loss_db + self.demux_loss_db + self.receiver.sync_loss_db
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::EmptyTargets);
        }
        let numbers = self.mode_numbers();
        for (i, m) in self.modes.iter().enumerate() {
            if numbers[..i].contains(&m.mode) {
                return Err(Error::DuplicatePort(m.mode));
            }
            if !self.fiber.mode_set.contains(&m.mode) {
                return Err(Error::ModeNotInSet(m.mode));
            }
            self.chip.check_port(m.mode)?;
            let p = self.mode_protocol(m);
            p.validate()?;
            self.mode_receiver(m).validate(&p)?;
        }
        for &m in &self.fiber.mode_set {
            self.chip.check_port(m)?;
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration_s", "must be positive"));
        }
        if !(self.heater_noise_rad >= 0.0) {
            return Err(Error::invalid("heater_noise_rad", "must be non-negative"));
        }
        self.detector.validate()?;
        self.security.validate()?;
        let sim = &self.simulation;
        if sim.spans == 0 || sim.sub_block == 0 {
            return Err(Error::invalid("simulation", "spans and sub_block must be positive"));
        }
        if sim.pulses_per_point.is_some_and(|n| n < sim.spans || n > self.block_pulses()) {
            return Err(Error::invalid(
                "simulation.pulses_per_point",
                "must lie between the span count and the block length",
            ));
        }
        let st = &self.stability;
        if !(st.window_s > 0.0 && st.duration_s >= st.window_s) {
            return Err(Error::invalid("stability.window_s", "must be positive and at most the duration"));
        }
        let windows = st.duration_s / st.window_s;
        if (windows - windows.round()).abs() > 1e-9 {
            return Err(Error::invalid("stability.window_s", "must divide the duration"));
        }
        if st.pulses_per_window == 0 || st.spans_per_window == 0 {
            return Err(Error::invalid("stability", "pulse counts must be positive"));
        }
        if !(st.heater_drift_rms >= 0.0 && st.heater_drift_correlation_s > 0.0 && st.heater_drift_step_s > 0.0) {
            return Err(Error::invalid("stability", "drift parameters must be positive"));
        }
        self.mode(st.mode)?;
        Ok(())
    }

    pub fn mode_protocol(&self, m: &ModeConfig) -> ProtocolParams {
        ProtocolParams {
            mu1: m.mu1,
            mu2: m.mu2,
            ..self.protocol
        }
    }

    pub fn mode_receiver(&self, m: &ModeConfig) -> ReceiverSpec {
        let mut r = self.receiver.clone();
        if let Some(v) = m.visibility {
            r.visibility = v;
        }
        if let Some(e) = m.z_misalignment {
            r.z_misalignment = e;
        }
        r
    }

    pub fn mode_gates(&self, m: &ModeConfig) -> Gates {
        Gates {
            x_half_width_ps: m.x_gate_half_width_ps.unwrap_or(self.gates.x_half_width_ps),
            ..self.gates
        }
    }

    fn fiber_spec(&self, coupling: ModeTransferMatrix) -> Result<FiberSpec> {
        let n = self.fiber.mode_set.len();
        let delays = self
            .fiber
            .group_delay_ns
            .clone()
            .unwrap_or_else(|| default_group_delays(n));
        FiberSpec::new(
            self.fiber.length_m,
            self.fiber.loss_db,
            self.fiber.mode_set.clone(),
            delays,
            coupling,
        )
    }
}

/// Calibrated chip plus fiber, ready for any scenario.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub link: OpticalLink,
    pub misaligned_heaters: HeaterState,
    pub coupling_strength: f64,
}

fn misaligned_heaters(cfg: &ScenarioConfig) -> Result<HeaterState> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[stream::HEATER_NOISE]));
    let normal = Normal::new(0.0, cfg.heater_noise_rad)
        .map_err(|e| Error::invalid("heater_noise_rad", e.to_string()))?;
    Ok(HeaterState::zeros(cfg.chip.num_outputs()).perturbed(
        &(0..cfg.chip.num_outputs())
            .map(|_| normal.sample(&mut rng))
            .collect::<Vec<_>>(),
    ))
}

fn off_diagonal_metric(link: &OpticalLink, modes: &[i32], target: CrosstalkTarget) -> Result<f64> {
    let m = crosstalk_power(link, modes)?;
    let value = match target {
        CrosstalkTarget::WorstDb(_) => m.worst_off_diagonal(),
        CrosstalkTarget::BestDb(_) => m.best_off_diagonal(),
    };
    Ok(value.unwrap_or(f64::NEG_INFINITY))
}

/// Bisection on ε so the chosen off-diagonal entry hits the target.
fn calibrate_coupling(
    cfg: &ScenarioConfig,
    link: &mut OpticalLink,
    target: CrosstalkTarget,
) -> Result<f64> {
    let goal = match target {
        CrosstalkTarget::WorstDb(v) | CrosstalkTarget::BestDb(v) => v,
    };
    let n = cfg.fiber.mode_set.len();
    if n < 2 {
        return Err(Error::invalid("fiber.crosstalk_target", "needs at least two modes"));
    }
    let generator = random_hermitian(n, derive(cfg.seed, &[stream::COUPLING]));
    let modes = cfg.mode_numbers();
    let eval = |eps: f64, link: &mut OpticalLink| -> Result<f64> {
        link.fiber = cfg.fiber_spec(ModeTransferMatrix::from_generator(&generator, eps)?)?;
        off_diagonal_metric(link, &modes, target)
    };
    let (mut lo, mut hi) = (0.0, 0.05);
    while eval(hi, link)? < goal {
        lo = hi;
        hi *= 2.0;
        if hi > 10.0 {
            return Err(Error::invalid("fiber.crosstalk_target", format!("{goal} dB is not reachable")));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval(mid, link)? < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eval(hi, link)?;
    Ok(hi)
}

/// Calibrates the heaters against seeded misalignment and tunes the fiber coupling.
pub fn build_testbed(cfg: &ScenarioConfig) -> Result<Testbed> {
    cfg.validate()?;
    let misaligned = misaligned_heaters(cfg)?;
    let ports = cfg.mode_numbers();
    let chip = cfg.chip.clone();
    let heaters = calibrate_heaters(
        &ports,
        &misaligned,
        cfg.calibration.rounds,
        cfg.calibration.grid_points,
        |h| emitter_crosstalk_db(&ports, &chip, h).unwrap_or(f64::INFINITY),
    )?;
    let n = cfg.fiber.mode_set.len();
    let mut link = OpticalLink {
        geometry: cfg.chip.clone(),
        heaters,
        fiber: cfg.fiber_spec(ModeTransferMatrix::identity(n))?,
        demux_loss_db: cfg.demux_loss_db,
    };
    let coupling_strength = match cfg.fiber.crosstalk_target {
        Some(target) => calibrate_coupling(cfg, &mut link, target)?,
        None => {
            let eps = cfg.fiber.coupling_strength;
            if eps != 0.0 {
                let generator = random_hermitian(n, derive(cfg.seed, &[stream::COUPLING]));
                link.fiber = cfg.fiber_spec(ModeTransferMatrix::from_generator(&generator, eps)?)?;
            }
            eps
        }
    };
    Ok(Testbed {
        link,
        misaligned_heaters: misaligned,
        coupling_strength,
    })
}

/// Owned per-mode transmitter/receiver state from which [`Reception`]s borrow.
pub struct ModeChannel {
    pub mode: i32,
    pub launch_offset_ps: f64,
    pub protocol: ProtocolParams,
    pub receiver: ReceiverSpec,
    pub gates: Gates,
    pub source: KeyedSymbols,
    /// `fractions[j]`: share of this mode's launched photons arriving in mode `j` of the scenario.
    pub fractions: Vec<f64>,
}

/// All transmitters of a scenario, driven simultaneously.
pub struct ChannelSet {
    pub channels: Vec<ModeChannel>,
    pub transmission: f64,
    pub detector: DetectorSpec,
}

impl ChannelSet {
    pub fn new(cfg: &ScenarioConfig, testbed: &Testbed) -> Result<Self> {
        let modes = cfg.mode_numbers();
        let set = testbed.link.fiber.mode_set().to_vec();
        let columns: Vec<usize> = modes
            .iter()
            .map(|m| set.iter().position(|s| s == m).ok_or(Error::ModeNotInSet(*m)))
            .collect::<Result<_>>()?;
        let channels = cfg
            .modes
            .iter()
            .map(|m| {
                let protocol = cfg.mode_protocol(m);
                let all = testbed.link.mode_fractions(m.mode)?;
                Ok(ModeChannel {
                    mode: m.mode,
                    launch_offset_ps: m.launch_offset_ps,
                    source: KeyedSymbols::new(
                        &protocol,
                        derive(cfg.seed, &[stream::SYMBOLS, mode_component(m.mode)]),
                    ),
                    protocol,
                    receiver: cfg.mode_receiver(m),
                    gates: cfg.mode_gates(m),
                    fractions: columns.iter().map(|&c| all[c]).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelSet {
            channels,
            transmission: transmission_from_db(cfg.link_loss_db()),
            detector: cfg.detector.clone(),
        })
    }

    pub fn index_of(&self, mode: i32) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.mode == mode)
            .ok_or(Error::ModeNotInSet(mode))
    }

    /// Reception of demultiplexed mode `target`, with every other transmitter leaking in.
    ///
    /// `own_protocol` overrides the target's intensities when given.
    pub fn reception<'a>(
        &'a self,
        target: usize,
        own_protocol: Option<&'a ProtocolParams>,
        phase: &'a TimeSeries,
        drift: Option<&'a TimeSeries>,
    ) -> Reception<'a> {
        let own = &self.channels[target];
        let mut streams = vec![Stream {
            source: &own.source,
            protocol: own_protocol.unwrap_or(&own.protocol),
            offset_ps: 0.0,
            fraction: own.fractions[target],
        }];
        for (j, other) in self.channels.iter().enumerate() {
            if j != target {
                streams.push(Stream {
                    source: &other.source,
                    protocol: &other.protocol,
                    offset_ps: other.launch_offset_ps - own.launch_offset_ps,
                    fraction: other.fractions[target],
                });
            }
        }
        Reception {
            timing: Timing::new(&own.protocol, &self.detector),
            receiver: &own.receiver,
            detector: &self.detector,
            gates: own.gates,
            transmission: self.transmission,
            streams,
            phase,
            drift,
        }
    }
}
