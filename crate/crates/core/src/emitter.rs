//! Star-coupler OAM emitter.
//!
//! An input port with topological charge ℓ drives `K` output couplers arranged
//! on a ring. Output `k` carries the phase `2πℓk/K` plus its heater trim, so
//! the total winding around the ring is `2πℓ`. Spots are modeled as point
//! emitters; spot-shape overlap is folded into the demultiplexer loss.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps a phase into `(-π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(TAU);
    if p > PI {
        p -= TAU;
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChipGeometryRepr", into = "ChipGeometryRepr")]
pub struct ChipGeometry {
    num_outputs: usize,
    min_port: i32,
    max_port: i32,
    insertion_loss_db: f64,
}

#[derive(Serialize, Deserialize)]
struct ChipGeometryRepr {
    num_outputs: usize,
    min_port: i32,
    max_port: i32,
    insertion_loss_db: f64,
}

impl TryFrom<ChipGeometryRepr> for ChipGeometry {
    type Error = Error;
    fn try_from(r: ChipGeometryRepr) -> Result<Self> {
        ChipGeometry::new(r.num_outputs, r.min_port..=r.max_port, r.insertion_loss_db)
    }
}

impl From<ChipGeometry> for ChipGeometryRepr {
    fn from(g: ChipGeometry) -> Self {
        ChipGeometryRepr {
            num_outputs: g.num_outputs,
            min_port: g.min_port,
            max_port: g.max_port,
            insertion_loss_db: g.insertion_loss_db,
        }
    }
}

impl ChipGeometry {
    pub fn new(
        num_outputs: usize,
        ports: std::ops::RangeInclusive<i32>,
        insertion_loss_db: f64,
    ) -> Result<Self> {
        let (min_port, max_port) = (*ports.start(), *ports.end());
        if min_port > max_port {
            return Err(Error::invalid("supported_ports", "empty port range"));
        }
        let max_abs = min_port.unsigned_abs().max(max_port.unsigned_abs()) as usize;
        if num_outputs < 2 * max_abs + 1 {
            return Err(Error::invalid(
                "num_outputs",
                format!("{num_outputs} outputs cannot resolve winding up to |ℓ| = {max_abs}"),
            ));
        }
        if !(insertion_loss_db >= 0.0 && insertion_loss_db.is_finite()) {
            return Err(Error::invalid(
                "insertion_loss_db",
                format!("must be finite and non-negative, got {insertion_loss_db}"),
            ));
        }
        Ok(ChipGeometry {
            num_outputs,
            min_port,
            max_port,
            insertion_loss_db,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.num_outputs
    }

    pub fn ports(&self) -> std::ops::RangeInclusive<i32> {
        self.min_port..=self.max_port
    }

    pub fn insertion_loss_db(&self) -> f64 {
        self.insertion_loss_db
    }

    pub fn check_port(&self, port: i32) -> Result<()> {
        if self.ports().contains(&port) {
            Ok(())
        } else {
            Err(Error::PortOutOfRange {
                port,
                min: self.min_port,
                max: self.max_port,
            })
        }
    }
}

impl Default for ChipGeometry {
    /// 26 outputs, ports −7..=+7, 22 dB insertion loss.
    fn default() -> Self {
        ChipGeometry::new(26, -7..=7, 22.0).expect("valid default geometry")
    }
}

/// Per-output heater phase trims in radians, each wrapped into `(-π, π]`.
///
/// Serializes as a flat JSON list of `K` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct HeaterState {
    phases: Vec<f64>,
}

impl From<Vec<f64>> for HeaterState {
    fn from(v: Vec<f64>) -> Self {
        HeaterState::new(v)
    }
}

impl From<HeaterState> for Vec<f64> {
    fn from(h: HeaterState) -> Self {
        h.phases
    }
}

impl HeaterState {
    pub fn new(phases: Vec<f64>) -> Self {
        HeaterState {
            phases: phases.into_iter().map(wrap_phase).collect(),
        }
    }

    pub fn zeros(num_outputs: usize) -> Self {
        HeaterState {
            phases: vec![0.0; num_outputs],
        }
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Adds `offsets` element-wise, wrapping each result.
    pub fn perturbed(&self, offsets: &[f64]) -> HeaterState {
        HeaterState::new(
            self.phases
                .iter()
                .zip(offsets)
                .map(|(p, d)| p + d)
                .collect(),
        )
    }

    fn with_phase(&self, k: usize, phase: f64) -> HeaterState {
        let mut phases = self.phases.clone();
        phases[k] = wrap_phase(phase);
        HeaterState { phases }
    }
}

/// Complex amplitudes on the output ring, in square-root-power units.
#[derive(Debug, Clone, PartialEq)]
pub struct EmitterField {
    amplitudes: Vec<Complex64>,
}

impl EmitterField {
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        EmitterField { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Azimuthal harmonic `m`: `(1/√K) Σ_k a_k exp(−i2πmk/K)`.
    pub fn harmonic(&self, m: i32) -> Complex64 {
        let k_total = self.amplitudes.len() as f64;
        let step = -TAU * m as f64 / k_total;
        let sum: Complex64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| a * Complex64::from_polar(1.0, step * k as f64))
            .sum();
        sum / k_total.sqrt()
    }

    fn accumulate(&mut self, other: &EmitterField, scale: Complex64) {
        for (a, b) in self.amplitudes.iter_mut().zip(&other.amplitudes) {
            *a += scale * b;
        }
    }
}

fn check_heaters(geometry: &ChipGeometry, heaters: &HeaterState) -> Result<()> {
    if heaters.len() != geometry.num_outputs() {
        return Err(Error::invalid(
            "heaters",
            format!(
                "expected {} phases, got {}",
                geometry.num_outputs(),
                heaters.len()
            ),
        ));
    }
    Ok(())
}

/// Field emitted when `input_power` is injected into input `port`.
pub fn emit_field(
    port: i32,
    geometry: &ChipGeometry,
    heaters: &HeaterState,
    input_power: f64,
) -> Result<EmitterField> {
    geometry.check_port(port)?;
    check_heaters(geometry, heaters)?;
    if !(input_power > 0.0 && input_power.is_finite()) {
        return Err(Error::invalid(
            "input_power",
            format!("must be positive, got {input_power}"),
        ));
    }
    let k_total = geometry.num_outputs();
    let transmitted = input_power * 10f64.powf(-geometry.insertion_loss_db() / 10.0);
    let magnitude = (transmitted / k_total as f64).sqrt();
    let step = TAU * port as f64 / k_total as f64;
    let amplitudes = heaters
        .phases()
        .iter()
        .enumerate()
        .map(|(k, delta)| Complex64::from_polar(magnitude, step * k as f64 + delta))
        .collect();
    Ok(EmitterField { amplitudes })
}

/// Coherent superposition of several simultaneously driven input ports.
///
/// Each entry is `(port, complex input amplitude)`; the port is driven with
/// unit power and the resulting field scaled by the amplitude.
pub fn multiplex(
    excitations: &[(i32, Complex64)],
    geometry: &ChipGeometry,
    heaters: &HeaterState,
) -> Result<EmitterField> {
    check_heaters(geometry, heaters)?;
    for (i, (port, _)) in excitations.iter().enumerate() {
        geometry.check_port(*port)?;
        if excitations[..i].iter().any(|(p, _)| p == port) {
            return Err(Error::DuplicatePort(*port));
        }
    }
    let mut total = EmitterField {
        amplitudes: vec![Complex64::new(0.0, 0.0); geometry.num_outputs()],
    };
    for &(port, amplitude) in excitations {
        let field = emit_field(port, geometry, heaters, 1.0)?;
        total.accumulate(&field, amplitude);
    }
    Ok(total)
}

/// Worst pairwise leakage (dB) between the emitter's own azimuthal harmonics
/// for the given ports, ignoring the fiber.
pub fn emitter_crosstalk_db(
    ports: &[i32],
    geometry: &ChipGeometry,
    heaters: &HeaterState,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &l in ports {
        let field = emit_field(l, geometry, heaters, 1.0)?;
        let own = field.harmonic(l).norm_sqr();
        for &m in ports.iter().filter(|&&m| m != l) {
            let ratio = field.harmonic(m).norm_sqr() / own;
            worst = worst.max(power_ratio_db(ratio));
        }
    }
    Ok(worst)
}

/// `10·log10(ratio)`, floored at −300 dB so exact zeros stay finite.
pub fn power_ratio_db(ratio: f64) -> f64 {
    10.0 * ratio.max(1e-30).log10()
}

/// Cyclic coordinate descent over the heater phases.
///
/// Each round visits every output once and tries `grid_points` equally spaced
/// absolute phases (plus the current value) for it, keeping the best. A
/// candidate replaces the incumbent only if it strictly lowers the objective,
/// or ties it with a smaller |δ_k|, so the objective never increases.
pub fn calibrate_heaters<F>(
    target_ports: &[i32],
    misaligned: &HeaterState,
    rounds: usize,
    grid_points: usize,
    objective: F,
) -> Result<HeaterState>
where
    F: Fn(&HeaterState) -> f64,
{
    if target_ports.is_empty() {
        return Err(Error::EmptyTargets);
    }
    if rounds == 0 {
        return Err(Error::invalid("rounds", "must be at least 1"));
    }
    if grid_points == 0 {
        return Err(Error::invalid("grid_points", "must be at least 1"));
    }
    const TIE: f64 = 1e-12;
    let mut state = misaligned.clone();
    let mut best = objective(&state);
    for _ in 0..rounds {
        for k in 0..state.len() {
            let mut best_phase = state.phases()[k];
            for j in 0..grid_points {
                let candidate = wrap_phase(TAU * j as f64 / grid_points as f64);
                let value = objective(&state.with_phase(k, candidate));
                let better = value < best - TIE;
                let tie = (value - best).abs() <= TIE && candidate.abs() < best_phase.abs();
                if better || tie {
                    best = best.min(value);
                    best_phase = candidate;
                }
            }
            state = state.with_phase(k, best_phase);
        }
    }
    Ok(state)
}
