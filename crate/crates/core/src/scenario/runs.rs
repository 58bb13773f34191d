use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{build_testbed, ChannelSet, ScenarioConfig};
use crate::channel::{
    crosstalk_power, crosstalk_time_of_flight, impulse_response, smear_response, CrosstalkMatrix,
};
use crate::detection::{
    expected_tally, pll_phase_process, simulate_tally, Reception, TallyBlock, TimeSeries,
};
use crate::emitter::{emitter_crosstalk_db, HeaterState};
use crate::error::{Error, Result};
use crate::protocol::{Basis, ProtocolParams};
use crate::security::{optimize_mu, DecoySetting, KeyRateReport, ModeReport, MuOptimum};
use crate::seed::{derive, mode_component, stream};

/// Output file name and contents.
pub type OutputFile = (String, String);

pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

fn report_json<T: Serialize>(command: &str, cfg: &ScenarioConfig, result: &T) -> Result<OutputFile> {
    let doc = serde_json::json!({
        "command": command,
        "config": cfg,
        "result": result,
    });
    Ok(("report.json".into(), serde_json::to_string_pretty(&doc)? + "\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosstalkRun {
    pub power: CrosstalkMatrix,
    pub time_of_flight: CrosstalkMatrix,
    pub heaters: HeaterState,
    pub coupling_strength: f64,
    /// Worst emitter-only leakage between the driven ports before and after calibration.
    pub emitter_db_before: f64,
    pub emitter_db_after: f64,
}

impl CrosstalkRun {
    pub fn files(&self, cfg: &ScenarioConfig) -> Result<Vec<OutputFile>> {
        Ok(vec![
            ("crosstalk.csv".into(), self.power.to_csv()),
            ("crosstalk_tof.csv".into(), self.time_of_flight.to_csv()),
            report_json("crosstalk", cfg, self)?,
        ])
    }
}

/// Calibrates the chip, then measures crosstalk by power and by time of flight.
pub fn run_crosstalk(cfg: &ScenarioConfig) -> Result<CrosstalkRun> {
    let tb = build_testbed(cfg)?;
    let modes = cfg.mode_numbers();
    let power = crosstalk_power(&tb.link, &modes)?;
    let tof = &cfg.time_of_flight;
    let mut delays = Vec::with_capacity(modes.len());
    let mut responses = Vec::with_capacity(modes.len());
    for &m in &modes {
        delays.push((m, tb.link.fiber.delay_of(m)?));
        let ideal = impulse_response(&tb.link, m)?;
        let seed = derive(cfg.seed, &[stream::TIME_OF_FLIGHT, mode_component(m)]);
        responses.push(smear_response(&ideal, tof.pulse_width_ns, tof.samples, seed));
    }
    let time_of_flight = crosstalk_time_of_flight(&delays, &responses, tof.bin_width_ns)?;
    Ok(CrosstalkRun {
        power,
        time_of_flight,
        emitter_db_before: emitter_crosstalk_db(&modes, &cfg.chip, &tb.misaligned_heaters)?,
        emitter_db_after: emitter_crosstalk_db(&modes, &cfg.chip, &tb.link.heaters)?,
        heaters: tb.link.heaters,
        coupling_strength: tb.coupling_strength,
    })
}

/// Simulates `pulses` pulses as `spans` equal contiguous runs spread evenly
/// over `[start, start + window)`, span `j` seeded with `derive(seed, [j])`.
pub fn simulate_spans(
    reception: &Reception,
    start: u64,
    window: u64,
    pulses: u64,
    spans: u64,
    sub_block: u64,
    seed: u64,
) -> Result<TallyBlock> {
    if spans == 0 || pulses < spans || pulses > window {
        return Err(Error::invalid("spans", "need spans ≤ pulses ≤ window"));
    }
    let per_span = pulses / spans;
    let mut total = TallyBlock::default();
    for j in 0..spans {
        let begin = start + (j as u128 * window as u128 / spans as u128) as u64;
        let len = if j + 1 == spans { pulses - per_span * (spans - 1) } else { per_span };
        let t = simulate_tally(reception, begin..begin + len, sub_block, derive(seed, &[j]))?;
        total = total.merge(&t);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkdRun {
    pub report: KeyRateReport,
    pub crosstalk: CrosstalkMatrix,
    pub simulated_pulses_per_mode: u64,
    pub block_pulses: u64,
}

impl QkdRun {
    pub fn files(&self, cfg: &ScenarioConfig) -> Result<Vec<OutputFile>> {
        Ok(vec![
            ("qber_table.csv".into(), self.report.qber_table_csv()),
            ("skr.csv".into(), self.report.skr_csv()),
            report_json("qkd", cfg, self)?,
        ])
    }
}

/// All configured modes transmit at once; each mode in `modes` is
/// demultiplexed and analyzed in turn. Counts from the simulated pulses are
/// rescaled to one full key block before the finite-key analysis.
pub fn run_qkd(cfg: &ScenarioConfig, modes: &[i32]) -> Result<QkdRun> {
    if modes.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let tb = build_testbed(cfg)?;
    let set = ChannelSet::new(cfg, &tb)?;
    let block = cfg.block_pulses();
    let pulses = cfg.simulated_pulses();
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        reports.push(analyze_mode(cfg, &set, mode, &[])?);
    }
    Ok(QkdRun {
        report: KeyRateReport::new(reports),
        crosstalk: crosstalk_power(&tb.link, &cfg.mode_numbers())?,
        simulated_pulses_per_mode: pulses,
        block_pulses: block,
    })
}

/// Simulates one mode over a block. `replica` extends the PLL and detection
/// seed paths; the empty path reproduces [`run_qkd`].
fn analyze_mode(cfg: &ScenarioConfig, set: &ChannelSet, mode: i32, replica: &[u64]) -> Result<ModeReport> {
    let idx = set.index_of(mode)?;
    let ch = &set.channels[idx];
    let block = cfg.block_pulses();
    let pulses = cfg.simulated_pulses();
    let sim = cfg.simulation;
    let mc = mode_component(mode);
    let path = |s: u64| [&[s, mc][..], replica].concat();
    let phase = pll_phase_process(&ch.receiver.pll(true), cfg.duration_s, derive(cfg.seed, &path(stream::PLL)))?;
    let reception = set.reception(idx, None, &phase, None);
    let seed = derive(cfg.seed, &path(stream::DETECTION));
    let raw = simulate_spans(&reception, 0, block, pulses, sim.spans, sim.sub_block, seed)?;
    let mut tally = raw.scaled(block as f64 / pulses as f64);
    tally.duration_s = cfg.duration_s;
    let setting = DecoySetting::new(ch.protocol.mu1, ch.protocol.mu2, ch.protocol.p_mu1)?;
    ModeReport::from_tally(mode, tally, &setting, &cfg.security)
}

/// `copies` statistically independent replicas of one mode's channel on the
/// same calibrated testbed. Replica 0 is the channel of [`run_qkd`]; replica
/// `k > 0` draws its phase and detection noise from fresh seed paths.
pub fn run_replicas(cfg: &ScenarioConfig, mode: i32, copies: u64) -> Result<KeyRateReport> {
    let tb = build_testbed(cfg)?;
    let set = ChannelSet::new(cfg, &tb)?;
    let reports = (0..copies)
        .map(|k| {
            let replica: &[u64] = if k == 0 { &[] } else { &[k] };
            analyze_mode(cfg, &set, mode, replica)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeyRateReport::new(reports))
}

/// Relative power multiplier `1 + x(t)` with `x` an Ornstein–Uhlenbeck process.
pub fn heater_drift_gain(rms: f64, correlation_s: f64, step_s: f64, duration_s: f64, seed: u64) -> TimeSeries {
    let a = (-step_s / correlation_s).exp();
    let kick = rms * (1.0 - a * a).sqrt();
    let n = (duration_s / step_s).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 0.0f64;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push((1.0 + x).max(0.0));
        let z: f64 = StandardNormal.sample(&mut rng);
        x = a * x + kick * z;
    }
    TimeSeries { step_s, values }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityWindow {
    pub index: usize,
    pub start_s: f64,
    pub q_z: f64,
    pub q_x: f64,
    pub tally: TallyBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRun {
    pub mode: i32,
    pub feedback: bool,
    pub drift: bool,
    pub windows: Vec<StabilityWindow>,
}

impl StabilityRun {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,start_s,n_z,m_z,n_x,m_x,qber_z,qber_x\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                w.index,
                w.start_s,
                w.tally.n.total(Basis::Z),
                w.tally.m.total(Basis::Z),
                w.tally.n.total(Basis::X),
                w.tally.m.total(Basis::X),
                w.q_z,
                w.q_x
            ));
        }
        out
    }

    pub fn files(&self, cfg: &ScenarioConfig) -> Result<Vec<OutputFile>> {
        Ok(vec![
            ("stability.csv".into(), self.to_csv()),
            report_json("stability", cfg, self)?,
        ])
    }
}

/// Long acquisition on one mode at the stability intensities, reporting
/// both QBERs per window.
pub fn run_stability(cfg: &ScenarioConfig) -> Result<StabilityRun> {
    cfg.validate()?;
    let st = cfg.stability;
    let mut cfg = cfg.clone();
    for m in cfg.modes.iter_mut().filter(|m| m.mode == st.mode) {
        m.mu1 = st.mu1;
        m.mu2 = st.mu2;
        m.z_misalignment = st.z_misalignment.or(m.z_misalignment);
        m.visibility = st.visibility.or(m.visibility);
    }
    let tb = build_testbed(&cfg)?;
    let set = ChannelSet::new(&cfg, &tb)?;
    let idx = set.index_of(st.mode)?;
    let ch = &set.channels[idx];
    let mc = mode_component(st.mode);
    let (phase, drift) = if st.drift {
        let phase = pll_phase_process(&ch.receiver.pll(st.feedback), st.duration_s, derive(cfg.seed, &[stream::PLL, mc]))?;
        let gain = heater_drift_gain(
            st.heater_drift_rms,
            st.heater_drift_correlation_s,
            st.heater_drift_step_s,
            st.duration_s,
            derive(cfg.seed, &[stream::HEATER_DRIFT]),
        );
        (phase, Some(gain))
    } else {
        (TimeSeries::constant(0.0), None)
    };
    let reception = set.reception(idx, None, &phase, drift.as_ref());
    let rate = cfg.protocol.qubit_rate_hz;
    let count = (st.duration_s / st.window_s).round() as usize;
    let window_pulses = (st.window_s * rate).round() as u64;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start_s = w as f64 * st.window_s;
        let start = (start_s * rate).round() as u64;
        let seed = derive(cfg.seed, &[stream::DETECTION, mc, w as u64]);
        let tally = simulate_spans(
            &reception,
            start,
            window_pulses,
            st.pulses_per_window.min(window_pulses),
            st.spans_per_window,
            cfg.simulation.sub_block,
            seed,
        )?;
        windows.push(StabilityWindow {
            index: w,
            start_s,
            q_z: tally.basis_qber(Basis::Z),
            q_x: tally.basis_qber(Basis::X),
            tally,
        });
    }
    Ok(StabilityRun {
        mode: st.mode,
        feedback: st.feedback,
        drift: st.drift,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeRun {
    pub mode: i32,
    pub optimum: MuOptimum,
}

impl OptimizeRun {
    pub fn files(&self, cfg: &ScenarioConfig) -> Result<Vec<OutputFile>> {
        Ok(vec![
            ("mu_surface.csv".into(), self.optimum.surface_csv()),
            report_json("optimize-mu", cfg, &serde_json::json!({
                "mode": self.mode,
                "mu1": self.optimum.mu1,
                "mu2": self.optimum.mu2,
                "skr_bits_per_s": self.optimum.skr,
            }))?,
        ])
    }
}

/// Grid search for the intensities of `mode` with the analytic count model
/// over one key block, the other modes transmitting at their configured values.
pub fn run_optimize_mu(cfg: &ScenarioConfig, mode: i32) -> Result<OptimizeRun> {
    let tb = build_testbed(cfg)?;
    let set = ChannelSet::new(cfg, &tb)?;
    let idx = set.index_of(mode)?;
    let base = set.channels[idx].protocol.clone();
    let phase = TimeSeries::constant(0.0);
    let block = cfg.block_pulses() as f64;
    let optimum = optimize_mu(&cfg.optimizer, base.p_mu1, &cfg.security, |mu1, mu2| {
        let protocol = ProtocolParams { mu1, mu2, ..base };
        expected_tally(&set.reception(idx, Some(&protocol), &phase, None), block)
    })?;
    Ok(OptimizeRun { mode, optimum })
}
