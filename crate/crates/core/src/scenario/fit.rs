use serde::{Deserialize, Serialize};

use super::{ChannelSet, ScenarioConfig, Testbed};
use crate::detection::{expected_tally, ExpectedTally, TimeSeries};
use crate::error::{Error, Result};
use crate::protocol::{Basis, Intensity};

/// Observed QBERs of one mode as fractions, index 0 = μ1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberTargets {
    pub mode: i32,
    pub q_z: [f64; 2],
    pub q_x: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub mode: i32,
    pub z_misalignment: f64,
    pub visibility: f64,
    pub x_gate_half_width_ps: f64,
    /// Largest deviation from the targets over the four QBERs, as a fraction.
    pub max_residual: f64,
}

/// Analytic QBERs of `mode` under `cfg`, index 0 = μ1.
pub fn model_qbers(cfg: &ScenarioConfig, testbed: &Testbed, mode: i32) -> Result<([f64; 2], [f64; 2])> {
    let e = model_tally(cfg, testbed, mode)?;
    let q = |b| [e.qber(b, Intensity::Mu1), e.qber(b, Intensity::Mu2)];
    Ok((q(Basis::Z), q(Basis::X)))
}

fn model_tally(cfg: &ScenarioConfig, testbed: &Testbed, mode: i32) -> Result<ExpectedTally> {
    let set = ChannelSet::new(cfg, testbed)?;
    let idx = set.index_of(mode)?;
    let phase = TimeSeries::constant(0.0);
    expected_tally(&set.reception(idx, None, &phase, None), cfg.block_pulses() as f64)
}

fn golden_min(lo: f64, hi: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..80 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

fn sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Least-squares fit of Z misalignment, visibility and X gate half-width
/// (integer picoseconds up to `max_gate_ps`) to the target QBERs.
pub fn fit_mode(cfg: &ScenarioConfig, testbed: &Testbed, target: &QberTargets, max_gate_ps: u32) -> Result<ModeFit> {
    let pos = cfg
        .modes
        .iter()
        .position(|m| m.mode == target.mode)
        .ok_or(Error::ModeNotInSet(target.mode))?;
    let mut work = cfg.clone();
    let e_z = golden_min(0.0, 0.2, |e| {
        work.modes[pos].z_misalignment = Some(e);
        Ok(sq(model_qbers(&work, testbed, target.mode)?.0, target.q_z))
    })?;
    work.modes[pos].z_misalignment = Some(e_z);
    let mut best: Option<(f64, f64, f64)> = None;
    for gate in 0..=max_gate_ps {
        work.modes[pos].x_gate_half_width_ps = Some(gate as f64);
        let v = golden_min(0.5, 1.0, |v| {
            work.modes[pos].visibility = Some(v);
            Ok(sq(model_qbers(&work, testbed, target.mode)?.1, target.q_x))
        })?;
        work.modes[pos].visibility = Some(v);
        let err = sq(model_qbers(&work, testbed, target.mode)?.1, target.q_x);
        if best.is_none_or(|b| err < b.2) {
            best = Some((gate as f64, v, err));
        }
    }
    let (gate, v, _) = best.expect("at least one gate width");
    work.modes[pos].x_gate_half_width_ps = Some(gate);
    work.modes[pos].visibility = Some(v);
    let (qz, qx) = model_qbers(&work, testbed, target.mode)?;
    let max_residual = (0..2)
        .flat_map(|k| [(qz[k] - target.q_z[k]).abs(), (qx[k] - target.q_x[k]).abs()])
        .fold(0.0, f64::max);
    Ok(ModeFit {
        mode: target.mode,
        z_misalignment: e_z,
        visibility: v,
        x_gate_half_width_ps: gate,
        max_residual,
    })
}
