//! Finite-key security bound for the one-decoy three-state protocol.
//!
//! Event counts are corrected with Hoeffding's inequality at confidence
//! `ln(19/ε_sec)`. With `p_k` the probability of intensity `μ_k` and
//! `τ_n = Σ_k p_k e^{−μ_k} μ_k^n / n!`:
//!
//! ```text
//! n±_k  = e^{μ_k}/p_k · (n_k ± √(n/2 · ln(19/ε)))
//! s0^l  = τ0 (μ1 n−_2 − μ2 n+_1) / (μ1 − μ2)
//! s0^u  = 2 (τ0 e^{μ2}/p_2 · m_2 + √(n/2 · ln(19/ε)))
//! s1^l  = τ1 μ1 / (μ2 (μ1 − μ2)) · (n−_2 − (μ2/μ1)² n+_1 − (μ1² − μ2²)/μ1² · s0^u/τ0)
//! v1^u  = τ1 (m+_1 − m−_2) / (μ1 − μ2)      (X basis; m± deviation taken over n_X)
//! φ^u   = v1/s_X1 + γ(ε, v1/s_X1, s_Z1, s_X1)
//! γ(a,b,c,d) = √((c+d)(1−b)b / (c d ln 2) · log2((c+d)/(c d (1−b) b) · 19²/a²))
//! ℓ     = s0^l + s1^l (1 − h(φ^u)) − f_ec n_Z h(Q_Z) − 6 log2(19/ε_sec) − log2(2/ε_corr)
//! ```

use serde::{Deserialize, Serialize};

use crate::detection::{ExpectedTally, TallyBlock};
use crate::error::{Error, Result};
use crate::protocol::{Basis, Intensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_corr: f64,
    pub f_ec: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            eps_sec: 1e-9,
            eps_corr: 1e-9,
            f_ec: 1.16,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("eps_sec", self.eps_sec), ("eps_corr", self.eps_corr)] {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {e}")));
            }
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::invalid("f_ec", format!("must be at least 1, got {}", self.f_ec)));
        }
        Ok(())
    }

    /// Fixed penalty `6·log2(19/ε_sec) + log2(2/ε_corr)`.
    pub fn penalty_bits(&self) -> f64 {
        6.0 * (19.0 / self.eps_sec).log2() + (2.0 / self.eps_corr).log2()
    }
}

/// Intensities and their selection probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoySetting {
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
}

impl DecoySetting {
    pub fn new(mu1: f64, mu2: f64, p_mu1: f64) -> Result<Self> {
        if !(mu2 > 0.0 && mu1 > mu2 && mu1.is_finite()) {
            return Err(Error::invalid(
                "mu1/mu2",
                format!("need mu1 > mu2 > 0, got {mu1}, {mu2}"),
            ));
        }
        if !(p_mu1 > 0.0 && p_mu1 < 1.0) {
            return Err(Error::invalid("p_mu1", "must lie in (0, 1)"));
        }
        Ok(DecoySetting { mu1, mu2, p_mu1 })
    }

    fn p2(&self) -> f64 {
        1.0 - self.p_mu1
    }

    /// Probability that a pulse carries exactly `n` photons.
    pub fn tau(&self, n: u32) -> f64 {
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        [(self.mu1, self.p_mu1), (self.mu2, self.p2())]
            .iter()
            .map(|&(mu, p)| p * (-mu).exp() * mu.powi(n as i32) / fact)
            .sum()
    }
}

/// `h(p)` in bits for `p ∈ [0, ½]`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::invalid("p", format!("must lie in [0, 0.5], got {p}")));
    }
    Ok(entropy(p))
}

/// Binary entropy, symmetric about ½ and zero at the ends.
fn entropy(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub s0_lower: f64,
    pub s0_upper: f64,
    pub s1_lower: f64,
    pub s_x1_lower: f64,
    pub v_x1_upper: f64,
    pub phi_z_upper: f64,
}

struct Basis2 {
    n: [f64; 2],
    m: [f64; 2],
}

impl Basis2 {
    fn from_tally(t: &TallyBlock, b: Basis) -> Self {
        let g = |c: &crate::detection::BasisCounts, k| c.get(b, k) as f64;
        Basis2 {
            n: [g(&t.n, Intensity::Mu1), g(&t.n, Intensity::Mu2)],
            m: [g(&t.m, Intensity::Mu1), g(&t.m, Intensity::Mu2)],
        }
    }

    fn n_total(&self) -> f64 {
        self.n[0] + self.n[1]
    }

}

fn hoeffding(count: f64, eps: f64) -> f64 {
    (count / 2.0 * (19.0 / eps).ln()).sqrt()
}

/// `(s0^l, s0^u, s1^l)` for one basis.
fn event_bounds(d: &DecoySetting, c: &Basis2, eps: f64) -> (f64, f64, f64) {
    let (mu1, mu2) = (d.mu1, d.mu2);
    let (p1, p2) = (d.p_mu1, d.p2());
    let delta = hoeffding(c.n_total(), eps);
    let n_minus_2 = mu2.exp() / p2 * (c.n[1] - delta);
    let n_plus_1 = mu1.exp() / p1 * (c.n[0] + delta);
    let tau0 = d.tau(0);
    let tau1 = d.tau(1);
    let s0_l = tau0 * (mu1 * n_minus_2 - mu2 * n_plus_1) / (mu1 - mu2);
    let s0_u = 2.0 * (tau0 * mu2.exp() / p2 * c.m[1] + delta);
    let s1_l = tau1 * mu1 / (mu2 * (mu1 - mu2))
        * (n_minus_2 - (mu2 / mu1).powi(2) * n_plus_1 - (mu1 * mu1 - mu2 * mu2) / (mu1 * mu1) * s0_u / tau0);
    (s0_l, s0_u, s1_l)
}

/// Random-sampling correction between X and Z single-photon phase errors.
pub fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let var = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2);
    let arg = (c + d) / (c * d * (1.0 - b) * b) * (19.0 * 19.0) / (a * a);
    (var * arg.log2()).max(0.0).sqrt()
}

pub fn decoy_bounds(tally: &TallyBlock, setting: &DecoySetting, params: &SecurityParams) -> Result<DecoyBounds> {
    tally.validate()?;
    params.validate()?;
    let z = Basis2::from_tally(tally, Basis::Z);
    let x = Basis2::from_tally(tally, Basis::X);
    if z.n[0] == 0.0 || z.n[1] == 0.0 {
        return Err(Error::InvalidTally("Z detections needed at both intensities".into()));
    }
    let eps = params.eps_sec;
    let n_z = z.n_total();
    let (s0_l, s0_u, s1_l) = event_bounds(setting, &z, eps);
    let s0 = s0_l.clamp(0.0, n_z);
    let s1 = s1_l.clamp(0.0, n_z - s0);

    let (_, _, sx1_l) = event_bounds(setting, &x, eps);
    let s_x1 = sx1_l.max(0.0);
    let (mu1, mu2) = (setting.mu1, setting.mu2);
    let dm = hoeffding(x.n_total(), eps);
    let m_plus_1 = mu1.exp() / setting.p_mu1 * (x.m[0] + dm);
    let m_minus_2 = mu2.exp() / setting.p2() * (x.m[1] - dm);
    let v_x1 = (setting.tau(1) * (m_plus_1 - m_minus_2) / (mu1 - mu2)).max(0.0);

    let phi = if s_x1 <= 0.0 || s1 <= 0.0 {
        0.5
    } else {
        let ratio = v_x1 / s_x1;
        if ratio >= 0.5 {
            0.5
        } else {
            (ratio + gamma(eps, ratio, s1, s_x1)).clamp(0.0, 0.5)
        }
    };
    Ok(DecoyBounds {
        s0_lower: s0,
        s0_upper: s0_u,
        s1_lower: s1,
        s_x1_lower: s_x1,
        v_x1_upper: v_x1,
        phi_z_upper: phi,
    })
}

/// Extractable secret bits, floored at zero.
pub fn key_length(tally: &TallyBlock, bounds: &DecoyBounds, params: &SecurityParams) -> f64 {
    let n_z = tally.n.total(Basis::Z) as f64;
    let q_z = tally.basis_qber(Basis::Z);
    let raw = bounds.s0_lower + bounds.s1_lower * (1.0 - entropy(bounds.phi_z_upper))
        - params.f_ec * n_z * entropy(q_z.min(0.5))
        - params.penalty_bits();
    if q_z >= 0.5 {
        return 0.0;
    }
    raw.max(0.0)
}

/// Convenience wrapper: bounds then key length.
pub fn finite_key(tally: &TallyBlock, setting: &DecoySetting, params: &SecurityParams) -> Result<f64> {
    let bounds = decoy_bounds(tally, setting, params)?;
    Ok(key_length(tally, &bounds, params))
}

pub fn secret_key_rate(key_length_bits: f64, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    Ok(key_length_bits / duration_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: i32,
    pub mu1: f64,
    pub mu2: f64,
    pub q_z: [f64; 2],
    pub q_x: [f64; 2],
    pub key_length_bits: f64,
    pub skr_bits_per_s: f64,
    pub tally: TallyBlock,
}

impl ModeReport {
    pub fn from_tally(mode: i32, tally: TallyBlock, setting: &DecoySetting, params: &SecurityParams) -> Result<Self> {
        let key = finite_key(&tally, setting, params)?;
        Ok(ModeReport {
            mode,
            mu1: setting.mu1,
            mu2: setting.mu2,
            q_z: [tally.qber(Basis::Z, Intensity::Mu1), tally.qber(Basis::Z, Intensity::Mu2)],
            q_x: [tally.qber(Basis::X, Intensity::Mu1), tally.qber(Basis::X, Intensity::Mu2)],
            key_length_bits: key,
            skr_bits_per_s: secret_key_rate(key, tally.duration_s)?,
            tally,
        })
    }
}

/// Per-mode results and their space-division total.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub modes: Vec<ModeReport>,
    pub aggregate_skr: f64,
}

impl KeyRateReport {
    pub fn new(modes: Vec<ModeReport>) -> Self {
        let aggregate_skr = modes.iter().map(|m| m.skr_bits_per_s).sum();
        KeyRateReport { modes, aggregate_skr }
    }

    pub fn merge(self, other: KeyRateReport) -> KeyRateReport {
        let mut modes = self.modes;
        modes.extend(other.modes);
        KeyRateReport::new(modes)
    }

    /// Table layout: one column per mode, rows μ1, μ2, Q_Z(μ1), Q_Z(μ2), Q_X(μ1), Q_X(μ2).
    /// QBERs are in percent.
    pub fn qber_table_csv(&self) -> String {
        let mut out = String::from("quantity");
        for m in &self.modes {
            out.push_str(&format!(",{}", m.mode));
        }
        out.push('\n');
        let rows: [(&str, fn(&ModeReport) -> f64); 6] = [
            ("mu1", |m| m.mu1),
            ("mu2", |m| m.mu2),
            ("qber_z_mu1", |m| 100.0 * m.q_z[0]),
            ("qber_z_mu2", |m| 100.0 * m.q_z[1]),
            ("qber_x_mu1", |m| 100.0 * m.q_x[0]),
            ("qber_x_mu2", |m| 100.0 * m.q_x[1]),
        ];
        for (name, f) in rows {
            out.push_str(name);
            for m in &self.modes {
                out.push_str(&format!(",{}", f(m)));
            }
            out.push('\n');
        }
        out
    }

    pub fn skr_csv(&self) -> String {
        let mut out = String::from("mode,key_length_bits,duration_s,skr_bits_per_s\n");
        for m in &self.modes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.mode, m.key_length_bits, m.tally.duration_s, m.skr_bits_per_s
            ));
        }
        out.push_str(&format!("total,,,{}\n", self.aggregate_skr));
        out
    }
}

/// Parses [`KeyRateReport::qber_table_csv`] back into `(modes, rows)`.
pub fn parse_qber_table(text: &str) -> Result<(Vec<i32>, Vec<(String, Vec<f64>)>)> {
    let bad = |m: &str| Error::Decode(format!("qber table: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty"))?;
    let modes = header
        .split(',')
        .skip(1)
        .map(|s| s.parse::<i32>().map_err(|_| bad("mode")))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cells = line.split(',');
        let name = cells.next().ok_or_else(|| bad("row"))?.to_string();
        let values = cells
            .map(|s| s.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != modes.len() {
            return Err(bad("ragged row"));
        }
        rows.push((name, values));
    }
    Ok((modes, rows))
}

/// Search grid for the intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuGrid {
    pub step: f64,
    pub mu_max: f64,
}

impl Default for MuGrid {
    fn default() -> Self {
        MuGrid {
            step: 0.01,
            mu_max: 1.0,
        }
    }
}

impl MuGrid {
    /// Grid points with `0 < μ2 < μ1 ≤ mu_max`, ordered by μ1 then μ2.
    pub fn points(&self) -> Vec<(f64, f64)> {
        if !(self.step > 0.0) || !(self.mu_max > 0.0) || self.mu_max > 1.0 + 1e-12 {
            return Vec::new();
        }
        let count = (self.mu_max / self.step + 1e-9).floor() as usize;
        let value = |i: usize| ((i as f64 * self.step) * 1e9).round() / 1e9;
        let mut pts = Vec::new();
        for i in 1..=count {
            for j in 1..i {
                pts.push((value(i), value(j)));
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuOptimum {
    pub mu1: f64,
    pub mu2: f64,
    pub skr: f64,
    /// `(μ1, μ2, predicted rate)` for every grid point.
    pub surface: Vec<(f64, f64, f64)>,
}

impl MuOptimum {
    pub fn surface_csv(&self) -> String {
        let mut out = String::from("mu1,mu2,skr_bits_per_s\n");
        for (a, b, r) in &self.surface {
            out.push_str(&format!("{a},{b},{r}\n"));
        }
        out
    }
}

/// Predicted secret-key rate of an analytic expected tally.
pub fn predicted_rate(expected: &ExpectedTally, setting: &DecoySetting, params: &SecurityParams) -> f64 {
    let tally = expected.to_tally();
    match finite_key(&tally, setting, params) {
        Ok(bits) if tally.duration_s > 0.0 => bits / tally.duration_s,
        _ => 0.0,
    }
}

/// Exhaustive grid search for the intensities maximizing the predicted rate.
///
/// `model(μ1, μ2)` returns the analytic expected tally for one block. Ties
/// keep the earlier point, i.e. the smaller μ1 (then smaller μ2).
pub fn optimize_mu<F>(grid: &MuGrid, p_mu1: f64, params: &SecurityParams, model: F) -> Result<MuOptimum>
where
    F: Fn(f64, f64) -> Result<ExpectedTally> + Sync,
{
    use rayon::prelude::*;
    params.validate()?;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let surface = points
        .par_iter()
        .map(|&(mu1, mu2)| {
            let setting = DecoySetting::new(mu1, mu2, p_mu1)?;
            let expected = model(mu1, mu2)?;
            Ok((mu1, mu2, predicted_rate(&expected, &setting, params)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = surface[0];
    for &p in &surface[1..] {
        if p.2 > best.2 {
            best = p;
        }
    }
    Ok(MuOptimum {
        mu1: best.0,
        mu2: best.1,
        skr: best.2,
        surface,
    })
}
