//! Ring-core fiber channel, SLM demultiplexing and crosstalk estimation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emitter::{emit_field, power_ratio_db, ChipGeometry, EmitterField, HeaterState};
use crate::error::{Error, Result};

/// Complex amplitude per fiber mode, ordered like the fiber's mode set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    modes: Vec<i32>,
    amplitudes: Vec<Complex64>,
}

impl ModeVector {
    pub fn new(modes: Vec<i32>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if modes.len() != amplitudes.len() {
            return Err(Error::invalid(
                "amplitudes",
                format!("{} modes but {} amplitudes", modes.len(), amplitudes.len()),
            ));
        }
        check_distinct(&modes)?;
        Ok(ModeVector { modes, amplitudes })
    }

    /// Unit amplitude in `mode`, zero elsewhere.
    pub fn basis(modes: &[i32], mode: i32) -> Result<Self> {
        let idx = index_of(modes, mode)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); modes.len()];
        amplitudes[idx] = Complex64::new(1.0, 0.0);
        ModeVector::new(modes.to_vec(), amplitudes)
    }

    pub fn modes(&self) -> &[i32] {
        &self.modes
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, mode: i32) -> Result<Complex64> {
        Ok(self.amplitudes[index_of(&self.modes, mode)?])
    }

    pub fn total_power(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn index_of(modes: &[i32], mode: i32) -> Result<usize> {
    modes
        .iter()
        .position(|&m| m == mode)
        .ok_or(Error::ModeNotInSet(mode))
}

fn check_distinct(modes: &[i32]) -> Result<()> {
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(Error::DuplicatePort(*m));
        }
    }
    Ok(())
}

/// Linear map on the fiber modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTransferMatrix {
    matrix: DMatrix<Complex64>,
}

impl ModeTransferMatrix {
    pub fn identity(n: usize) -> Self {
        ModeTransferMatrix {
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("coupling", "matrix must be square"));
        }
        Ok(ModeTransferMatrix { matrix })
    }

    /// `exp(iεH)` for a Hermitian generator `H`, built from its eigendecomposition.
    pub fn from_generator(generator: &DMatrix<Complex64>, strength: f64) -> Result<Self> {
        if !generator.is_square() {
            return Err(Error::invalid("generator", "matrix must be square"));
        }
        let n = generator.nrows();
        let hermitian_gap = (generator - generator.adjoint()).norm();
        if hermitian_gap > 1e-12 * (1.0 + generator.norm()) {
            return Err(Error::invalid("generator", "matrix is not Hermitian"));
        }
        if strength == 0.0 || n == 0 {
            return Ok(ModeTransferMatrix::identity(n));
        }
        let eig = generator.clone().symmetric_eigen();
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|lambda| {
            Complex64::from_polar(1.0, strength * lambda)
        }));
        let v = &eig.eigenvectors;
        Ok(ModeTransferMatrix {
            matrix: v * phases * v.adjoint(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.matrix.clone().svd(false, false).singular_values.iter().copied().collect()
    }

    /// True when no singular value exceeds one (within `1e-12`).
    pub fn is_passive(&self) -> bool {
        self.singular_values().iter().all(|&s| s <= 1.0 + 1e-12)
    }
}

/// Seeded random Hermitian generator with zero diagonal and unit-variance
/// complex Gaussian off-diagonal entries.
pub fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in i + 1..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let z = Complex64::new(re, im) / 2f64.sqrt();
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberSpec {
    pub length_m: f64,
    pub loss_db: f64,
    mode_set: Vec<i32>,
    group_delay_ns: Vec<f64>,
    coupling: ModeTransferMatrix,
}

impl FiberSpec {
    pub fn new(
        length_m: f64,
        loss_db: f64,
        mode_set: Vec<i32>,
        group_delay_ns: Vec<f64>,
        coupling: ModeTransferMatrix,
    ) -> Result<Self> {
        if !(loss_db >= 0.0 && loss_db.is_finite()) {
            return Err(Error::invalid("loss_db", format!("must be non-negative, got {loss_db}")));
        }
        if !(length_m > 0.0 && length_m.is_finite()) {
            return Err(Error::invalid("length_m", format!("must be positive, got {length_m}")));
        }
        check_distinct(&mode_set)?;
        if group_delay_ns.len() != mode_set.len() || group_delay_ns.iter().any(|d| !d.is_finite())
        {
            return Err(Error::invalid(
                "group_delay_ns",
                "need one finite delay per mode",
            ));
        }
        if coupling.dim() != mode_set.len() {
            return Err(Error::invalid(
                "coupling",
                format!("dimension {} does not match {} modes", coupling.dim(), mode_set.len()),
            ));
        }
        Ok(FiberSpec {
            length_m,
            loss_db,
            mode_set,
            group_delay_ns,
            coupling,
        })
    }

    /// 800 m, 1 dB, no mode mixing, delays 1.5 ns apart in mode-set order.
    pub fn ideal(mode_set: Vec<i32>) -> Result<Self> {
        let n = mode_set.len();
        let delays = default_group_delays(n);
        FiberSpec::new(800.0, 1.0, mode_set, delays, ModeTransferMatrix::identity(n))
    }

    pub fn mode_set(&self) -> &[i32] {
        &self.mode_set
    }

    pub fn group_delay_ns(&self) -> &[f64] {
        &self.group_delay_ns
    }

    pub fn coupling(&self) -> &ModeTransferMatrix {
        &self.coupling
    }

    pub fn with_coupling(&self, coupling: ModeTransferMatrix) -> Result<Self> {
        FiberSpec::new(
            self.length_m,
            self.loss_db,
            self.mode_set.clone(),
            self.group_delay_ns.clone(),
            coupling,
        )
    }

    pub fn delay_of(&self, mode: i32) -> Result<f64> {
        Ok(self.group_delay_ns[index_of(&self.mode_set, mode)?])
    }
}

/// Group delays `0, 1.5, 3.0, …` ns.
pub fn default_group_delays(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.5 * i as f64).collect()
}

/// Azimuthal decomposition of the ring field onto `mode_set`.
pub fn project(field: &EmitterField, mode_set: &[i32]) -> Result<ModeVector> {
    let k = field.len() as i64;
    for &m in mode_set {
        if 2 * (m as i64).abs() >= k {
            return Err(Error::invalid(
                "mode_set",
                format!("|{m}| is not below K/2 for K = {k}"),
            ));
        }
    }
    let amplitudes = mode_set.iter().map(|&m| field.harmonic(m)).collect();
    ModeVector::new(mode_set.to_vec(), amplitudes)
}

/// Applies mode mixing and fiber loss; returns the output and per-mode delays in ns.
pub fn propagate(modes: &ModeVector, fiber: &FiberSpec) -> Result<(ModeVector, Vec<f64>)> {
    if modes.modes() != fiber.mode_set() {
        let stray = modes
            .modes()
            .iter()
            .find(|m| !fiber.mode_set().contains(m))
            .copied()
            .unwrap_or(modes.modes().first().copied().unwrap_or(0));
        return Err(Error::ModeNotInSet(stray));
    }
    let scale = 10f64.powf(-fiber.loss_db / 20.0);
    let input = nalgebra::DVector::from_column_slice(modes.amplitudes());
    let out = fiber.coupling().matrix() * input * Complex64::new(scale, 0.0);
    let output = ModeVector::new(modes.modes().to_vec(), out.iter().copied().collect())?;
    Ok((output, fiber.group_delay_ns().to_vec()))
}

/// SLM conversion of `target` back to a Gaussian and single-mode-fiber coupling.
pub fn demux_slm(modes: &ModeVector, target: i32, coupling_loss_db: f64) -> Result<Complex64> {
    let c = modes.amplitude(target)?;
    Ok(c * 10f64.powf(-coupling_loss_db / 20.0))
}

/// dB crosstalk, entry `(out m, in ℓ)`, normalized per input mode.
///
/// A `None` entry marks an input whose own mode received no power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    pub modes: Vec<i32>,
    pub db: Vec<Vec<Option<f64>>>,
}

impl CrosstalkMatrix {
    /// Builds the matrix from received powers `power[out][in]`.
    pub fn from_powers(modes: Vec<i32>, power: &[Vec<f64>]) -> Self {
        let n = modes.len();
        let mut db = vec![vec![None; n]; n];
        for j in 0..n {
            let own = power[j][j];
            if !(own > 0.0) {
                continue;
            }
            for i in 0..n {
                db[i][j] = Some(if i == j { 0.0 } else { power_ratio_db(power[i][j] / own) });
            }
        }
        CrosstalkMatrix { modes, db }
    }

    pub fn entry(&self, out: i32, input: i32) -> Result<Option<f64>> {
        let i = index_of(&self.modes, out)?;
        let j = index_of(&self.modes, input)?;
        Ok(self.db[i][j])
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.db.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(move |(j, _)| *j != i)
                .filter_map(|(_, v)| *v)
        })
    }

    /// Largest (least suppressed) off-diagonal entry.
    pub fn worst_off_diagonal(&self) -> Option<f64> {
        self.off_diagonal().reduce(f64::max)
    }

    /// Smallest (most suppressed) off-diagonal entry.
    pub fn best_off_diagonal(&self) -> Option<f64> {
        self.off_diagonal().reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("out\\in");
        for m in &self.modes {
            out.push_str(&format!(",{m}"));
        }
        out.push('\n');
        for (i, m) in self.modes.iter().enumerate() {
            out.push_str(&m.to_string());
            for v in &self.db[i] {
                match v {
                    Some(x) => out.push_str(&format!(",{x:.2}")),
                    None => out.push_str(",nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Decode(format!("crosstalk csv: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let modes = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<i32>().map_err(|_| bad("header mode")))
            .collect::<Result<Vec<_>>>()?;
        let mut db = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let out: i32 = cells
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| bad("row mode"))?;
            if modes.get(i) != Some(&out) {
                return Err(bad("row order does not match header"));
            }
            let row = cells
                .map(|c| match c.trim() {
                    "nan" => Ok(None),
                    s => s.parse::<f64>().map(Some).map_err(|_| bad("value")),
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != modes.len() {
                return Err(bad("ragged row"));
            }
            db.push(row);
        }
        if db.len() != modes.len() {
            return Err(bad("row count"));
        }
        Ok(CrosstalkMatrix { modes, db })
    }

    /// Same matrix with every value rounded to two decimals, as written to CSV.
    pub fn rounded(&self) -> Self {
        CrosstalkMatrix {
            modes: self.modes.clone(),
            db: self
                .db
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| v.map(|x| format!("{x:.2}").parse().unwrap()))
                        .collect()
                })
                .collect(),
        }
    }
}

/// Emitter, fiber and demultiplexer chained together.
#[derive(Debug, Clone)]
pub struct OpticalLink {
    pub geometry: ChipGeometry,
    pub heaters: HeaterState,
    pub fiber: FiberSpec,
    pub demux_loss_db: f64,
}

impl OpticalLink {
    /// Mode amplitudes at the fiber output when only `port` is driven with unit power.
    pub fn fiber_output(&self, port: i32) -> Result<ModeVector> {
        let field = emit_field(port, &self.geometry, &self.heaters, 1.0)?;
        let modes = project(&field, self.fiber.mode_set())?;
        Ok(propagate(&modes, &self.fiber)?.0)
    }

    /// Received power in each demultiplexed mode when only `port` is driven.
    pub fn demux_powers(&self, port: i32) -> Result<Vec<f64>> {
        let out = self.fiber_output(port)?;
        self.fiber
            .mode_set()
            .iter()
            .map(|&m| Ok(demux_slm(&out, m, self.demux_loss_db)?.norm_sqr()))
            .collect()
    }

    /// Fraction of the chip's emitted power that lands in each fiber mode
    /// before fiber loss, for a single driven `port`.
    pub fn mode_fractions(&self, port: i32) -> Result<Vec<f64>> {
        let field = emit_field(port, &self.geometry, &self.heaters, 1.0)?;
        let emitted = field.total_power();
        let modes = project(&field, self.fiber.mode_set())?;
        let lossless = self.fiber.coupling().matrix()
            * nalgebra::DVector::from_column_slice(modes.amplitudes());
        Ok(lossless.iter().map(|c| c.norm_sqr() / emitted).collect())
    }
}

/// Power-method crosstalk: drive one probe at a time and demultiplex every probe mode.
pub fn crosstalk_power(link: &OpticalLink, probe_modes: &[i32]) -> Result<CrosstalkMatrix> {
    if probe_modes.is_empty() {
        return Err(Error::EmptyTargets);
    }
    check_distinct(probe_modes)?;
    let n = probe_modes.len();
    let mut power = vec![vec![0.0; n]; n];
    for (j, &input) in probe_modes.iter().enumerate() {
        let out = link.fiber_output(input)?;
        for (i, &m) in probe_modes.iter().enumerate() {
            power[i][j] = demux_slm(&out, m, link.demux_loss_db)?.norm_sqr();
        }
    }
    Ok(CrosstalkMatrix::from_powers(probe_modes.to_vec(), &power))
}

/// Arrival record of a time-of-flight trace: `(time_ns, power)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub input: i32,
    pub arrivals: Vec<(f64, f64)>,
}

/// Ideal impulse response: one arrival per fiber mode at its group delay.
pub fn impulse_response(link: &OpticalLink, input: i32) -> Result<ImpulseResponse> {
    let out = link.fiber_output(input)?;
    let arrivals = out
        .amplitudes()
        .iter()
        .zip(link.fiber.group_delay_ns())
        .map(|(c, &d)| (d, c.norm_sqr()))
        .collect();
    Ok(ImpulseResponse { input, arrivals })
}

/// Spreads each arrival into `samples` equal-power points drawn from a
/// Gaussian pulse of RMS width `width_ns`, mimicking a detector histogram.
pub fn smear_response(
    response: &ImpulseResponse,
    width_ns: f64,
    samples: usize,
    seed: u64,
) -> ImpulseResponse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrivals = Vec::with_capacity(response.arrivals.len() * samples);
    for &(t, p) in &response.arrivals {
        for _ in 0..samples {
            let z: f64 = StandardNormal.sample(&mut rng);
            arrivals.push((t + width_ns * z, p / samples as f64));
        }
    }
    ImpulseResponse {
        input: response.input,
        arrivals,
    }
}

/// Time-of-flight crosstalk from histogrammed arrival traces.
///
/// `delays` lists the configured `(mode, group delay ns)` pairs. Every
/// histogram bin is credited to the mode whose delay is nearest its center,
/// provided that distance is under half the smallest delay separation.
pub fn crosstalk_time_of_flight(
    delays: &[(i32, f64)],
    responses: &[ImpulseResponse],
    bin_width_ns: f64,
) -> Result<CrosstalkMatrix> {
    if delays.is_empty() {
        return Err(Error::EmptyTargets);
    }
    if !(bin_width_ns > 0.0) {
        return Err(Error::invalid("bin_width", "must be positive"));
    }
    let modes: Vec<i32> = delays.iter().map(|d| d.0).collect();
    check_distinct(&modes)?;
    let mut min_sep = f64::INFINITY;
    for (i, &(a, ta)) in delays.iter().enumerate() {
        for &(b, tb) in &delays[i + 1..] {
            let sep = (ta - tb).abs();
            if sep <= 2.0 * bin_width_ns {
                return Err(Error::Unresolvable {
                    a,
                    b,
                    separation_ns: sep,
                    bin_width_ns,
                });
            }
            min_sep = min_sep.min(sep);
        }
    }
    let reach = if min_sep.is_finite() { min_sep / 2.0 } else { f64::INFINITY };
    let n = modes.len();
    let mut power = vec![vec![0.0; n]; n];
    for response in responses {
        let j = index_of(&modes, response.input)?;
        let mut histogram = std::collections::BTreeMap::<i64, f64>::new();
        for &(t, p) in &response.arrivals {
            *histogram.entry((t / bin_width_ns).floor() as i64).or_default() += p;
        }
        for (bin, p) in histogram {
            let center = (bin as f64 + 0.5) * bin_width_ns;
            let nearest = delays
                .iter()
                .enumerate()
                .map(|(i, &(_, d))| (i, (center - d).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, dist)) = nearest {
                if dist < reach {
                    power[i][j] += p;
                }
            }
        }
    }
    Ok(CrosstalkMatrix::from_powers(modes, &power))
}
