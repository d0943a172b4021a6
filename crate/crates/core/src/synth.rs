//! Deterministic multipath CSI generator with per-packet phase errors.
//!
//! Each AP-to-detector link is a sum of static environment paths plus a few
//! paths scattered by the subject, whose parameters depend on the cell the
//! subject occupies. Per packet the subject paths fluctuate through a small
//! latent motion state shared by all APs, the receiver applies an AGC gain,
//! white noise is added, and the receiver's packet-boundary, sampling and
//! carrier offsets rotate every antenna's phase identically.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::CsiTrace;
use crate::dataset::{Dataset, SplitRatios};
use crate::error::{Error, Result};
use crate::geometry::{GridGeometry, Point};

/// Receiver phase-error model: per-subcarrier error `k (l_pb + l_sf) + l_cf`
/// with `l_pb = 2 pi dtau / N_f`, `l_sf = 2 pi ratio T_s / T_u` and
/// `l_cf = 2 pi df T_s eta`; `dtau` and `eta` are redrawn every packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorParams {
    /// Packet-boundary detection delay range, in samples.
    pub pbd_delay_range: [f64; 2],
    /// `(T_r - T_t) / T_t`.
    pub sfo_ratio: f64,
    /// Carrier frequency offset `df`.
    pub cfo_hz: f64,
    pub fft_size: usize,
    /// Guard interval plus data symbol, `T_s`.
    pub symbol_total_s: f64,
    /// Data symbol, `T_u`.
    pub symbol_useful_s: f64,
    /// Range of the packet sampling time offset `eta`.
    pub packet_offset_range: [f64; 2],
}

impl Default for PhaseErrorParams {
    fn default() -> Self {
        Self {
            pbd_delay_range: [0.0, 4.0],
            sfo_ratio: 5e-5,
            cfo_hz: 20e3,
            fft_size: 64,
            symbol_total_s: 4e-6,
            symbol_useful_s: 3.2e-6,
            packet_offset_range: [0.0, 10.0],
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r.iter().all(|v| v.is_finite()) && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} range {r:?} is not ordered")))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

impl PhaseErrorParams {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 {
            return Err(Error::InvalidParameter("fft_size must be > 0".into()));
        }
        if !(self.symbol_total_s > 0.0 && self.symbol_useful_s > 0.0) {
            return Err(Error::InvalidParameter("symbol lengths must be > 0".into()));
        }
        if !(self.sfo_ratio.is_finite() && self.cfo_hz.is_finite()) {
            return Err(Error::InvalidParameter("offsets must be finite".into()));
        }
        check_range("pbd_delay", self.pbd_delay_range)?;
        check_range("packet_offset", self.packet_offset_range)
    }

    /// Draws `(slope, offset)` for one packet: the error on subcarrier `k`
    /// is `slope * k + offset`.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let dtau = uniform(rng, self.pbd_delay_range);
        let eta = uniform(rng, self.packet_offset_range);
        let l_pb = 2.0 * PI * dtau / self.fft_size as f64;
        let l_sf = 2.0 * PI * self.sfo_ratio * self.symbol_total_s / self.symbol_useful_s;
        let l_cf = 2.0 * PI * self.cfo_hz * self.symbol_total_s * eta;
        (l_pb + l_sf, l_cf)
    }
}

/// The 30 reported subcarrier indices of a 20 MHz channel, grouped by two.
pub fn grouped_subcarrier_indices() -> Vec<i32> {
    (-28..=-2)
        .step_by(2)
        .chain([-1, 1])
        .chain((3..=27).step_by(2))
        .chain([28])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub seed: u64,
    pub grid: GridGeometry,
    /// One per view; `M = ap_positions.len()`.
    pub ap_positions: Vec<Point>,
    pub detector_position: Point,
    /// Static environment paths per link.
    pub n_paths: usize,
    /// Subject-scattered paths per link.
    pub n_subject_paths: usize,
    /// Mean subject path power relative to the environment total.
    pub subject_power: f64,
    /// Relative per-packet fluctuation of the subject paths.
    pub subject_motion: f64,
    /// Dimension of the per-packet motion state shared by all APs.
    pub motion_dims: usize,
    /// Relative per-packet fluctuation of the environment paths, drawn
    /// independently for every AP (activity near one link only).
    pub environment_dynamics: f64,
    /// Standard deviation of the per-packet receiver gain, in dB.
    pub agc_jitter_db: f64,
    /// `None` disables noise.
    pub noise_snr_db: Option<f64>,
    pub subcarrier_spacing_hz: f64,
    pub center_freq_hz: f64,
    pub subcarrier_indices: Vec<i32>,
    pub n_tx: usize,
    pub n_rx: usize,
    pub delay_range_ns: [f64; 2],
    /// Decay constant of the exponential power-delay profile.
    pub delay_spread_ns: f64,
    /// `None` disables phase errors.
    pub error_model: Option<PhaseErrorParams>,
    /// Cells that reuse another cell's subject paths: `cell -> source`.
    pub cell_aliases: BTreeMap<u32, u32>,
    pub carrier_band: String,
}

impl ChannelScenario {
    /// Reference setup: 3x3 antennas, 30 grouped subcarriers at 5.32 GHz,
    /// APs spread on a circle around the grid.
    pub fn reference(seed: u64, n_cells: usize, n_aps: usize) -> Result<Self> {
        let grid = GridGeometry::reference(n_cells)?;
        let (lo, hi) = grid.bounds();
        let centre = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let ap_positions = (0..n_aps)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n_aps.max(1) as f64;
                [centre[0] + 3.0 * a.cos(), centre[1] + 3.0 * a.sin()]
            })
            .collect();
        Ok(Self {
            seed,
            grid,
            ap_positions,
            detector_position: [centre[0], lo[1] - 2.0],
            n_paths: 6,
            n_subject_paths: 3,
            subject_power: 0.3,
            subject_motion: 0.5,
            motion_dims: 3,
            environment_dynamics: 0.0,
            agc_jitter_db: 0.5,
            noise_snr_db: Some(20.0),
            subcarrier_spacing_hz: 312.5e3,
            center_freq_hz: 5.32e9,
            subcarrier_indices: grouped_subcarrier_indices(),
            n_tx: 3,
            n_rx: 3,
            delay_range_ns: [10.0, 100.0],
            delay_spread_ns: 30.0,
            error_model: Some(PhaseErrorParams::default()),
            cell_aliases: BTreeMap::new(),
            carrier_band: "5GHz".into(),
        })
    }

    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.subcarrier_indices.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_paths == 0 {
            return bad("n_paths must be >= 1");
        }
        if self.ap_positions.is_empty() {
            return bad("need at least one AP");
        }
        if self.subcarrier_indices.is_empty() || self.n_tx == 0 || self.n_rx == 0 {
            return bad("need at least one subcarrier and one antenna on each side");
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return bad("snr must be finite");
            }
        }
        let nonneg = [
            self.subject_power,
            self.subject_motion,
            self.environment_dynamics,
            self.agc_jitter_db,
            self.delay_spread_ns,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("power, motion, dynamics, jitter and spread must be finite and >= 0");
        }
        if self.subject_motion > 0.0 && self.motion_dims == 0 {
            return bad("subject motion needs motion_dims >= 1");
        }
        if !(self.subcarrier_spacing_hz.is_finite() && self.center_freq_hz.is_finite()) {
            return bad("frequencies must be finite");
        }
        check_range("delay", self.delay_range_ns)?;
        if self.delay_range_ns[0] < 0.0 {
            return bad("delays must be >= 0");
        }
        if let Some(e) = &self.error_model {
            e.validate()?;
        }
        for (&cell, &source) in &self.cell_aliases {
            for c in [cell, source] {
                if !self.grid.contains(c) {
                    return Err(Error::UnknownCell(c));
                }
            }
        }
        Ok(())
    }
}

// RNG stream domains.
const ENVIRONMENT: u32 = 1;
const SUBJECT: u32 = 2;
const MOTION: u32 = 3;
const RECEIVER: u32 = 4;

/// Independent stream for one key; order of generation never matters.
fn stream(seed: u64, domain: u32, cell: u32, ap: u32, extra: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&domain.to_le_bytes());
    key[12..16].copy_from_slice(&cell.to_le_bytes());
    key[16..20].copy_from_slice(&ap.to_le_bytes());
    key[20..28].copy_from_slice(&extra.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn complex_normal(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// One propagation path and its `S x L` response pattern.
struct Path {
    gain: Complex64,
    pattern: Array2<Complex64>,
}

fn draw_paths(
    scenario: &ChannelScenario,
    rng: &mut ChaCha8Rng,
    count: usize,
    total_power: f64,
) -> Vec<Path> {
    let params: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let tau = uniform(rng, scenario.delay_range_ns) * 1e-9;
            let aoa = rng.random_range(-PI / 2.0..PI / 2.0);
            let aod = rng.random_range(-PI / 2.0..PI / 2.0);
            (tau, aoa, aod)
        })
        .collect();
    let weights: Vec<f64> = params
        .iter()
        .map(|(tau, _, _)| {
            if scenario.delay_spread_ns > 0.0 {
                (-tau * 1e9 / scenario.delay_spread_ns).exp()
            } else {
                1.0
            }
        })
        .collect();
    let norm: f64 = weights.iter().sum();
    let (s_count, n_tx, n_rx) = (scenario.n_subcarriers(), scenario.n_tx, scenario.n_rx);
    params
        .iter()
        .zip(&weights)
        .map(|(&(tau, aoa, aod), w)| {
            let gain = complex_normal(rng, total_power * w / norm);
            // Half-wavelength arrays on both ends.
            let pattern = Array2::from_shape_fn((s_count, n_tx * n_rx), |(s, l)| {
                let (t, r) = (l / n_rx, l % n_rx);
                let f = scenario.center_freq_hz
                    + f64::from(scenario.subcarrier_indices[s]) * scenario.subcarrier_spacing_hz;
                let phase = -2.0 * PI * f * tau - PI * (r as f64 * aoa.sin() + t as f64 * aod.sin());
                Complex64::from_polar(1.0, phase)
            });
            Path { gain, pattern }
        })
        .collect()
}

/// Subject paths plus their complex loadings on the motion state.
struct SubjectPaths {
    paths: Vec<Path>,
    loadings: Vec<Vec<Complex64>>,
}

fn subject_paths(scenario: &ChannelScenario, cell: u32, ap: u32) -> SubjectPaths {
    let source = scenario.cell_aliases.get(&cell).copied().unwrap_or(cell);
    let mut rng = stream(scenario.seed, SUBJECT, source, ap, 0);
    let paths = draw_paths(scenario, &mut rng, scenario.n_subject_paths, scenario.subject_power);
    let k = scenario.motion_dims;
    let loadings = (0..paths.len())
        .map(|_| (0..k).map(|_| complex_normal(&mut rng, 1.0 / k as f64)).collect())
        .collect();
    SubjectPaths { paths, loadings }
}

/// Traces for every AP (ids `1..=M`) with the subject in `cell`.
pub fn generate(scenario: &ChannelScenario, cell: u32, n_packets: usize) -> Result<Vec<CsiTrace>> {
    scenario.validate()?;
    if !scenario.grid.contains(cell) {
        return Err(Error::UnknownCell(cell));
    }
    if n_packets == 0 {
        return Err(Error::InvalidParameter("n_packets must be >= 1".into()));
    }
    let mut motion_rng = stream(scenario.seed, MOTION, cell, 0, 0);
    let motion: Vec<Vec<f64>> = (0..n_packets)
        .map(|_| {
            (0..scenario.motion_dims)
                .map(|_| motion_rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    (1..=scenario.n_aps() as u32)
        .map(|ap| link_trace(scenario, cell, ap, &motion))
        .collect()
}

fn link_trace(scenario: &ChannelScenario, cell: u32, ap: u32, motion: &[Vec<f64>]) -> Result<CsiTrace> {
    let mut env_rng = stream(scenario.seed, ENVIRONMENT, 0, ap, 0);
    let env = draw_paths(scenario, &mut env_rng, scenario.n_paths, 1.0);
    let subject = subject_paths(scenario, cell, ap);

    let mut static_part = Array2::<Complex64>::zeros((scenario.n_subcarriers(), scenario.n_pairs()));
    for p in env.iter().chain(&subject.paths) {
        static_part.scaled_add(p.gain, &p.pattern);
    }
    let path_power: f64 = env
        .iter()
        .chain(&subject.paths)
        .map(|p| p.gain.norm_sqr())
        .sum();
    let noise_var = scenario
        .noise_snr_db
        .map(|snr| path_power / 10f64.powf(snr / 10.0));

    let mut rng = stream(scenario.seed, RECEIVER, cell, ap, 0);
    let packets = motion
        .iter()
        .map(|state| {
            let mut h = static_part.clone();
            if scenario.subject_motion > 0.0 {
                for (p, load) in subject.paths.iter().zip(&subject.loadings) {
                    let drift: Complex64 = load.iter().zip(state).map(|(l, u)| l * u).sum();
                    h.scaled_add(p.gain * drift * scenario.subject_motion, &p.pattern);
                }
            }
            if scenario.environment_dynamics > 0.0 {
                for p in &env {
                    let drift = complex_normal(&mut rng, 1.0);
                    h.scaled_add(p.gain * drift * scenario.environment_dynamics, &p.pattern);
                }
            }
            if scenario.agc_jitter_db > 0.0 {
                let db: f64 = rng.sample::<f64, _>(StandardNormal) * scenario.agc_jitter_db;
                h *= Complex64::from(10f64.powf(db / 20.0));
            }
            if let Some(var) = noise_var {
                h.mapv_inplace(|x| x + complex_normal(&mut rng, var));
            }
            if let Some(errors) = &scenario.error_model {
                let (slope, offset) = errors.draw(&mut rng);
                for (s, mut row) in h.rows_mut().into_iter().enumerate() {
                    let k = f64::from(scenario.subcarrier_indices[s]);
                    row *= Complex64::from_polar(1.0, slope * k + offset);
                }
            }
            h
        })
        .collect();
    CsiTrace::new(ap, Some(cell), packets, scenario.carrier_band.clone())
}

/// `traces[c][i]` is the trace of AP `i + 1` for the `c`-th cell in
/// ascending id order.
pub fn generate_all(scenario: &ChannelScenario, n_packets: usize) -> Result<Vec<Vec<CsiTrace>>> {
    scenario.validate()?;
    scenario
        .grid
        .cell_ids()
        .par_iter()
        .map(|&c| generate(scenario, c, n_packets))
        .collect()
}

/// Full labeled dataset over every cell and AP, split 6:2:2 per cell with
/// the scenario seed.
pub fn make_benchmark(scenario: &ChannelScenario, n_packets_per_cell: usize) -> Result<Dataset> {
    let traces = generate_all(scenario, n_packets_per_cell)?;
    Dataset::from_traces(
        scenario.grid.clone(),
        traces,
        scenario.n_tx,
        scenario.n_rx,
        Some(scenario.clone()),
        SplitRatios::default(),
        scenario.seed,
    )
}
