//! Labeled multi-view datasets: traces per (cell, AP), the manifest that
//! describes them, and the stratified train/validation/test assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::CsiTrace;
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::synth::ChannelScenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.6, 0.2, 0.2])
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "split ratios {:?} must be positive",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Integer counts for `n` samples by largest remainder; ties go to the
    /// earlier split.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let raw: Vec<f64> = self.0.iter().map(|r| r * n as f64).collect();
        let mut counts = [0usize; 3];
        for (c, r) in counts.iter_mut().zip(&raw) {
            *c = r.floor() as usize;
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &k in order.iter().take(n.saturating_sub(assigned)) {
            counts[k] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub grid: GridGeometry,
    pub n_aps: usize,
    pub n_subcarriers: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_cells: usize,
    pub packets_per_cell: BTreeMap<u32, usize>,
    /// Generator parameters for synthetic data.
    pub scenario: Option<ChannelScenario>,
    pub split_seed: u64,
    pub split_ratios: SplitRatios,
    /// Split of every packet, per cell.
    pub splits: BTreeMap<u32, Vec<Split>>,
}

impl DatasetManifest {
    pub fn n_pairs(&self) -> usize {
        self.n_tx * self.n_rx
    }

    /// Packet indices of `cell` assigned to `split`, ascending.
    pub fn indices(&self, cell: u32, split: Split) -> Result<Vec<usize>> {
        let splits = self.splits.get(&cell).ok_or(Error::UnknownCell(cell))?;
        Ok(splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(k, _)| k)
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "manifest schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.split_ratios.validate()?;
        let ids = self.grid.cell_ids();
        if ids.len() != self.n_cells {
            return Err(Error::MissingCoverage(format!(
                "grid has {} cells, manifest declares {}",
                ids.len(),
                self.n_cells
            )));
        }
        for c in &ids {
            let n = *self
                .packets_per_cell
                .get(c)
                .ok_or_else(|| Error::MissingCoverage(format!("no packet count for cell {c}")))?;
            let s = self
                .splits
                .get(c)
                .ok_or_else(|| Error::MissingCoverage(format!("no split for cell {c}")))?;
            if s.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "cell {c}: {} split entries for {n} packets",
                    s.len()
                )));
            }
        }
        if self.packets_per_cell.len() != ids.len() || self.splits.len() != ids.len() {
            return Err(Error::InvalidParameter("manifest lists cells outside the grid".into()));
        }
        Ok(())
    }
}

/// Stratified split: within each cell, packets are shuffled by a stream
/// keyed on `(seed, cell)` and cut by [`SplitRatios::counts`].
pub fn split_dataset(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut splits = BTreeMap::new();
    for (&cell, &n) in &manifest.packets_per_cell {
        if n < Split::ALL.len() {
            return Err(Error::InsufficientSamples(format!(
                "cell {cell} has {n} samples, fewer than {} splits",
                Split::ALL.len()
            )));
        }
        let counts = ratios.counts(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut cell_rng(seed, cell));
        let mut assignment = vec![Split::Train; n];
        let mut cursor = 0;
        for (split, count) in Split::ALL.iter().zip(counts) {
            for &k in &order[cursor..cursor + count] {
                assignment[k] = *split;
            }
            cursor += count;
        }
        splits.insert(cell, assignment);
    }
    Ok(DatasetManifest {
        split_seed: seed,
        split_ratios: ratios,
        splits,
        ..manifest.clone()
    })
}

pub(crate) fn cell_rng(seed: u64, cell: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&cell.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Traces plus manifest. `traces[c][i]` belongs to the `c`-th cell in
/// ascending id order and AP `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub traces: Vec<Vec<CsiTrace>>,
}

impl Dataset {
    /// Builds the manifest from the traces and assigns splits.
    pub fn from_traces(
        grid: GridGeometry,
        traces: Vec<Vec<CsiTrace>>,
        n_tx: usize,
        n_rx: usize,
        scenario: Option<ChannelScenario>,
        ratios: SplitRatios,
        split_seed: u64,
    ) -> Result<Self> {
        let ids = grid.cell_ids();
        let first = traces
            .first()
            .and_then(|t| t.first())
            .ok_or_else(|| Error::MissingCoverage("dataset has no traces".into()))?;
        let mut packets_per_cell = BTreeMap::new();
        for (c, per_ap) in ids.iter().zip(&traces) {
            packets_per_cell.insert(*c, per_ap.first().map_or(0, |t| t.n_packets()));
        }
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            n_aps: traces[0].len(),
            n_subcarriers: first.n_subcarriers(),
            n_tx,
            n_rx,
            n_cells: ids.len(),
            grid,
            packets_per_cell,
            scenario,
            split_seed,
            split_ratios: ratios,
            splits: BTreeMap::new(),
        };
        let manifest = split_dataset(&manifest, ratios, split_seed)?;
        let ds = Self { manifest, traces };
        ds.validate()?;
        Ok(ds)
    }

    pub fn cell_ids(&self) -> Vec<u32> {
        self.manifest.grid.cell_ids()
    }

    pub fn n_aps(&self) -> usize {
        self.manifest.n_aps
    }

    pub fn trace(&self, cell_index: usize, ap_index: usize) -> &CsiTrace {
        &self.traces[cell_index][ap_index]
    }

    /// Checks that traces and manifest agree.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        let ids = m.grid.cell_ids();
        if self.traces.len() != ids.len() {
            return Err(Error::MissingCoverage(format!(
                "{} cells of traces for {} grid cells",
                self.traces.len(),
                ids.len()
            )));
        }
        for (c, per_ap) in ids.iter().zip(&self.traces) {
            if per_ap.len() != m.n_aps {
                return Err(Error::MissingCoverage(format!(
                    "cell {c} has {} APs, expected {}",
                    per_ap.len(),
                    m.n_aps
                )));
            }
            for (i, t) in per_ap.iter().enumerate() {
                let ok = t.cell_id() == Some(*c)
                    && t.ap_id() as usize == i + 1
                    && t.n_subcarriers() == m.n_subcarriers
                    && t.n_pairs() == m.n_pairs()
                    && t.n_packets() == m.packets_per_cell[c];
                if !ok {
                    return Err(Error::ModelMismatch(format!(
                        "trace for cell {c}, AP {} disagrees with the manifest",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}
