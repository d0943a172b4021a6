//! CSI domain types and the preprocessing that turns complex per-packet
//! channel matrices into real-valued feature images.
//!
//! A [`CsiTrace`] stores one S×L complex matrix per packet (S subcarriers,
//! L Tx-Rx antenna pairs). Feature images put one packet per column; rows
//! are stacked per antenna pair, subcarrier-fastest.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassLabels;

/// Complex CSI captured by one detecting point from one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTrace {
    ap_id: u32,
    cell_id: Option<u32>,
    packets: Vec<Array2<Complex64>>,
    carrier_band: String,
}

impl CsiTrace {
    pub fn new(
        ap_id: u32,
        cell_id: Option<u32>,
        packets: Vec<Array2<Complex64>>,
        carrier_band: impl Into<String>,
    ) -> Result<Self> {
        let first = packets
            .first()
            .ok_or_else(|| Error::InvalidTrace("packet list is empty".into()))?;
        let shape = first.dim();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidTrace(format!(
                "packet shape {}x{} has an empty axis",
                shape.0, shape.1
            )));
        }
        if let Some((j, p)) = packets.iter().enumerate().find(|(_, p)| p.dim() != shape) {
            return Err(Error::InvalidTrace(format!(
                "packet {j} has shape {:?}, expected {:?}",
                p.dim(),
                shape
            )));
        }
        if ap_id == 0 {
            return Err(Error::InvalidTrace("ap_id is 1-based".into()));
        }
        if cell_id == Some(0) {
            return Err(Error::InvalidTrace("cell_id is 1-based".into()));
        }
        Ok(Self {
            ap_id,
            cell_id,
            packets,
            carrier_band: carrier_band.into(),
        })
    }

    pub fn ap_id(&self) -> u32 {
        self.ap_id
    }

    pub fn cell_id(&self) -> Option<u32> {
        self.cell_id
    }

    pub fn packets(&self) -> &[Array2<Complex64>] {
        &self.packets
    }

    pub fn carrier_band(&self) -> &str {
        &self.carrier_band
    }

    pub fn n_packets(&self) -> usize {
        self.packets.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.packets[0].nrows()
    }

    pub fn n_pairs(&self) -> usize {
        self.packets[0].ncols()
    }

    /// Trace holding only the packets at `indices`, in that order.
    pub fn select_packets(&self, indices: &[usize]) -> Result<Self> {
        let packets = indices
            .iter()
            .map(|&j| {
                self.packets.get(j).cloned().ok_or_else(|| {
                    Error::InvalidTrace(format!(
                        "packet index {j} out of range ({} packets)",
                        self.packets.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.ap_id, self.cell_id, packets, self.carrier_band.clone())
    }

    /// Same packets with the cell label removed (an online query).
    pub fn unlabeled(&self) -> Self {
        Self {
            cell_id: None,
            ..self.clone()
        }
    }
}

/// Which physical quantity a feature image carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Amplitude,
    PhaseDifference,
}

/// Real feature matrix, one column per packet sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub data: Array2<f64>,
    pub view: u32,
    pub modality: Modality,
    pub labels: Option<ClassLabels>,
}

impl FeatureImage {
    pub fn n_features(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Concatenates images of one view and modality column-wise, keeping
    /// labels when every part is labeled.
    pub fn concat(parts: &[FeatureImage]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no images to concatenate".into()))?;
        for p in parts {
            if p.view != first.view || p.modality != first.modality {
                return Err(Error::DimensionMismatch(
                    "concatenated images must share view and modality".into(),
                ));
            }
            if p.n_features() != first.n_features() {
                return Err(Error::DimensionMismatch(format!(
                    "feature dimension {} vs {}",
                    p.n_features(),
                    first.n_features()
                )));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let labels = if parts.iter().all(|p| p.labels.is_some()) {
            let ids = parts
                .iter()
                .flat_map(|p| p.labels.as_ref().unwrap().ids().iter().copied())
                .collect();
            Some(ClassLabels::new(ids)?)
        } else {
            None
        };
        Ok(Self {
            data,
            view: first.view,
            modality: first.modality,
            labels,
        })
    }
}

/// Mapping from packet-matrix columns to (tx, rx) antenna indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntennaLayout {
    n_tx: usize,
    n_rx: usize,
    pair_order: Vec<(usize, usize)>,
}

impl AntennaLayout {
    pub fn new(n_tx: usize, n_rx: usize, pair_order: Vec<(usize, usize)>) -> Result<Self> {
        if n_tx == 0 || n_rx == 0 {
            return Err(Error::InvalidLayout("antenna counts must be positive".into()));
        }
        if pair_order.len() != n_tx * n_rx {
            return Err(Error::InvalidLayout(format!(
                "{} pairs listed for a {n_tx}x{n_rx} array",
                pair_order.len()
            )));
        }
        let mut seen = vec![false; n_tx * n_rx];
        for &(t, r) in &pair_order {
            if t >= n_tx || r >= n_rx {
                return Err(Error::InvalidLayout(format!("pair ({t},{r}) out of range")));
            }
            let slot = &mut seen[t * n_rx + r];
            if *slot {
                return Err(Error::InvalidLayout(format!("pair ({t},{r}) listed twice")));
            }
            *slot = true;
        }
        Ok(Self {
            n_tx,
            n_rx,
            pair_order,
        })
    }

    /// Tx-major ordering: column `t * n_rx + r` holds pair (t, r).
    pub fn tx_major(n_tx: usize, n_rx: usize) -> Result<Self> {
        let order = (0..n_tx)
            .flat_map(|t| (0..n_rx).map(move |r| (t, r)))
            .collect();
        Self::new(n_tx, n_rx, order)
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_order.len()
    }

    pub fn pair_order(&self) -> &[(usize, usize)] {
        &self.pair_order
    }

    /// Packet-matrix column holding pair (tx, rx).
    pub fn column_of(&self, tx: usize, rx: usize) -> usize {
        self.pair_order
            .iter()
            .position(|&p| p == (tx, rx))
            .expect("pair present in a validated layout")
    }

    /// Number of adjacent receive pairs, `n_tx * (n_rx - 1)`.
    pub fn n_phase_pairs(&self) -> usize {
        self.n_tx * self.n_rx.saturating_sub(1)
    }
}

fn check_finite(trace: &CsiTrace) -> Result<()> {
    for (j, p) in trace.packets().iter().enumerate() {
        for ((s, l), h) in p.indexed_iter() {
            if !h.re.is_finite() || !h.im.is_finite() {
                return Err(Error::NonFiniteCsi {
                    packet: j,
                    subcarrier: s,
                    pair: l,
                });
            }
        }
    }
    Ok(())
}

/// Amplitude feature image: entry `(s + S*l, j)` is `|h|` of subcarrier `s`,
/// pair `l`, packet `j`.
pub fn amplitude_image(trace: &CsiTrace) -> Result<FeatureImage> {
    check_finite(trace)?;
    let s_count = trace.n_subcarriers();
    let l_count = trace.n_pairs();
    let mut data = Array2::zeros((s_count * l_count, trace.n_packets()));
    for (j, p) in trace.packets().iter().enumerate() {
        for l in 0..l_count {
            for s in 0..s_count {
                data[[s + s_count * l, j]] = p[[s, l]].norm();
            }
        }
    }
    Ok(FeatureImage {
        data,
        view: trace.ap_id(),
        modality: Modality::Amplitude,
        labels: trace_labels(trace)?,
    })
}

fn trace_labels(trace: &CsiTrace) -> Result<Option<ClassLabels>> {
    trace
        .cell_id()
        .map(|c| ClassLabels::new(vec![c; trace.n_packets()]))
        .transpose()
}

/// How the wrapped phase differences are shifted to zero mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseCentering {
    /// Every feature row is shifted to zero mean across the packets of the
    /// trace.
    AcrossPackets,
    /// Within every packet, each antenna pair's differences are shifted to
    /// zero mean across subcarriers. Keeps single-packet queries usable.
    #[default]
    AcrossSubcarriers,
}

/// Phase-difference feature image over adjacent receive antennas.
///
/// For each transmit antenna `t` and receive pair `(r, r+1)`, row
/// `s + S*(t*(n_rx-1) + r)` holds `angle(h[t,r] * conj(h[t,r+1]))` in
/// `(-pi, pi]`, then shifted to zero mean per `centering`.
pub fn phase_difference_image(
    trace: &CsiTrace,
    layout: &AntennaLayout,
    centering: PhaseCentering,
) -> Result<FeatureImage> {
    if layout.n_rx() < 2 {
        return Err(Error::TooFewReceiveAntennas(layout.n_rx()));
    }
    if layout.n_pairs() != trace.n_pairs() {
        return Err(Error::DimensionMismatch(format!(
            "layout has {} pairs, trace has {}",
            layout.n_pairs(),
            trace.n_pairs()
        )));
    }
    check_finite(trace)?;
    let s_count = trace.n_subcarriers();
    let n_rx = layout.n_rx();
    let mut columns = Vec::with_capacity(layout.n_phase_pairs());
    for t in 0..layout.n_tx() {
        for r in 0..n_rx - 1 {
            columns.push((layout.column_of(t, r), layout.column_of(t, r + 1)));
        }
    }
    let mut data = Array2::zeros((s_count * columns.len(), trace.n_packets()));
    for (j, p) in trace.packets().iter().enumerate() {
        for (pi, &(a, b)) in columns.iter().enumerate() {
            for s in 0..s_count {
                let (ha, hb) = (p[[s, a]], p[[s, b]]);
                for (h, l) in [(ha, a), (hb, b)] {
                    if h.re == 0.0 && h.im == 0.0 {
                        return Err(Error::ZeroMagnitude {
                            packet: j,
                            subcarrier: s,
                            pair: l,
                        });
                    }
                }
                data[[s + s_count * pi, j]] = wrap_phase((ha * hb.conj()).arg());
            }
        }
    }
    match centering {
        PhaseCentering::AcrossPackets => {
            let means = data.mean_axis(Axis(1)).expect("at least one packet");
            for (mut row, m) in data.rows_mut().into_iter().zip(means.iter()) {
                row -= *m;
            }
        }
        PhaseCentering::AcrossSubcarriers => {
            for mut col in data.columns_mut() {
                for pi in 0..columns.len() {
                    let mut block = col.slice_mut(ndarray::s![pi * s_count..(pi + 1) * s_count]);
                    let m = block.sum() / s_count as f64;
                    block -= m;
                }
            }
        }
    }
    Ok(FeatureImage {
        data,
        view: trace.ap_id(),
        modality: Modality::PhaseDifference,
        labels: trace_labels(trace)?,
    })
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    use std::f64::consts::PI;
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Per-row affine map fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Rows with zero variance; they are centered but not rescaled.
    pub constant_rows: Vec<usize>,
}

impl NormalizationParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        if data.nrows() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "normalization fitted on {} rows, input has {}",
                self.dim(),
                data.nrows()
            )));
        }
        let mut out = data.clone();
        for ((mut row, m), s) in out.rows_mut().into_iter().zip(&self.mean).zip(&self.scale) {
            row.mapv_inplace(|x| (x - m) / s);
        }
        Ok(out)
    }
}

/// Rows to zero mean and unit population variance.
pub fn normalize_image(img: &FeatureImage) -> Result<(FeatureImage, NormalizationParams)> {
    let n = img.n_samples();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "normalization needs at least 2 columns, got {n}"
        )));
    }
    if img.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("feature image has non-finite entries".into()));
    }
    let mean: Array1<f64> = img.data.mean_axis(Axis(1)).expect("n >= 2");
    let mut scale = Vec::with_capacity(mean.len());
    let mut constant_rows = Vec::new();
    for (i, (row, m)) in img.data.rows().into_iter().zip(mean.iter()).enumerate() {
        let var = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * m.abs().max(1.0) {
            constant_rows.push(i);
            scale.push(1.0);
        } else {
            scale.push(sd);
        }
    }
    let params = NormalizationParams {
        mean: mean.to_vec(),
        scale,
        constant_rows,
    };
    let data = params.apply(&img.data)?;
    Ok((
        FeatureImage {
            data,
            view: img.view,
            modality: img.modality,
            labels: img.labels.clone(),
        },
        params,
    ))
}
