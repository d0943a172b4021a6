use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::csi::{amplitude_image, phase_difference_image, AntennaLayout, CsiTrace, PhaseCentering};
use crate::dataset::{Dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::labels::ClassLabels;

use super::{InputShape, TrainedLocalizer};

/// Amplitude and phase images of one cell, one per AP.
type PerCellImages = (Vec<Array2<f64>>, Vec<Array2<f64>>);

/// Raw (unnormalized) feature images of every packet of a dataset.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    cells: Vec<u32>,
    n_aps: usize,
    shape: InputShape,
    /// `[cell][ap]`, all packets as columns.
    amplitude: Vec<Vec<Array2<f64>>>,
    phase: Vec<Vec<Array2<f64>>>,
}

/// Images and labels of a sample selection, one matrix per view.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub view_ids: Vec<u32>,
    pub amplitude: Vec<Array2<f64>>,
    pub phase: Vec<Array2<f64>>,
    pub labels: ClassLabels,
}

/// One online query: raw per-view images of a batch of packets.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBatch {
    pub cell: Option<u32>,
    pub amplitude: Vec<Array2<f64>>,
    pub phase: Vec<Array2<f64>>,
}

impl FeatureBank {
    pub fn from_dataset(dataset: &Dataset, centering: PhaseCentering) -> Result<Self> {
        dataset.validate()?;
        let m = &dataset.manifest;
        let layout = AntennaLayout::tx_major(m.n_tx, m.n_rx)?;
        let per_cell: Vec<PerCellImages> = dataset
            .traces
            .par_iter()
            .map(|per_ap| {
                let mut amp = Vec::with_capacity(per_ap.len());
                let mut phase = Vec::with_capacity(per_ap.len());
                for t in per_ap {
                    amp.push(amplitude_image(t)?.data);
                    phase.push(phase_difference_image(t, &layout, centering)?.data);
                }
                Ok((amp, phase))
            })
            .collect::<Result<_>>()?;
        let (amplitude, phase) = per_cell.into_iter().unzip();
        Ok(Self {
            cells: dataset.cell_ids(),
            n_aps: m.n_aps,
            shape: InputShape {
                n_subcarriers: m.n_subcarriers,
                n_tx: m.n_tx,
                n_rx: m.n_rx,
            },
            amplitude,
            phase,
        })
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn n_aps(&self) -> usize {
        self.n_aps
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    fn ap_index(&self, ap: u32) -> Result<usize> {
        if ap == 0 || ap as usize > self.n_aps {
            return Err(Error::InvalidParameter(format!(
                "AP {ap} not in 1..={}",
                self.n_aps
            )));
        }
        Ok(ap as usize - 1)
    }

    /// Columns `picks[c]` of the `c`-th cell for every requested view.
    pub fn gather(&self, picks: &[Vec<usize>], views: &[u32]) -> Result<LabeledFeatures> {
        if picks.len() != self.cells.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} packet selections for {} cells",
                picks.len(),
                self.cells.len()
            )));
        }
        let aps = views
            .iter()
            .map(|&v| self.ap_index(v))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<u32> = self
            .cells
            .iter()
            .zip(picks)
            .flat_map(|(&c, p)| std::iter::repeat_n(c, p.len()))
            .collect();
        let present: Vec<u32> = self
            .cells
            .iter()
            .zip(picks)
            .filter(|(_, p)| !p.is_empty())
            .map(|(&c, _)| c)
            .collect();
        if ids.is_empty() {
            return Err(Error::InsufficientSamples("sample selection is empty".into()));
        }
        let labels = ClassLabels::with_classes(ids, &present)?;
        let collect = |source: &Vec<Vec<Array2<f64>>>, ap: usize| -> Array2<f64> {
            let parts: Vec<Array2<f64>> = source
                .iter()
                .zip(picks)
                .map(|(per_ap, p)| per_ap[ap].select(Axis(1), p))
                .collect();
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("rows agree within a modality")
        };
        Ok(LabeledFeatures {
            view_ids: views.to_vec(),
            amplitude: aps.iter().map(|&a| collect(&self.amplitude, a)).collect(),
            phase: aps.iter().map(|&a| collect(&self.phase, a)).collect(),
            labels,
        })
    }

    /// Packets of every cell whose split is in `splits`.
    pub fn split_picks(&self, manifest: &DatasetManifest, splits: &[Split]) -> Result<Vec<Vec<usize>>> {
        self.cells
            .iter()
            .map(|&c| {
                let mut idx: Vec<usize> = Vec::new();
                for s in splits {
                    idx.extend(manifest.indices(c, *s)?);
                }
                idx.sort_unstable();
                Ok(idx)
            })
            .collect()
    }

    pub fn gather_split(
        &self,
        manifest: &DatasetManifest,
        splits: &[Split],
        views: &[u32],
    ) -> Result<LabeledFeatures> {
        self.gather(&self.split_picks(manifest, splits)?, views)
    }

    /// Consecutive batches of `batch_size` packets from each cell's
    /// selection; a trailing partial batch is dropped.
    pub fn batches(&self, picks: &[Vec<usize>], views: &[u32], batch_size: usize) -> Result<Vec<TestBatch>> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        let aps = views
            .iter()
            .map(|&v| self.ap_index(v))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::new();
        for (ci, (&cell, p)) in self.cells.iter().zip(picks).enumerate() {
            if p.is_empty() {
                continue;
            }
            if p.len() < batch_size {
                return Err(Error::InsufficientSamples(format!(
                    "cell {cell} has {} test packets, batch size is {batch_size}",
                    p.len()
                )));
            }
            for chunk in p.chunks_exact(batch_size) {
                out.push(TestBatch {
                    cell: Some(cell),
                    amplitude: aps
                        .iter()
                        .map(|&a| self.amplitude[ci][a].select(Axis(1), chunk))
                        .collect(),
                    phase: aps
                        .iter()
                        .map(|&a| self.phase[ci][a].select(Axis(1), chunk))
                        .collect(),
                });
            }
        }
        Ok(out)
    }
}

impl TestBatch {
    /// Images of one query batch; `traces[i]` must come from the model's
    /// `i`-th view.
    pub fn from_traces(model: &TrainedLocalizer, traces: &[CsiTrace]) -> Result<Self> {
        if traces.len() != model.n_views() {
            return Err(Error::ModelMismatch(format!(
                "model has {} views, got {} traces",
                model.n_views(),
                traces.len()
            )));
        }
        let layout = AntennaLayout::tx_major(model.n_tx, model.n_rx)?;
        let mut amplitude = Vec::with_capacity(traces.len());
        let mut phase = Vec::with_capacity(traces.len());
        let n = traces[0].n_packets();
        for (t, &ap) in traces.iter().zip(&model.view_ids) {
            if t.n_subcarriers() != model.n_subcarriers || t.n_pairs() != model.n_tx * model.n_rx {
                return Err(Error::ModelMismatch(format!(
                    "trace is {}x{}, model expects {}x{}",
                    t.n_subcarriers(),
                    t.n_pairs(),
                    model.n_subcarriers,
                    model.n_tx * model.n_rx
                )));
            }
            if t.ap_id() != ap {
                return Err(Error::ModelMismatch(format!(
                    "trace from AP {} where the model expects AP {ap}",
                    t.ap_id()
                )));
            }
            if t.n_packets() != n {
                return Err(Error::ModelMismatch("views carry different packet counts".into()));
            }
            if model.amplitude.is_some() {
                amplitude.push(amplitude_image(t)?.data);
            }
            if model.phase.is_some() {
                phase.push(phase_difference_image(t, &layout, model.config.phase_centering)?.data);
            }
        }
        Ok(Self {
            cell: traces[0].cell_id(),
            amplitude,
            phase,
        })
    }
}
