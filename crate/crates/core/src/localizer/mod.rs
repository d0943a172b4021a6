//! Offline training and online cell classification.
//!
//! Training turns every view's amplitude and phase-difference images into
//! normalized feature images, fits one multi-view model per modality,
//! averages the per-view canonical variates, stacks the two modalities
//! into the fused feature image and keeps one template per cell. A query
//! batch goes through the same transforms; its fused columns are averaged
//! and the nearest template by Euclidean distance wins.

mod eval;
mod features;
mod select;

pub use eval::{evaluate, evaluate_features, score, sweep_packets, sweep_views, EvalReport};
pub use features::{FeatureBank, LabeledFeatures, TestBatch};
pub use select::{select_beta, BetaSelection, DEFAULT_BETA_GRID};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::csi::{normalize_image, FeatureImage, Modality, NormalizationParams, PhaseCentering};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;
use crate::labels::ClassLabels;
use crate::linalg::RidgePolicy;
use crate::subspace::{
    average_variates, fit_cca, fit_gi2dca, fit_gma, fit_mcca, fuse_mdfi, project, BalanceParams,
    CouplingMode, FitOptions, MultiViewData, Retention, SubspaceModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gi2dca,
    Gma,
    Mcca,
    /// CCA on every view pair; each pair contributes its averaged variates.
    PairwiseCca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gi2dca => "gi2dca",
            Method::Gma => "gma",
            Method::Mcca => "mcca",
            Method::PairwiseCca => "cca-pairwise",
        }
    }

    /// Whether `beta` changes the fitted model.
    pub fn uses_beta(self) -> bool {
        matches!(self, Method::Gi2dca | Method::Gma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalitySelection {
    Amplitude,
    Phase,
    Both,
}

impl ModalitySelection {
    pub fn amplitude(self) -> bool {
        matches!(self, ModalitySelection::Amplitude | ModalitySelection::Both)
    }

    pub fn phase(self) -> bool {
        matches!(self, ModalitySelection::Phase | ModalitySelection::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateMode {
    /// One centroid per cell.
    #[default]
    Centroid,
    /// Every training column is a template.
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub method: Method,
    pub modality: ModalitySelection,
    /// AP ids to use, in order; empty means every AP of the dataset.
    pub views: Vec<u32>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub coupling: CouplingMode,
    pub retention: Retention,
    pub ridge: RidgePolicy,
    pub phase_centering: PhaseCentering,
    pub template_mode: TemplateMode,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Gi2dca,
            modality: ModalitySelection::Both,
            views: Vec::new(),
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            coupling: CouplingMode::ClassBlocks,
            retention: Retention::Auto,
            ridge: RidgePolicy::default(),
            phase_centering: PhaseCentering::default(),
            template_mode: TemplateMode::Centroid,
        }
    }
}

impl LocalizerConfig {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            ridge: self.ridge,
            retention: self.retention,
        }
    }

    fn balance(&self, n_views: usize) -> BalanceParams {
        BalanceParams::uniform(n_views, self.alpha, self.beta, self.gamma)
    }

    /// AP ids this config selects from a dataset with `n_aps` APs.
    pub fn view_ids(&self, n_aps: usize) -> Result<Vec<u32>> {
        if self.views.is_empty() {
            return Ok((1..=n_aps as u32).collect());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.views {
            if v == 0 || v as usize > n_aps || !seen.insert(v) {
                return Err(Error::InvalidParameter(format!(
                    "view list {:?} is not a set of AP ids in 1..={n_aps}",
                    self.views
                )));
            }
        }
        Ok(self.views.clone())
    }
}

/// CCA fitted on one pair of views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub first: usize,
    pub second: usize,
    pub model: SubspaceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityModel {
    Joint(SubspaceModel),
    Pairwise(Vec<PairModel>),
}

impl ModalityModel {
    pub fn rank(&self) -> usize {
        match self {
            ModalityModel::Joint(m) => m.rank(),
            ModalityModel::Pairwise(pairs) => pairs.iter().map(|p| p.model.rank()).sum(),
        }
    }

    /// Canonical variates of normalized views, averaged over views.
    pub fn transform(&self, views: &[Array2<f64>]) -> Result<Array2<f64>> {
        match self {
            ModalityModel::Joint(model) => {
                let z = views
                    .iter()
                    .enumerate()
                    .map(|(i, x)| project(model, i, x))
                    .collect::<Result<Vec<_>>>()?;
                average_variates(&z)
            }
            ModalityModel::Pairwise(pairs) => {
                let n = views.first().map_or(0, |v| v.ncols());
                let blocks = pairs
                    .iter()
                    .map(|p| {
                        let a = project(&p.model, 0, &views[p.first])?;
                        let b = project(&p.model, 1, &views[p.second])?;
                        average_variates(&[a, b])
                    })
                    .collect::<Result<Vec<_>>>()?;
                if blocks.is_empty() {
                    return Ok(Array2::zeros((0, n)));
                }
                let v: Vec<_> = blocks.iter().map(|b| b.view()).collect();
                ndarray::concatenate(Axis(0), &v).map_err(|e| Error::DimensionMismatch(e.to_string()))
            }
        }
    }
}

/// Normalization and fitted model of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityState {
    pub modality: Modality,
    /// One per view, in view order.
    pub normalization: Vec<NormalizationParams>,
    pub model: ModalityModel,
}

impl ModalityState {
    fn fit(
        modality: Modality,
        raw: &[Array2<f64>],
        labels: &ClassLabels,
        config: &LocalizerConfig,
    ) -> Result<Self> {
        let mut normalization = Vec::with_capacity(raw.len());
        let mut views = Vec::with_capacity(raw.len());
        for (i, x) in raw.iter().enumerate() {
            let img = FeatureImage {
                data: x.clone(),
                view: i as u32 + 1,
                modality,
                labels: None,
            };
            let (normed, params) = normalize_image(&img)?;
            views.push(normed.data);
            normalization.push(params);
        }
        let model = fit_modality(views, labels, config)?;
        Ok(Self {
            modality,
            normalization,
            model,
        })
    }

    /// Normalizes raw views with the training parameters and transforms.
    pub fn transform(&self, raw: &[Array2<f64>]) -> Result<Array2<f64>> {
        if raw.len() != self.normalization.len() {
            return Err(Error::ModelMismatch(format!(
                "model has {} views, input has {}",
                self.normalization.len(),
                raw.len()
            )));
        }
        let views = raw
            .iter()
            .zip(&self.normalization)
            .map(|(x, p)| p.apply(x))
            .collect::<Result<Vec<_>>>()?;
        self.model.transform(&views)
    }
}

fn fit_modality(views: Vec<Array2<f64>>, labels: &ClassLabels, config: &LocalizerConfig) -> Result<ModalityModel> {
    let m = views.len();
    let opts = config.fit_options();
    if config.method == Method::PairwiseCca {
        let mut pairs = Vec::new();
        for first in 0..m {
            for second in first + 1..m {
                let model = fit_cca(&views[first], &views[second], &opts)?;
                pairs.push(PairModel {
                    first,
                    second,
                    model,
                });
            }
        }
        return Ok(ModalityModel::Pairwise(pairs));
    }
    let data = MultiViewData::new(views, labels.clone())?;
    let model = match config.method {
        Method::Gi2dca => fit_gi2dca(&data, config.coupling, &config.balance(m), &opts)?,
        Method::Gma => fit_gma(&data, &config.balance(m), &opts)?,
        Method::Mcca => fit_mcca(&data, &opts)?,
        Method::PairwiseCca => unreachable!("handled above"),
    };
    Ok(ModalityModel::Joint(model))
}

/// Reference vectors the query is matched against, one column each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub vectors: Array2<f64>,
    /// Cell of each column.
    pub cells: Vec<u32>,
}

impl Templates {
    fn build(z: &Array2<f64>, labels: &ClassLabels, mode: TemplateMode) -> Self {
        match mode {
            TemplateMode::NearestNeighbor => Self {
                vectors: z.clone(),
                cells: labels.ids().to_vec(),
            },
            TemplateMode::Centroid => {
                let counts = labels.class_counts();
                let mut sums = Array2::zeros((z.nrows(), labels.n_classes()));
                for (col, k) in z.columns().into_iter().zip(labels.class_indices()) {
                    let mut target = sums.column_mut(k);
                    target += &col;
                }
                for (mut col, n) in sums.columns_mut().into_iter().zip(counts) {
                    col /= n as f64;
                }
                Self {
                    vectors: sums,
                    cells: labels.classes().to_vec(),
                }
            }
        }
    }

    /// Cell of the template closest to `z`; ties go to the smallest cell id.
    pub fn nearest(&self, z: &Array1<f64>) -> Result<u32> {
        if z.len() != self.vectors.nrows() {
            return Err(Error::ModelMismatch(format!(
                "query has dimension {}, templates {}",
                z.len(),
                self.vectors.nrows()
            )));
        }
        let mut best: Option<(f64, u32)> = None;
        for (col, &cell) in self.vectors.columns().into_iter().zip(&self.cells) {
            let d2: f64 = col.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            best = match best {
                Some((bd, bc)) if bd < d2 || (bd == d2 && bc <= cell) => Some((bd, bc)),
                _ => Some((d2, cell)),
            };
        }
        best.map(|(_, c)| c)
            .ok_or_else(|| Error::ModelMismatch("no templates".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLocalizer {
    pub config: LocalizerConfig,
    /// AP ids of the views, in model order.
    pub view_ids: Vec<u32>,
    pub n_subcarriers: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub amplitude: Option<ModalityState>,
    pub phase: Option<ModalityState>,
    pub templates: Templates,
    pub geometry: GridGeometry,
    pub beta_selected: f64,
}

/// Shape facts a model needs about its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub n_subcarriers: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

/// Fits a localizer on already extracted training features.
pub fn train_features(
    features: &LabeledFeatures,
    geometry: &GridGeometry,
    shape: InputShape,
    config: &LocalizerConfig,
) -> Result<TrainedLocalizer> {
    let m = features.view_ids.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "training needs at least 2 views, got {m}"
        )));
    }
    if !config.modality.amplitude() && !config.modality.phase() {
        return Err(Error::InvalidParameter("no modality selected".into()));
    }
    let labels = &features.labels;
    if labels.n_classes() < 2 {
        return Err(Error::MissingCoverage(format!(
            "training data covers {} cell(s); classification needs at least 2",
            labels.n_classes()
        )));
    }
    for &c in labels.classes() {
        if !geometry.contains(c) {
            return Err(Error::UnknownCell(c));
        }
    }
    let ids = geometry.cell_ids();
    if labels.classes() != ids.as_slice() {
        let missing: Vec<u32> = ids.iter().filter(|c| !labels.classes().contains(c)).copied().collect();
        return Err(Error::MissingCoverage(format!("no training samples for cells {missing:?}")));
    }
    if let Some((c, n)) = labels.classes().iter().zip(labels.class_counts()).find(|(_, n)| *n < 2) {
        return Err(Error::InsufficientSamples(format!(
            "cell {c} has {n} training sample(s), need at least 2"
        )));
    }

    let (amplitude, phase) = rayon::join(
        || {
            config
                .modality
                .amplitude()
                .then(|| ModalityState::fit(Modality::Amplitude, &features.amplitude, labels, config))
                .transpose()
        },
        || {
            config
                .modality
                .phase()
                .then(|| ModalityState::fit(Modality::PhaseDifference, &features.phase, labels, config))
                .transpose()
        },
    );
    let (amplitude, phase) = (amplitude?, phase?);
    let z = fused(amplitude.as_ref(), phase.as_ref(), &features.amplitude, &features.phase)?;
    Ok(TrainedLocalizer {
        config: config.clone(),
        view_ids: features.view_ids.clone(),
        n_subcarriers: shape.n_subcarriers,
        n_tx: shape.n_tx,
        n_rx: shape.n_rx,
        amplitude,
        phase,
        templates: Templates::build(&z, labels, config.template_mode),
        geometry: geometry.clone(),
        beta_selected: config.beta,
    })
}

fn fused(
    amplitude: Option<&ModalityState>,
    phase: Option<&ModalityState>,
    amp_raw: &[Array2<f64>],
    phase_raw: &[Array2<f64>],
) -> Result<Array2<f64>> {
    let n = amp_raw
        .first()
        .or(phase_raw.first())
        .map_or(0, |x| x.ncols());
    let z_amp = match amplitude {
        Some(s) => s.transform(amp_raw)?,
        None => Array2::zeros((0, n)),
    };
    let z_phase = match phase {
        Some(s) => s.transform(phase_raw)?,
        None => Array2::zeros((0, n)),
    };
    Ok(fuse_mdfi(&z_amp, &z_phase)?.data)
}

/// Trains on the training split of `dataset`.
pub fn train(dataset: &Dataset, config: &LocalizerConfig) -> Result<TrainedLocalizer> {
    let bank = FeatureBank::from_dataset(dataset, config.phase_centering)?;
    let views = config.view_ids(dataset.n_aps())?;
    let features = bank.gather_split(&dataset.manifest, &[Split::Train], &views)?;
    train_features(&features, &dataset.manifest.grid, bank.shape(), config)
}

impl TrainedLocalizer {
    pub fn n_views(&self) -> usize {
        self.view_ids.len()
    }

    /// Fused feature columns for raw per-view images.
    pub fn mdfi(&self, amp_raw: &[Array2<f64>], phase_raw: &[Array2<f64>]) -> Result<Array2<f64>> {
        fused(self.amplitude.as_ref(), self.phase.as_ref(), amp_raw, phase_raw)
    }

    /// Classifies a batch given as per-view raw feature images.
    pub fn classify_images(&self, amp_raw: &[Array2<f64>], phase_raw: &[Array2<f64>]) -> Result<u32> {
        let z = self.mdfi(amp_raw, phase_raw)?;
        let mean = z
            .mean_axis(Axis(1))
            .ok_or_else(|| Error::InsufficientSamples("empty query batch".into()))?;
        self.templates.nearest(&mean)
    }

    /// Classifies one batch of traces, one per model view in order.
    pub fn classify(&self, traces: &[crate::csi::CsiTrace]) -> Result<u32> {
        let batch = TestBatch::from_traces(self, traces)?;
        self.classify_images(&batch.amplitude, &batch.phase)
    }
}

#[cfg(test)]
mod tests;
