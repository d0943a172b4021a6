use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;

use super::{train_features, FeatureBank, LocalizerConfig, ModalitySelection, TestBatch, TrainedLocalizer};

/// Repetitions behind the reported per-estimate time.
pub const TIMING_REPETITIONS: usize = 5;

/// Distance-error statistics of a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub n_estimates: usize,
    pub mean_distance_error: f64,
    /// Population standard deviation.
    pub std_distance_error: f64,
    pub accuracy: f64,
    /// `(error_m, fraction of estimates with error <= error_m)` over the
    /// distinct observed errors.
    pub cdf: Vec<(f64, f64)>,
    /// Row/column order of the confusion matrix.
    pub cells: Vec<u32>,
    /// `per_cell_confusion[true][predicted]`.
    pub per_cell_confusion: Vec<Vec<u64>>,
    pub distance_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub modality: ModalitySelection,
    pub views: Vec<u32>,
    pub beta: f64,
    pub batch_size: usize,
    #[serde(flatten)]
    pub scores: Scores,
    /// Median over repetitions of the wall time per estimate.
    pub timing_seconds_per_estimate: f64,
    pub timing_repetitions: usize,
}

/// Scores predictions against ground truth on `geometry`.
pub fn score(truth: &[u32], predicted: &[u32], geometry: &GridGeometry) -> Result<Scores> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} truths for {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientSamples("nothing to score".into()));
    }
    let cells = geometry.cell_ids();
    let index = |c: u32| cells.binary_search(&c).map_err(|_| Error::UnknownCell(c));
    let mut confusion = vec![vec![0u64; cells.len()]; cells.len()];
    let mut errors = Vec::with_capacity(truth.len());
    let mut hits = 0usize;
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[index(t)?][index(p)?] += 1;
        errors.push(if t == p { 0.0 } else { geometry.distance(t, p)? });
        hits += usize::from(t == p);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;

    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (k, e) in sorted.iter().enumerate() {
        let fraction = (k + 1) as f64 / n;
        match cdf.last_mut() {
            Some(last) if last.0 == *e => last.1 = fraction,
            _ => cdf.push((*e, fraction)),
        }
    }
    Ok(Scores {
        n_estimates: errors.len(),
        mean_distance_error: mean,
        std_distance_error: var.sqrt(),
        accuracy: hits as f64 / n,
        cdf,
        cells,
        per_cell_confusion: confusion,
        distance_errors: errors,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Classifies every batch (sequentially, so timings are per estimate) and
/// scores the result.
pub fn evaluate_features(model: &TrainedLocalizer, batches: &[TestBatch], batch_size: usize) -> Result<EvalReport> {
    let truth = batches
        .iter()
        .map(|b| b.cell.ok_or_else(|| Error::InvalidLabels("test batch without a cell label".into())))
        .collect::<Result<Vec<_>>>()?;
    for &t in &truth {
        if !model.geometry.contains(t) {
            return Err(Error::UnknownCell(t));
        }
    }
    let mut predicted = Vec::new();
    let mut per_estimate = Vec::with_capacity(TIMING_REPETITIONS);
    for rep in 0..TIMING_REPETITIONS {
        let start = Instant::now();
        let run = batches
            .iter()
            .map(|b| model.classify_images(&b.amplitude, &b.phase))
            .collect::<Result<Vec<_>>>()?;
        per_estimate.push(start.elapsed().as_secs_f64() / batches.len().max(1) as f64);
        if rep == 0 {
            predicted = run;
        }
    }
    Ok(EvalReport {
        method: model.config.method.name().to_owned(),
        modality: model.config.modality,
        views: model.view_ids.clone(),
        beta: model.beta_selected,
        batch_size,
        scores: score(&truth, &predicted, &model.geometry)?,
        timing_seconds_per_estimate: median(per_estimate),
        timing_repetitions: TIMING_REPETITIONS,
    })
}

/// Evaluates on the test split in consecutive batches of `batch_size`.
pub fn evaluate(
    model: &TrainedLocalizer,
    bank: &FeatureBank,
    manifest: &DatasetManifest,
    batch_size: usize,
) -> Result<EvalReport> {
    let picks = bank.split_picks(manifest, &[Split::Test])?;
    let batches = bank.batches(&picks, &model.view_ids, batch_size)?;
    evaluate_features(model, &batches, batch_size)
}

/// Retrains with the first `k` configured views for every `k` and
/// evaluates each model on the test split.
pub fn sweep_views(
    bank: &FeatureBank,
    manifest: &DatasetManifest,
    config: &LocalizerConfig,
    view_counts: &[usize],
    batch_size: usize,
) -> Result<Vec<EvalReport>> {
    let all = config.view_ids(bank.n_aps())?;
    view_counts
        .iter()
        .map(|&k| {
            if k > all.len() {
                return Err(Error::InvalidParameter(format!(
                    "{k} views requested, {} available",
                    all.len()
                )));
            }
            let cfg = LocalizerConfig {
                views: all[..k].to_vec(),
                ..config.clone()
            };
            let features = bank.gather_split(manifest, &[Split::Train], &cfg.views)?;
            let model = train_features(&features, &manifest.grid, bank.shape(), &cfg)?;
            evaluate(&model, bank, manifest, batch_size)
        })
        .collect()
}

/// Re-evaluates one model with test batches of each requested size.
pub fn sweep_packets(
    model: &TrainedLocalizer,
    bank: &FeatureBank,
    manifest: &DatasetManifest,
    packet_counts: &[usize],
) -> Result<Vec<EvalReport>> {
    packet_counts
        .iter()
        .map(|&n| evaluate(model, bank, manifest, n))
        .collect()
}
