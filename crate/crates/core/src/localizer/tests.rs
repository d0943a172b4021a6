use ndarray::{array, Array1, Array2};

use super::*;
use crate::dataset::{Dataset, Split};
use crate::subspace::{average_variates, project};
use crate::synth::{make_benchmark, ChannelScenario};

/// Small benchmark: few subcarriers keep the pencils cheap.
fn small_scenario(seed: u64, n_cells: usize, n_aps: usize) -> ChannelScenario {
    let mut s = ChannelScenario::reference(seed, n_cells, n_aps).unwrap();
    s.subcarrier_indices.truncate(8);
    s
}

fn small_benchmark(seed: u64, n_cells: usize, n_aps: usize, packets: usize) -> (Dataset, FeatureBank) {
    let ds = make_benchmark(&small_scenario(seed, n_cells, n_aps), packets).unwrap();
    let bank = FeatureBank::from_dataset(&ds, PhaseCentering::default()).unwrap();
    (ds, bank)
}

fn fit(ds: &Dataset, bank: &FeatureBank, config: &LocalizerConfig) -> TrainedLocalizer {
    let views = config.view_ids(bank.n_aps()).unwrap();
    let f = bank.gather_split(&ds.manifest, &[Split::Train], &views).unwrap();
    train_features(&f, &ds.manifest.grid, bank.shape(), config).unwrap()
}

fn templates(vectors: Array2<f64>, cells: Vec<u32>) -> Templates {
    Templates { vectors, cells }
}

#[test]
fn query_equal_to_a_template_returns_its_cell() {
    let t = templates(array![[0.0, 1.0, 5.0], [0.0, 2.0, -1.0]], vec![3, 7, 9]);
    for (k, &c) in t.cells.iter().enumerate() {
        assert_eq!(t.nearest(&t.vectors.column(k).to_owned()).unwrap(), c);
    }
}

#[test]
fn equidistant_query_goes_to_smallest_cell() {
    let t = templates(array![[2.0, 0.0]], vec![8, 4]);
    assert_eq!(t.nearest(&array![1.0]).unwrap(), 4);
    let t = templates(array![[0.0, 2.0]], vec![4, 8]);
    assert_eq!(t.nearest(&array![1.0]).unwrap(), 4);
}

#[test]
fn nearest_rejects_wrong_dimension() {
    let t = templates(array![[0.0, 1.0]], vec![1, 2]);
    assert!(matches!(t.nearest(&array![0.0, 0.0]), Err(Error::ModelMismatch(_))));
}

#[test]
fn common_positive_scaling_keeps_the_winner() {
    let t = templates(array![[0.0, 1.0, 3.0], [1.0, -2.0, 0.5]], vec![1, 2, 3]);
    let q = array![0.9, -0.4];
    let before = t.nearest(&q).unwrap();
    for s in [1e-6, 0.3, 7.0, 1e5] {
        let scaled = templates(&t.vectors * s, t.cells.clone());
        assert_eq!(scaled.nearest(&(&q * s)).unwrap(), before);
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let g = GridGeometry::reference(4).unwrap();
    let s = score(&[1, 2, 3, 4], &[1, 2, 3, 4], &g).unwrap();
    assert_eq!(s.mean_distance_error, 0.0);
    assert_eq!(s.std_distance_error, 0.0);
    assert_eq!(s.accuracy, 1.0);
    assert_eq!(s.cdf, vec![(0.0, 1.0)]);
    for (i, row) in s.per_cell_confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, u64::from(i == j));
        }
    }
}

#[test]
fn adjacent_cell_predictions_score_one_pitch() {
    let g = GridGeometry::reference(4).unwrap();
    let s = score(&[1, 2, 3, 4], &[2, 1, 4, 3], &g).unwrap();
    assert!((s.mean_distance_error - 0.5).abs() < 1e-12);
    assert!(s.std_distance_error.abs() < 1e-12);
    assert_eq!(s.accuracy, 0.0);
    assert_eq!(s.per_cell_confusion[0][1], 1);
}

#[test]
fn uniform_guessing_matches_pairwise_distance_enumeration() {
    let g = GridGeometry::reference(6).unwrap();
    let cells = g.cell_ids();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for &t in &cells {
        for &p in &cells {
            truth.push(t);
            pred.push(p);
        }
    }
    let mut oracle = 0.0;
    for &t in &cells {
        let [tx, ty] = g.center(t).unwrap();
        for &p in &cells {
            let [px, py] = g.center(p).unwrap();
            oracle += ((tx - px).powi(2) + (ty - py).powi(2)).sqrt();
        }
    }
    oracle /= (cells.len() * cells.len()) as f64;
    let s = score(&truth, &pred, &g).unwrap();
    assert!((s.mean_distance_error - oracle).abs() < 1e-12);
    assert!((s.accuracy - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn cdf_is_monotone_and_ends_at_one() {
    let g = GridGeometry::reference(10).unwrap();
    let truth = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 1];
    let pred = [1, 3, 3, 9, 5, 1, 7, 8, 2, 10, 10];
    let s = score(&truth, &pred, &g).unwrap();
    assert_eq!(s.cdf.last().unwrap().1, 1.0);
    assert!(s.cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    let mean = s.distance_errors.iter().sum::<f64>() / s.distance_errors.len() as f64;
    assert!((s.mean_distance_error - mean).abs() < 1e-15);
    let total: u64 = s.per_cell_confusion.iter().flatten().sum();
    assert_eq!(total as usize, truth.len());
}

#[test]
fn score_rejects_bad_input() {
    let g = GridGeometry::reference(4).unwrap();
    assert!(score(&[1, 2], &[1], &g).is_err());
    assert!(score(&[], &[], &g).is_err());
    assert!(matches!(score(&[1], &[99], &g), Err(Error::UnknownCell(99))));
}

#[test]
fn predictions_match_brute_force_distances() {
    let (ds, bank) = small_benchmark(42, 6, 3, 40);
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let picks = bank.split_picks(&ds.manifest, &[Split::Test]).unwrap();
    let batches = bank.batches(&picks, &model.view_ids, 1).unwrap();
    assert!(!batches.is_empty());
    for b in &batches {
        // Recompute the MDFI by hand from the stored projections.
        let mut rows: Vec<f64> = Vec::new();
        for (state, raw) in [(&model.amplitude, &b.amplitude), (&model.phase, &b.phase)] {
            let state = state.as_ref().unwrap();
            let ModalityModel::Joint(sub) = &state.model else {
                panic!("joint model expected")
            };
            let z: Vec<Array2<f64>> = raw
                .iter()
                .zip(&state.normalization)
                .enumerate()
                .map(|(i, (x, p))| project(sub, i, &p.apply(x).unwrap()).unwrap())
                .collect();
            rows.extend(average_variates(&z).unwrap().column(0).iter());
        }
        let q = Array1::from(rows);
        let mut best = (f64::INFINITY, 0u32);
        for (col, &cell) in model.templates.vectors.columns().into_iter().zip(&model.templates.cells) {
            let d = (&col - &q).mapv(|v| v * v).sum().sqrt();
            if d < best.0 {
                best = (d, cell);
            }
        }
        assert_eq!(model.classify_images(&b.amplitude, &b.phase).unwrap(), best.1);
    }
}

#[test]
fn classify_from_traces_matches_images() {
    let (ds, bank) = small_benchmark(5, 4, 3, 20);
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let traces: Vec<_> = (0..3).map(|ap| ds.trace(2, ap).clone()).collect();
    let batch = TestBatch::from_traces(&model, &traces).unwrap();
    assert_eq!(batch.cell, Some(ds.cell_ids()[2]));
    assert_eq!(
        model.classify(&traces).unwrap(),
        model.classify_images(&batch.amplitude, &batch.phase).unwrap()
    );
    assert!(matches!(model.classify(&traces[..2]), Err(Error::ModelMismatch(_))));
}

#[test]
fn single_cell_training_is_rejected() {
    let (ds, bank) = small_benchmark(1, 2, 3, 20);
    let mut picks = bank.split_picks(&ds.manifest, &[Split::Train]).unwrap();
    picks[1].clear();
    let f = bank.gather(&picks, &[1, 2, 3]).unwrap();
    let err = train_features(&f, &ds.manifest.grid, bank.shape(), &LocalizerConfig::default());
    assert!(matches!(err, Err(Error::MissingCoverage(_))));
}

#[test]
fn uncovered_grid_cell_is_rejected() {
    let (ds, bank) = small_benchmark(1, 3, 3, 20);
    let mut picks = bank.split_picks(&ds.manifest, &[Split::Train]).unwrap();
    picks[2].clear();
    let f = bank.gather(&picks, &[1, 2, 3]).unwrap();
    let err = train_features(&f, &ds.manifest.grid, bank.shape(), &LocalizerConfig::default());
    assert!(matches!(err, Err(Error::MissingCoverage(_))));
}

#[test]
fn one_view_or_no_modality_is_rejected() {
    let (ds, bank) = small_benchmark(1, 3, 3, 20);
    let f = bank.gather_split(&ds.manifest, &[Split::Train], &[2]).unwrap();
    assert!(train_features(&f, &ds.manifest.grid, bank.shape(), &LocalizerConfig::default()).is_err());
    let bad = LocalizerConfig {
        views: vec![1, 1],
        ..Default::default()
    };
    assert!(bad.view_ids(3).is_err());
    assert!(LocalizerConfig { views: vec![4], ..Default::default() }.view_ids(3).is_err());
}

#[test]
fn two_separated_cells_classify_their_own_training_samples() {
    let mut s = small_scenario(11, 2, 2);
    s.grid = GridGeometry::rectangular(2, 2, 3.0).unwrap();
    s.noise_snr_db = None;
    let ds = make_benchmark(&s, 30).unwrap();
    let bank = FeatureBank::from_dataset(&ds, PhaseCentering::default()).unwrap();
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let norms: Vec<f64> = model
        .templates
        .vectors
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect();
    assert!((norms[0] - norms[1]).abs() > 0.0);
    let picks = bank.split_picks(&ds.manifest, &[Split::Train]).unwrap();
    for b in bank.batches(&picks, &[1, 2], 1).unwrap() {
        assert_eq!(model.classify_images(&b.amplitude, &b.phase).unwrap(), b.cell.unwrap());
    }
}

#[test]
fn noiseless_benchmark_is_classified_exactly() {
    let mut s = small_scenario(21, 6, 3);
    s.noise_snr_db = None;
    s.subject_motion = 0.0;
    s.agc_jitter_db = 0.0;
    let ds = make_benchmark(&s, 20).unwrap();
    let bank = FeatureBank::from_dataset(&ds, PhaseCentering::default()).unwrap();
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let report = evaluate(&model, &bank, &ds.manifest, 1).unwrap();
    assert_eq!(report.scores.accuracy, 1.0);
}

#[test]
fn training_is_deterministic_and_serializes() {
    let (ds, bank) = small_benchmark(3, 4, 3, 20);
    let a = fit(&ds, &bank, &LocalizerConfig::default());
    let b = fit(&ds, &bank, &LocalizerConfig::default());
    assert_eq!(a, b);
    let back: TrainedLocalizer = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);
    assert_eq!(train(&ds, &LocalizerConfig::default()).unwrap(), a);
}

#[test]
fn every_method_and_modality_trains_and_evaluates() {
    let (ds, bank) = small_benchmark(9, 4, 3, 20);
    for method in [Method::Gi2dca, Method::Gma, Method::Mcca, Method::PairwiseCca] {
        for modality in [ModalitySelection::Amplitude, ModalitySelection::Phase, ModalitySelection::Both] {
            let cfg = LocalizerConfig {
                method,
                modality,
                ..Default::default()
            };
            let model = fit(&ds, &bank, &cfg);
            assert_eq!(model.amplitude.is_some(), modality.amplitude());
            assert_eq!(model.phase.is_some(), modality.phase());
            let r = evaluate(&model, &bank, &ds.manifest, 1).unwrap();
            assert_eq!(r.method, method.name());
            assert_eq!(r.scores.n_estimates, 4 * ds.manifest.indices(1, Split::Test).unwrap().len());
        }
    }
}

#[test]
fn nearest_neighbor_templates_keep_every_training_column() {
    let (ds, bank) = small_benchmark(9, 3, 3, 20);
    let cfg = LocalizerConfig {
        template_mode: TemplateMode::NearestNeighbor,
        ..Default::default()
    };
    let model = fit(&ds, &bank, &cfg);
    let n_train: usize = bank
        .split_picks(&ds.manifest, &[Split::Train])
        .unwrap()
        .iter()
        .map(Vec::len)
        .sum();
    assert_eq!(model.templates.cells.len(), n_train);
}

#[test]
fn singleton_beta_grid_is_selected() {
    let (ds, bank) = small_benchmark(2, 3, 3, 20);
    let sel = select_beta(&bank, &ds.manifest, &LocalizerConfig::default(), &[7.0], 1).unwrap();
    assert_eq!(sel.beta, 7.0);
    assert_eq!(sel.scores.len(), 1);
    assert!(select_beta(&bank, &ds.manifest, &LocalizerConfig::default(), &[], 1).is_err());
    assert!(select_beta(&bank, &ds.manifest, &LocalizerConfig::default(), &[-1.0], 1).is_err());
}

#[test]
fn beta_ties_go_to_the_smaller_value() {
    let (ds, bank) = small_benchmark(2, 3, 3, 20);
    let sel = select_beta(&bank, &ds.manifest, &LocalizerConfig::default(), &[3.0, 3.0, 2.0, 2.0], 1).unwrap();
    assert_eq!(sel.scores[0].1, sel.scores[1].1);
    assert_eq!(sel.scores[2].1, sel.scores[3].1);
    let best = sel.scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let smallest_best = sel
        .scores
        .iter()
        .filter(|s| s.1 == best)
        .map(|s| s.0)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(sel.beta, smallest_best);
}

#[test]
fn selection_is_reproducible() {
    let (ds, bank) = small_benchmark(2, 3, 3, 20);
    let cfg = LocalizerConfig::default();
    let a = select_beta(&bank, &ds.manifest, &cfg, &DEFAULT_BETA_GRID, 4).unwrap();
    let b = select_beta(&bank, &ds.manifest, &cfg, &DEFAULT_BETA_GRID, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shared_signal_under_view_specific_clutter_favours_coupling() {
    // The cell signature is common to all APs while each AP also sees
    // strong independent clutter, so cross-view agreement carries the signal.
    let mut s = small_scenario(17, 6, 3);
    s.noise_snr_db = Some(5.0);
    s.subject_power = 0.1;
    s.environment_dynamics = 0.5;
    let ds = make_benchmark(&s, 15).unwrap();
    let bank = FeatureBank::from_dataset(&ds, PhaseCentering::default()).unwrap();
    let sel = select_beta(&bank, &ds.manifest, &LocalizerConfig::default(), &[0.0, 1.0, 10.0, 100.0], 3).unwrap();
    assert!(sel.beta > 0.0, "{sel:?}");
    let at_zero = sel.scores[0].1;
    let chosen = sel.scores.iter().find(|s| s.0 == sel.beta).unwrap().1;
    assert!(chosen <= at_zero);
}

#[test]
fn view_sweep_with_all_views_equals_plain_evaluation() {
    let (ds, bank) = small_benchmark(4, 4, 3, 20);
    let cfg = LocalizerConfig::default();
    let sweep = sweep_views(&bank, &ds.manifest, &cfg, &[2, 3], 1).unwrap();
    let full = evaluate(&fit(&ds, &bank, &cfg), &bank, &ds.manifest, 1).unwrap();
    assert_eq!(sweep[1].scores, full.scores);
    assert_eq!(sweep[0].views, vec![1, 2]);
    assert!(sweep_views(&bank, &ds.manifest, &cfg, &[4], 1).is_err());
}

#[test]
fn packet_sweep_matches_plain_evaluation() {
    let (ds, bank) = small_benchmark(4, 4, 3, 30);
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let n_test = ds.manifest.indices(1, Split::Test).unwrap().len();
    let sweep = sweep_packets(&model, &bank, &ds.manifest, &[1, n_test]).unwrap();
    assert_eq!(sweep[0].scores, evaluate(&model, &bank, &ds.manifest, 1).unwrap().scores);
    assert_eq!(sweep[1].scores.n_estimates, 4);
    assert_eq!(sweep[1].batch_size, n_test);
    assert!(sweep_packets(&model, &bank, &ds.manifest, &[n_test + 1]).is_err());
    assert!(sweep_packets(&model, &bank, &ds.manifest, &[0]).is_err());
}

#[test]
fn large_query_batches_are_supported() {
    // 3000 packets per cell leave 600 test packets: batches of 300 and 600.
    let (ds, bank) = small_benchmark(8, 3, 3, 3000);
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let sweep = sweep_packets(&model, &bank, &ds.manifest, &[300, 600]).unwrap();
    assert_eq!(sweep[0].scores.n_estimates, 6);
    assert_eq!(sweep[1].scores.n_estimates, 3);
    assert_eq!(sweep[1].scores.accuracy, 1.0);
}

/// Training accuracy when only view `v` is projected (no averaging).
fn single_view_training_accuracy(model: &TrainedLocalizer, f: &LabeledFeatures, v: usize) -> f64 {
    let mut blocks = Vec::new();
    for (state, raw) in [(&model.amplitude, &f.amplitude), (&model.phase, &f.phase)] {
        let state = state.as_ref().unwrap();
        let ModalityModel::Joint(sub) = &state.model else {
            panic!("joint model expected")
        };
        blocks.push(project(sub, v, &state.normalization[v].apply(&raw[v]).unwrap()).unwrap());
    }
    let z = ndarray::concatenate(ndarray::Axis(0), &[blocks[0].view(), blocks[1].view()]).unwrap();
    let t = Templates::build(&z, &f.labels, TemplateMode::Centroid);
    let hits = z
        .columns()
        .into_iter()
        .zip(f.labels.ids())
        .filter(|(c, &id)| t.nearest(&c.to_owned()).unwrap() == id)
        .count();
    hits as f64 / z.ncols() as f64
}

#[test]
fn averaging_views_beats_single_view_projections_on_training_data() {
    let (ds, bank) = small_benchmark(42, 8, 3, 60);
    let model = fit(&ds, &bank, &LocalizerConfig::default());
    let f = bank.gather_split(&ds.manifest, &[Split::Train], &model.view_ids).unwrap();
    let z = model.mdfi(&f.amplitude, &f.phase).unwrap();
    let hits = z
        .columns()
        .into_iter()
        .zip(f.labels.ids())
        .filter(|(c, &id)| model.templates.nearest(&c.to_owned()).unwrap() == id)
        .count();
    let acc = hits as f64 / z.ncols() as f64;
    for v in 0..3 {
        let single = single_view_training_accuracy(&model, &f, v);
        assert!(acc >= single, "view {v}: fused {acc} < single {single}");
    }
}

