use mudloc::csi::PhaseCentering;
use mudloc::io::{read_dataset, read_json, write_dataset, write_json};
use mudloc::localizer::{evaluate, train, FeatureBank, LocalizerConfig, TrainedLocalizer};
use mudloc::synth::{make_benchmark, ChannelScenario};
use tempfile::TempDir;

#[test]
fn stored_dataset_and_model_reproduce_the_in_memory_run() {
    let mut s = ChannelScenario::reference(7, 6, 3).unwrap();
    s.subcarrier_indices.truncate(10);
    let ds = make_benchmark(&s, 30).unwrap();
    let tmp = TempDir::new().unwrap();
    write_dataset(tmp.path(), &ds).unwrap();
    let loaded = read_dataset(tmp.path()).unwrap();
    assert_eq!(loaded.manifest, ds.manifest);
    assert_eq!(loaded.traces, ds.traces);

    let config = LocalizerConfig::default();
    let model = train(&ds, &config).unwrap();
    let model_path = tmp.path().join("model.json");
    write_json(&model_path, &model).unwrap();
    let reloaded: TrainedLocalizer = read_json(&model_path).unwrap();
    assert_eq!(reloaded, model);

    let bank = FeatureBank::from_dataset(&loaded, PhaseCentering::default()).unwrap();
    let a = evaluate(&model, &bank, &ds.manifest, 1).unwrap();
    let b = evaluate(&reloaded, &bank, &ds.manifest, 1).unwrap();
    assert_eq!(a.scores, b.scores);
    assert!(a.scores.accuracy > 0.5);
}
